"""Command-line front end: train, eval, map, synth, split.

Every verb reads a JSON run configuration.  Relative paths inside it are
resolved against the config file's directory.  Exit codes: 0 success,
2 configuration or input error, 3 I/O or file-format error, 4 numerical
failure.  Failures print one line ``error[<category>]: <message>``.
"""

import argparse
import hashlib
from importlib import metadata
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager

import jsonschema
import numpy as np

from . import _accel, hsidata, metrics, network
from .errors import DegenerateInput, DrddlError, FormatError, IoError, NumericalError
from .layers import RobustTrainConfig, train_dense_layer, train_robust_layer
from .solvers import IstaConfig

log = logging.getLogger("drddl")

__version__ = "0.1.0"

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "DRDDL_OUTPUT_ROOT"
LOCK_NAME = ".drddl.lock"

# class 0 is black; class c >= 1 takes PALETTE[(c - 1) % 16]
PALETTE = np.array([
    (0, 0, 0),
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)

_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cube", "labels"],
            "properties": {
                "cube": {"type": "string"},
                "data": {"type": "string"},
                "labels": {"type": "string"},
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(hsidata.PRESETS)},
                "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "file": {"type": "string"},
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "arch": {"type": "array", "items": _POS_INT, "minItems": 1},
        "lambda": {"type": "number", "minimum": 0},
        "mu": _POS_NUM,
        "activation": {"enum": ["identity", "tanh", "sigmoid"]},
        "features": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["raw", "patch+pca"]},
                "patch_w": _POS_INT,
                "pca_k": _POS_INT,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "robust_mu": _POS_NUM,
                "robust_iters": _POS_INT,
                "robust_tol": _POS_NUM,
                "dense_iters": _POS_INT,
                "final_iters": _POS_INT,
                "ista_iters": _POS_INT,
                "ista_tol": {"type": "number", "minimum": 0},
                "irls_iters": _POS_INT,
                "irls_eps": _POS_NUM,
                "code_scaling": {"type": "boolean"},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m": _POS_INT,
                "k": _POS_INT,
                "n": _POS_INT,
                "sigma": {"type": "number", "minimum": 0},
                "spike_frac": {"type": "number", "minimum": 0, "maximum": 1},
                "spike_mag": {"type": "number", "minimum": 0},
                "seeds": _POS_INT,
                "dense_iters": _POS_INT,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

SYNTH_REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["settings", "runs", "wins", "seeds", "win_rate"],
    "properties": {
        "settings": {"type": "object"},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["seed", "robust_error", "dense_error", "robust_wins"],
                "properties": {
                    "seed": {"type": "integer"},
                    "robust_error": {"type": "number", "minimum": 0},
                    "dense_error": {"type": "number", "minimum": 0},
                    "robust_wins": {"type": "boolean"},
                },
            },
        },
        "wins": {"type": "integer", "minimum": 0},
        "seeds": {"type": "integer", "minimum": 1},
        "win_rate": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

SYNTH_DEFAULTS = {"m": 20, "k": 5, "n": 100, "sigma": 0.01, "spike_frac": 0.01,
                  "spike_mag": 10.0, "seeds": 10, "dense_iters": 30}


class ConfigError(DrddlError, ValueError):
    """Invalid or incomplete run configuration."""


# ---------------------------------------------------------------- config

class RunConfig:
    def __init__(self, raw, base_dir, path):
        self.raw = raw
        self.base_dir = base_dir
        self.path = path

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def canonical(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def sha256(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def need(self, key):
        if key not in self.raw:
            raise ConfigError(f"config is missing '{key}'")
        return self.raw[key]


def load_config(path, args):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        raw["lambda"] = args.lam
    if getattr(args, "mu", None) is not None:
        raw["mu"] = args.mu
    if getattr(args, "arch", None) is not None:
        try:
            raw["arch"] = [int(a) for a in args.arch.split(",")]
        except ValueError:
            raise ConfigError(f"--arch must be comma-separated integers, got {args.arch!r}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    cfg = RunConfig(raw, os.path.dirname(os.path.abspath(path)), path)
    if getattr(args, "output_dir", None):
        out = os.path.abspath(args.output_dir)
    elif "output_dir" in raw:
        out = cfg.resolve(raw["output_dir"])
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV) or os.path.join(os.getcwd(), "drddl-runs")
        out = os.path.join(root, os.path.splitext(os.path.basename(path))[0])
    cfg.output_dir = out
    return cfg


def train_spec(cfg):
    s = cfg.get("solver", {})
    robust = RobustTrainConfig(mu_bregman=s.get("robust_mu", 10.0),
                               outer_iters=s.get("robust_iters", 50),
                               tol=s.get("robust_tol", 1e-3))
    enc = network.EncodeConfig(irls_iters=s.get("irls_iters", 50),
                               irls_eps=s.get("irls_eps", 1e-6),
                               ista_iters=s.get("ista_iters", 500),
                               ista_tol=s.get("ista_tol", 1e-8))
    return network.TrainSpec(
        arch=cfg.need("arch"), lam=cfg.get("lambda", 0.2), mu_cls=cfg.get("mu", 1.0),
        activation=cfg.get("activation", "tanh"), robust=robust,
        dense_iters=s.get("dense_iters", 30), final_iters=s.get("final_iters", 30),
        ista=IstaConfig(0.0, enc.ista_iters, enc.ista_tol), encode=enc,
        code_scaling=s.get("code_scaling", True), seed=cfg.get("seed", 0))


# ---------------------------------------------------------------- dataset plumbing

class Dataset:
    def __init__(self, cfg):
        ds = cfg.need("dataset")
        data = cfg.resolve(ds["data"]) if "data" in ds else None
        self.cube = hsidata.read_envi(cfg.resolve(ds["cube"]), data)
        self.labels = hsidata.read_labels(cfg.resolve(ds["labels"]))
        hsidata.check_pairing(self.cube, self.labels)
        self.cfg = cfg
        self.split = self._split()
        self._pca = None

    def _split(self):
        sp = self.cfg.get("split", {"fraction": 0.1})
        seed = self.cfg.get("seed", 0)
        if "file" in sp:
            split = hsidata.read_split(self.cfg.resolve(sp["file"]), seed)
            for role in ("train", "test"):
                idx = split.side(role)
                if idx.size and (idx.min() < 0 or idx[:, 0].max() >= self.cube.rows
                                 or idx[:, 1].max() >= self.cube.cols):
                    raise FormatError(f"split file has {role} pixels outside the cube")
                if np.any(hsidata.split_labels(self.labels, idx) == 0):
                    raise FormatError(f"split file has unlabeled {role} pixels")
            return split
        if "preset" in sp:
            counts = hsidata.PRESETS[sp["preset"]]
        elif "counts" in sp:
            counts = sp["counts"]
        else:
            counts = hsidata.fraction(self.labels, sp["fraction"])
        return hsidata.make_split(self.labels, counts, seed)

    @property
    def num_classes(self):
        return int(self.labels.max())

    def features(self, idx):
        f = self.cfg.get("features", {})
        if f.get("mode", "raw") == "raw":
            return hsidata.extract_spectral_pixels(self.cube, idx)
        k = f.get("pca_k", 10)
        if self._pca is None:
            # fitted on training pixels only
            train = hsidata.extract_spectral_pixels(self.cube, self.split.train_idx)
            self._pca = hsidata.pca_fit(train, k)
        return hsidata.extract_patch_features(self.cube, idx, f.get("patch_w", 5), k,
                                              self._pca)


# ---------------------------------------------------------------- output helpers

@contextmanager
def output_lock(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
    lock = os.path.join(out_dir, LOCK_NAME)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError:
        raise IoError(f"output directory {out_dir} is locked by another run "
                      f"(remove {LOCK_NAME} if stale)") from None
    except OSError as exc:
        raise IoError(f"cannot create lock in {out_dir}: {exc.strerror or exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        try:
            os.unlink(lock)
        except OSError:
            pass


def write_bytes(path, data):
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_text(path, text):
    write_bytes(path, text.encode())


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def render_ppm(label_grid):
    """P6 image with PALETTE colours; 0 is black."""
    grid = np.asarray(label_grid, dtype=np.int64)
    idx = np.where(grid > 0, (grid - 1) % 16 + 1, 0)
    rgb = PALETTE[idx]
    head = f"P6\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    return head + rgb.tobytes()


def _model_path(cfg, args):
    return os.path.abspath(args.model) if args.model else os.path.join(cfg.output_dir,
                                                                       "model.drddl")


def _load_for(cfg, args, ds):
    model = network.load_model(_model_path(cfg, args))
    dim = ds.features(ds.split.train_idx[:1]).shape[0] if len(ds.split.train_idx) else None
    if dim is not None and dim != model.input_dim:
        raise FormatError(f"model expects {model.input_dim} features but the configured "
                          f"pipeline produces {dim}")
    return model


# ---------------------------------------------------------------- verbs

def cmd_train(cfg, args):
    t0 = time.perf_counter()
    spec = train_spec(cfg)
    ds = Dataset(cfg)
    X = ds.features(ds.split.train_idx)
    y = hsidata.split_labels(ds.labels, ds.split.train_idx)
    log.info("training on %d pixels with %d features, arch %s", X.shape[1], X.shape[0],
             spec.arch)
    model = network.train(X, y, spec)
    with output_lock(cfg.output_dir) as out:
        model_path = os.path.join(out, "model.drddl")
        network.save_model(model, model_path)
        hsidata.write_split(ds.split, os.path.join(out, "split.csv"))
        manifest = {
            "command": "train",
            "config": os.path.abspath(cfg.path),
            "config_sha256": cfg.sha256(),
            "effective_config": cfg.raw,
            "seed": spec.seed,
            "arch": spec.arch,
            "activation": spec.activation,
            "lambda": spec.lam,
            "mu": spec.mu_cls,
            "train_samples": int(X.shape[1]),
            "input_dim": int(X.shape[0]),
            "model_sha256": sha256_file(model_path),
            "versions": _versions(),
            "wall_time_s": round(time.perf_counter() - t0, 3),
        }
        write_text(os.path.join(out, "manifest.json"),
                   json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"model written to {model_path}")
    return EXIT_OK


def cmd_eval(cfg, args):
    ds = Dataset(cfg)
    model = _load_for(cfg, args, ds)
    idx = ds.split.train_idx if args.on == "train" else ds.split.test_idx
    if len(idx) == 0:
        raise DegenerateInput(f"the {args.on} side of the split is empty")
    pred = network.predict(model, ds.features(idx))
    true = hsidata.split_labels(ds.labels, idx)
    C = max(model.num_classes, ds.num_classes)
    cm = metrics.confusion(true, pred, C)
    with output_lock(cfg.output_dir) as out:
        write_text(os.path.join(out, "metrics.txt"), metrics.report_text(cm))
        write_text(os.path.join(out, "metrics.csv"), metrics.report_csv(cm))
        write_text(os.path.join(out, "confusion.csv"), metrics.confusion_csv(cm))
    sys.stdout.write(metrics.report_text(cm))
    return EXIT_OK


def cmd_map(cfg, args):
    ds = Dataset(cfg)
    if args.groundtruth:
        grid = ds.labels.copy()
        stem = "groundtruth"
    else:
        model = _load_for(cfg, args, ds)
        if args.all:
            rr, cc = np.meshgrid(np.arange(ds.cube.rows), np.arange(ds.cube.cols),
                                 indexing="ij")
            idx = np.stack([rr.ravel(), cc.ravel()], axis=1)
        else:
            idx = np.argwhere(ds.labels > 0)
        grid = np.zeros(ds.labels.shape, dtype=np.int64)
        if len(idx):
            grid[idx[:, 0], idx[:, 1]] = network.predict(model, ds.features(idx))
        stem = "map"
    with output_lock(cfg.output_dir) as out:
        write_bytes(os.path.join(out, stem + ".ppm"), render_ppm(grid))
        hsidata.write_labels_csv(grid, os.path.join(out, stem + ".csv"))
    print(f"{stem} written to {os.path.join(cfg.output_dir, stem + '.ppm')}")
    return EXIT_OK


def cmd_split(cfg, args):
    ds = Dataset(cfg)
    with output_lock(cfg.output_dir) as out:
        hsidata.write_split(ds.split, os.path.join(out, "split.csv"))
    print(f"{len(ds.split.train_idx)} train / {len(ds.split.test_idx)} test pixels")
    return EXIT_OK


def relative_error(X_clean, X_hat):
    return float(np.linalg.norm(X_clean - X_hat) / max(np.linalg.norm(X_clean), 1e-300))


def synth_run(settings, seed, robust_cfg=None):
    """One robust-vs-dense comparison; returns the two clean-part relative errors."""
    s = settings
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((s["m"], s["k"]))
    Z = rng.standard_normal((s["k"], s["n"]))
    X_clean, X_noisy, _ = hsidata.synth_mixed_noise(D, Z, s["sigma"], s["spike_frac"],
                                                    s["spike_mag"], seed)
    lr, Zr, _ = train_robust_layer(X_noisy, s["k"], robust_cfg, seed)
    ld, Zd, _ = train_dense_layer(X_noisy, s["k"], s["dense_iters"], seed)
    return relative_error(X_clean, lr.D @ Zr), relative_error(X_clean, ld.D @ Zd)


def synth_experiment(settings, seed0=0, robust_cfg=None):
    runs = []
    for seed in range(seed0, seed0 + settings["seeds"]):
        r, d = synth_run(settings, seed, robust_cfg)
        runs.append({"seed": seed, "robust_error": r, "dense_error": d,
                     "robust_wins": bool(r < d)})
    wins = sum(r["robust_wins"] for r in runs)
    report = {"settings": dict(settings), "runs": runs, "wins": wins,
              "seeds": len(runs), "win_rate": wins / len(runs)}
    jsonschema.validate(report, SYNTH_REPORT_SCHEMA)
    return report


def cmd_synth(cfg, args):
    settings = dict(SYNTH_DEFAULTS, **cfg.get("synth", {}))
    if settings["k"] > settings["m"]:
        raise ConfigError("synth.k must not exceed synth.m")
    s = cfg.get("solver", {})
    robust = RobustTrainConfig(mu_bregman=s.get("robust_mu", 10.0),
                               outer_iters=s.get("robust_iters", 50),
                               tol=s.get("robust_tol", 1e-3))
    report = synth_experiment(settings, cfg.get("seed", 0), robust)
    with output_lock(cfg.output_dir) as out:
        write_text(os.path.join(out, "synth_report.json"),
                   json.dumps(report, indent=2, sort_keys=True) + "\n")
    for r in report["runs"]:
        print(f"seed {r['seed']}: robust {r['robust_error']:.4g}  dense {r['dense_error']:.4g}")
    print(f"robust wins {report['wins']}/{report['seeds']}")
    return EXIT_OK


def _versions():
    import numba
    return {"drddl": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "numba": numba.__version__,
            "jsonschema": metadata.version("jsonschema"),
            "backend": _accel.backend_name()}


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="drddl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"drddl {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--arch", help="comma-separated layer widths, e.g. 150,100,30")
        sp.add_argument("--output-dir")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        return sp

    common(sub.add_parser("train", help="train a model and write model, split, manifest"))
    ev = common(sub.add_parser("eval", help="evaluate a model on the split"))
    ev.add_argument("--model")
    ev.add_argument("--on", choices=["train", "test"], default="test")
    mp = common(sub.add_parser("map", help="render a classification map"))
    mp.add_argument("--model")
    mp.add_argument("--all", action="store_true", help="classify unlabeled pixels too")
    mp.add_argument("--groundtruth", action="store_true", help="render the label raster")
    common(sub.add_parser("synth", help="robust vs dense first layer on mixed noise"))
    common(sub.add_parser("split", help="write the train/test split only"))
    return p


VERBS = {"train": cmd_train, "eval": cmd_eval, "map": cmd_map, "synth": cmd_synth,
         "split": cmd_split}


def _fail(category, code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error[{category}]: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args)
        return VERBS[args.verb](cfg, args)
    except (ConfigError, DegenerateInput) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except FormatError as exc:
        return _fail("format", EXIT_IO, exc)
    except IoError as exc:
        return _fail("io", EXIT_IO, exc)
    except NumericalError as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except ValueError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
