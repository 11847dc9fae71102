"""Greedy training of the full stack, test-time encoding and model files.

The first level is fit with l1 fidelity on the (min-max scaled) input, the
middle levels with least squares on ``phi^-1`` of the previous codes, and
the last level with sparse codes plus a linear classifier ``W``.  Encoding
repeats the same cascade one level at a time: IRLS, least squares, ISTA.

Codes handed from one level to the next pass through a per-level affine map
``a * Z + b`` fitted on the training codes so that they land inside the
range of ``phi`` (``[-0.9, 0.9]`` for tanh, ``[0.05, 0.95]`` for sigmoid,
untouched for identity) before ``phi^-1`` is taken, and the result is
divided by the slope of that map at the centre.  Small codes therefore pass
through nearly unchanged while large ones are stretched, instead of being
clamped.  Unit-norm atoms give codes well outside ``(-1, 1)``, and clamping
alone saturates the cascade.
"""

from dataclasses import asdict, dataclass, field
import io
import json
import logging
import struct

import numpy as np

from . import activations as act
from .activations import Activation
from .errors import DegenerateInput, FormatError, IoError, NumericalError
from .layers import (FinalTrainConfig, Layer, RobustTrainConfig, encode_dense,
                     encode_robust, encode_sparse, one_hot, train_dense_layer,
                     train_final_layer, train_robust_layer)
from .solvers import IstaConfig, as_matrix

log = logging.getLogger(__name__)

MAGIC = b"DRDDL1"
FORMAT_VERSION = 1
CODE_RANGE = 0.9


@dataclass(frozen=True)
class EncodeConfig:
    """Solver budgets used at test time (stored with the model)."""

    irls_iters: int = 50
    irls_eps: float = 1e-6
    ista_iters: int = 500
    ista_tol: float = 1e-8


@dataclass
class TrainSpec:
    arch: list
    lam: float = 0.2
    mu_cls: float = 1.0
    activation: str = "tanh"
    robust: RobustTrainConfig = field(default_factory=RobustTrainConfig)
    dense_iters: int = 30
    final_iters: int = 30
    ista: IstaConfig = field(default_factory=IstaConfig)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    standardize: bool = True
    code_scaling: bool = True
    seed: int = 0

    def __post_init__(self):
        self.arch = [int(a) for a in self.arch]
        if not self.arch or min(self.arch) < 1:
            raise DegenerateInput(f"arch must be a non-empty list of positive widths, got {self.arch}")
        if any(b > a for a, b in zip(self.arch, self.arch[1:])):
            raise DegenerateInput(f"arch widths must not increase, got {self.arch}")


@dataclass
class DrddlModel:
    layers: list
    W: np.ndarray
    lam: float
    mu_cls: float
    activation: Activation
    x_offset: np.ndarray
    x_scale: np.ndarray
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    code_maps: list = None

    def __post_init__(self):
        check_chain(self.layers, self.W, self.x_offset.size)
        if self.layers[0].activation.kind is not act.Kind.IDENTITY:
            raise DegenerateInput("the first layer must use the identity activation")
        if self.code_maps is None:
            self.code_maps = [(1.0, 0.0)] * (len(self.layers) - 1)
        self.code_maps = [(float(a), float(b)) for a, b in self.code_maps]
        if len(self.code_maps) != len(self.layers) - 1:
            raise DegenerateInput(f"{len(self.code_maps)} code maps for "
                                  f"{len(self.layers)} layers")
        if not all(np.isfinite(a) and a > 0 and np.isfinite(b) for a, b in self.code_maps):
            raise DegenerateInput("code maps need a finite positive scale")

    @property
    def num_classes(self):
        return self.W.shape[0]

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def arch(self):
        return [layer.out_dim for layer in self.layers]


def check_chain(layers, W, input_dim, exc=DegenerateInput):
    if not layers:
        raise exc("a model needs at least one layer")
    if layers[0].in_dim != input_dim:
        raise exc(f"layer 1 expects {layers[0].in_dim} inputs, scaling has {input_dim}")
    for i in range(1, len(layers)):
        if layers[i].in_dim != layers[i - 1].out_dim:
            raise exc(f"layer {i + 1} has {layers[i].in_dim} inputs but layer {i} "
                      f"produces {layers[i - 1].out_dim}")
    if W.ndim != 2 or W.shape[1] != layers[-1].out_dim:
        raise exc(f"classifier W has shape {W.shape}, expected (C, {layers[-1].out_dim})")


def _class_count(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DegenerateInput(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise DegenerateInput("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 1:
        raise DegenerateInput("class ids are 1-based")
    C = int(labels.max())
    missing = sorted(set(range(1, C + 1)) - set(labels.tolist()))
    if missing:
        raise DegenerateInput(f"classes {missing} have no training samples")
    return labels, C


def fit_code_map(phi, Z):
    """Affine ``(a, b)`` taking the training codes into the interior of phi's range."""
    peak = float(np.max(np.abs(Z))) if Z.size else 0.0
    if phi.kind is act.Kind.IDENTITY or peak == 0.0:
        return 1.0, 0.0
    if phi.kind is act.Kind.TANH:
        return CODE_RANGE / peak, 0.0
    return CODE_RANGE / (2.0 * peak), 0.5


def _inverse(phi, Z, level, code_map=(1.0, 0.0)):
    a, b = code_map
    scaled = a != 1.0 or b != 0.0
    if scaled:
        Z = a * Z + b
    out, clamped = act.apply_inverse(phi, Z, return_clamped=True)
    if clamped:
        log.info("layer %d: clamped %d of %d coefficients before phi^-1 (%.1f%%)",
                 level, clamped, Z.size, 100.0 * clamped / Z.size)
    if scaled:
        # d/dz phi^-1(a z + b) at z = 0 is a / phi'(phi^-1(b))
        if phi.kind is act.Kind.TANH:
            out /= a / (1.0 - b * b)
        elif phi.kind is act.Kind.SIGMOID:
            out /= a / (b * (1.0 - b))
    return out


def train(X, labels, spec):
    """Fit a model to columns ``X`` (d x n) with 1-based integer ``labels``."""
    X = as_matrix(X, "X")
    d, n = X.shape
    if n < 2:
        raise DegenerateInput("need at least two training samples")
    if not np.any(X):
        raise DegenerateInput("training data is identically zero")
    labels, C = _class_count(labels, n)
    if spec.arch[0] > d:
        raise DegenerateInput(f"first width {spec.arch[0]} exceeds input dimension {d}")

    if spec.standardize:
        offset = X.min(axis=1)
        scale = X.max(axis=1) - offset
        scale[scale == 0] = 1.0
    else:
        offset, scale = np.zeros(d), np.ones(d)
    Xs = (X - offset[:, None]) / scale[:, None]

    phi = Activation.parse(spec.activation)
    T = one_hot(labels, C)
    final_cfg = FinalTrainConfig(spec.lam, spec.mu_cls, spec.final_iters, spec.ista)
    N = len(spec.arch)
    layers, maps = [], []

    def handoff(Z, level):
        cm = fit_code_map(phi, Z) if spec.code_scaling else (1.0, 0.0)
        maps.append(cm)
        return _inverse(phi, Z, level, cm)

    level = 1
    try:
        if N == 1:
            layer, W, _, rep = train_final_layer(Xs, spec.arch[0], T, final_cfg, spec.seed)
            layers.append(layer)
        else:
            layer, Z, rep = train_robust_layer(Xs, spec.arch[0], spec.robust, spec.seed)
            log.info("layer 1 (robust): %d rounds, primal residual %.3g", rep.iterations,
                     rep.residual)
            layers.append(layer)
            for level in range(2, N):
                layer, Z, rep = train_dense_layer(handoff(Z, level - 1),
                                                  spec.arch[level - 1], spec.dense_iters,
                                                  spec.seed + level - 1, activation=phi)
                log.info("layer %d (dense): residual %.3g", level, rep.residual)
                layers.append(layer)
            level = N
            layer, W, _, rep = train_final_layer(handoff(Z, N - 1), spec.arch[-1], T,
                                                 final_cfg, spec.seed + N - 1, activation=phi)
            layers.append(layer)
        log.info("layer %d (final): residual %.3g", level, rep.residual)
    except NumericalError as exc:
        raise NumericalError(f"layer {level}: {exc}") from exc
    return DrddlModel(layers, W, spec.lam, spec.mu_cls, phi, offset, scale, spec.encode,
                      maps)


def encode(model, x):
    """Deepest-level code for one sample (vector) or many (columns)."""
    vec = np.ndim(x) == 1
    Xm = as_matrix(x, "x")
    if Xm.shape[0] != model.input_dim:
        raise DegenerateInput(f"input has {Xm.shape[0]} features, model expects "
                              f"{model.input_dim}")
    Z = (Xm - model.x_offset[:, None]) / model.x_scale[:, None]
    cfg = model.encode
    ista_cfg = IstaConfig(model.lam, cfg.ista_iters, cfg.ista_tol)
    N = len(model.layers)
    if N > 1:
        Z = encode_robust(model.layers[0], Z, cfg.irls_iters, cfg.irls_eps)
        for i in range(1, N - 1):
            Z = encode_dense(model.layers[i],
                             _inverse(model.activation, Z, i, model.code_maps[i - 1]))
        Z = _inverse(model.activation, Z, N - 1, model.code_maps[N - 2])
    Z = encode_sparse(model.layers[-1], Z, model.lam, ista_cfg)
    return Z[:, 0] if vec else Z


def classify(model, z):
    """Return ``(class_id, scores)`` with ``scores = W z``; ties go to the lowest id."""
    z = np.asarray(z, dtype=np.float64)
    scores = model.W @ z
    return int(np.argmax(scores)) + 1, scores


def predict(model, X):
    """Class ids (1-based) for every column of ``X``."""
    Z = encode(model, np.asarray(X, dtype=np.float64).reshape(model.input_dim, -1))
    return np.argmax(model.W @ Z, axis=0).astype(np.int64) + 1


# --------------------------------------------------------------------------
# serialization:  MAGIC | u32 LE header length | JSON header | float64 LE
# payload (x_offset, x_scale, D_1 .. D_N, W), matrices column-major
# --------------------------------------------------------------------------

def _header(model):
    return {
        "format_version": FORMAT_VERSION,
        "num_layers": len(model.layers),
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [{"rows": l.in_dim, "cols": l.out_dim, "activation": l.activation.name}
                   for l in model.layers],
        "lambda": model.lam,
        "mu": model.mu_cls,
        "activation": model.activation.name,
        "clamp_eps": model.activation.clamp_eps,
        "encode": asdict(model.encode),
        "code_maps": [list(cm) for cm in model.code_maps],
    }


def dumps(model):
    head = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    arrays = [model.x_offset, model.x_scale] + [l.D for l in model.layers] + [model.W]
    for a in arrays:
        buf.write(np.asarray(a, dtype="<f8").tobytes(order="F"))
    return buf.getvalue()


def save_model(model, path):
    try:
        with open(path, "wb") as f:
            f.write(dumps(model))
    except OSError as exc:
        raise IoError(f"cannot write model to {path}: {exc}") from exc


def _int(h, key, where="header"):
    v = h.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise FormatError(f"{where}: '{key}' must be a positive integer, got {v!r}")
    return v


def loads(data):
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a model file (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(data):
        raise FormatError("truncated header")
    try:
        h = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if not isinstance(h, dict) or h.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {h.get('format_version') if isinstance(h, dict) else h!r}")

    d = _int(h, "input_dim")
    C = _int(h, "num_classes")
    specs = h.get("layers")
    if not isinstance(specs, list) or len(specs) != _int(h, "num_layers"):
        raise FormatError("layer table does not match num_layers")
    shapes = []
    prev = d
    for i, s in enumerate(specs, start=1):
        rows, cols = _int(s, "rows", f"layer {i}"), _int(s, "cols", f"layer {i}")
        if rows != prev:
            raise FormatError(f"layer {i}: expects {rows} inputs but previous level "
                              f"produces {prev}")
        shapes.append((rows, cols))
        prev = cols
    shapes.append((C, prev))

    sizes = [d, d] + [r * c for r, c in shapes]
    payload = data[start + hlen:]
    if len(payload) != 8 * sum(sizes):
        raise FormatError(f"payload is {len(payload)} bytes, header implies {8 * sum(sizes)}"
                          + (" (truncated)" if len(payload) < 8 * sum(sizes) else ""))
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise FormatError("payload contains non-finite values")
    parts, pos = [], 0
    for size in sizes:
        parts.append(flat[pos:pos + size])
        pos += size
    mats = [p.reshape(shape, order="F") for p, shape in zip(parts[2:], shapes)]

    try:
        phi = Activation.parse(h["activation"], h.get("clamp_eps", 1e-6))
        layers = [Layer(D, Activation.parse(s["activation"], phi.clamp_eps))
                  for D, s in zip(mats[:-1], specs)]
        enc = EncodeConfig(**h["encode"])
        lam, mu = float(h["lambda"]), float(h["mu"])
        maps = [(float(a), float(b)) for a, b in h["code_maps"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad header field: {exc}") from exc
    try:
        return DrddlModel(layers, mats[-1], lam, mu, phi, parts[0].copy(), parts[1].copy(),
                          enc, maps)
    except DegenerateInput as exc:
        raise FormatError(str(exc)) from exc


def load_model(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    return loads(data)
