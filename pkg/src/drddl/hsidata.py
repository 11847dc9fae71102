"""Hyperspectral cubes, label rasters, train/test splits and feature extraction.

Cubes are held band-sequentially as a ``(bands, rows, cols)`` float64 array,
which is also the on-disk order of an ENVI BSQ file.  Pixel coordinates are
``(row, col)`` pairs; feature matrices put one pixel per column.
"""

from dataclasses import dataclass
import csv
import io
import logging
import os
import re
import warnings

import numpy as np

from .errors import DegenerateInput, FormatError, IoError, NumericalError

log = logging.getLogger(__name__)

# Training counts per class, in class order 1..C.
INDIAN_PINES_TRAIN = (15, 142, 83, 23, 48, 73, 20, 47, 15, 97, 160, 59, 20, 126, 38, 50)
INDIAN_PINES_TOTAL = (46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205,
                      1265, 386, 93)
PAVIA_TRAIN = (132, 372, 41, 61, 26, 100, 26, 73, 18)
PAVIA_TOTAL = (6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947)

PRESETS = {"indian_pines": INDIAN_PINES_TRAIN, "pavia": PAVIA_TRAIN}

_ENVI_DTYPES = {4: "<f4", 5: "<f8"}


@dataclass
class HsiCube:
    values: np.ndarray  # (bands, rows, cols)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DegenerateInput(f"cube must be (bands, rows, cols), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericalError("cube contains non-finite values")
        self.values = v

    @property
    def bands(self):
        return self.values.shape[0]

    @property
    def rows(self):
        return self.values.shape[1]

    @property
    def cols(self):
        return self.values.shape[2]


@dataclass
class Split:
    train_idx: np.ndarray  # (n_train, 2) of (row, col)
    test_idx: np.ndarray
    seed: int

    def side(self, role):
        if role == "train":
            return self.train_idx
        if role == "test":
            return self.test_idx
        raise ValueError(f"role must be 'train' or 'test', got {role!r}")


# ---------------------------------------------------------------- ENVI

def _read_text(path):
    try:
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def parse_envi_header(text):
    """``key = value`` pairs of an ENVI header; brace values may span lines."""
    lines = text.splitlines()
    if lines and lines[0].strip().upper() == "ENVI":
        lines = lines[1:]
    out = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        if "=" not in line:
            raise FormatError(f"header line {i} is not 'key = value': {line.strip()!r}")
        key, value = line.split("=", 1)
        value = value.strip()
        if value.startswith("{"):
            while "}" not in value and i < len(lines):
                value += "\n" + lines[i]
                i += 1
            if "}" not in value:
                raise FormatError(f"unterminated brace value for key '{key.strip()}'")
            value = value.strip()[1:-1].strip()
        out[key.strip().lower()] = value
    return out


def _header_int(h, key):
    if key not in h:
        raise FormatError(f"header is missing required key '{key}'")
    try:
        return int(h[key])
    except ValueError:
        raise FormatError(f"header key '{key}' is not an integer: {h[key]!r}") from None


def read_envi(header_path, data_path=None):
    """Load a BSQ cube described by an ENVI header.

    ``data_path`` defaults to the header path with its extension dropped.
    """
    h = parse_envi_header(_read_text(header_path))
    samples = _header_int(h, "samples")
    lines = _header_int(h, "lines")
    bands = _header_int(h, "bands")
    for key, val in (("samples", samples), ("lines", lines), ("bands", bands)):
        if val < 1:
            raise FormatError(f"header key '{key}' must be positive, got {val}")
    if "interleave" not in h:
        raise FormatError("header is missing required key 'interleave'")
    if h["interleave"].strip().lower() != "bsq":
        raise FormatError(f"header key 'interleave' must be bsq, got {h['interleave']!r}")
    dtype = _header_int(h, "data type")
    if dtype not in _ENVI_DTYPES:
        raise FormatError(f"header key 'data type' must be 4 or 5, got {dtype}")
    if _header_int(h, "byte order") != 0:
        raise FormatError("header key 'byte order' must be 0 (little-endian)")
    offset = _header_int(h, "header offset") if "header offset" in h else 0

    if data_path is None:
        data_path = os.path.splitext(header_path)[0]
    try:
        with open(data_path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {data_path}: {exc.strerror or exc}") from exc
    width = np.dtype(_ENVI_DTYPES[dtype]).itemsize
    expected = offset + samples * lines * bands * width
    if len(raw) != expected:
        raise FormatError(f"data file has {len(raw)} bytes but header keys "
                          f"'samples', 'lines', 'bands' and 'data type' imply {expected}")
    vals = np.frombuffer(raw, dtype=_ENVI_DTYPES[dtype], offset=offset)
    return HsiCube(vals.astype(np.float64).reshape(bands, lines, samples))


def write_envi(cube, header_path, data_path=None, data_type=5):
    if data_type not in _ENVI_DTYPES:
        raise ValueError(f"data_type must be 4 or 5, got {data_type}")
    if data_path is None:
        data_path = os.path.splitext(header_path)[0]
    header = (f"ENVI\nsamples = {cube.cols}\nlines = {cube.rows}\nbands = {cube.bands}\n"
              f"header offset = 0\nfile type = ENVI Standard\ndata type = {data_type}\n"
              f"interleave = bsq\nbyte order = 0\n")
    try:
        with open(header_path, "w", encoding="ascii") as fh:
            fh.write(header)
        with open(data_path, "wb") as fh:
            fh.write(cube.values.astype(_ENVI_DTYPES[data_type]).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write ENVI pair {header_path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------- labels

def _parse_label_csv(text, path):
    rows = []
    for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        try:
            rows.append([int(c.strip()) for c in rec])
        except ValueError:
            raise FormatError(f"{path}: non-integer cell on line {lineno}") from None
    if not rows:
        raise FormatError(f"{path}: no label rows")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: rows have differing lengths")
    return np.array(rows, dtype=np.int64)


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_pgm(raw, path):
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PGM_TOKEN.match(raw, pos)
        if not m:
            raise FormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise FormatError(f"{path}: bad PGM header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = fields
    if not 0 < maxval <= 65535:
        raise FormatError(f"{path}: PGM maxval {maxval} outside 1..65535")
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    need = width * height * np.dtype(dtype).itemsize
    if len(raw) - pos != need:
        raise FormatError(f"{path}: PGM pixel data has {len(raw) - pos} bytes, expected {need}")
    return np.frombuffer(raw, dtype=dtype, offset=pos).reshape(height, width).astype(np.int64)


def read_labels(path):
    """Integer label raster (0 = unlabeled) from a CSV grid or a P5 PGM."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if raw[:2] == b"P5":
        labels = _parse_pgm(raw, path)
    else:
        labels = _parse_label_csv(raw.decode("ascii", errors="replace"), path)
    if labels.min() < 0:
        raise FormatError(f"{path}: negative label")
    return labels


def write_labels_csv(labels, path):
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(np.asarray(labels).tolist())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_labels_pgm(labels, path):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("PGM labels must lie in 0..65535")
    maxval = max(int(labels.max()), 1)
    dtype = ">u2" if maxval > 255 else "u1"
    head = f"P5\n{labels.shape[1]} {labels.shape[0]}\n{maxval}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(head + labels.astype(dtype).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def check_pairing(cube, labels):
    if labels.shape != (cube.rows, cube.cols):
        raise FormatError(f"label raster is {labels.shape[0]}x{labels.shape[1]} but cube is "
                          f"{cube.rows}x{cube.cols}")


# ---------------------------------------------------------------- splits

def class_totals(labels):
    labels = np.asarray(labels)
    C = int(labels.max()) if labels.size else 0
    return [int(np.count_nonzero(labels == c)) for c in range(1, C + 1)]


def fraction(labels, p):
    """Per-class train counts ``round(p * total)``, halves rounded up."""
    if not 0.0 <= p <= 1.0:
        raise DegenerateInput(f"fraction must lie in [0, 1], got {p}")
    return [int(np.floor(p * t + 0.5)) for t in class_totals(labels)]


def make_split(labels, per_class_counts, seed):
    """Seeded per-class random split of the labeled pixels.

    Pixels of each class are taken in raster order and permuted with one
    generator seeded by ``seed``; the first ``per_class_counts[c - 1]`` go
    to training.  Both sides are returned class by class in raster order.
    """
    labels = np.asarray(labels)
    counts = [int(c) for c in per_class_counts]
    totals = class_totals(labels)
    if len(counts) < len(totals):
        raise DegenerateInput(f"{len(counts)} counts given for {len(totals)} classes")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, want in enumerate(counts, start=1):
        pix = np.argwhere(labels == c)
        if want < 0 or want > len(pix):
            raise DegenerateInput(f"class {c}: {want} training pixels requested, "
                                  f"{len(pix)} available")
        order = rng.permutation(len(pix))
        chosen = np.zeros(len(pix), dtype=bool)
        chosen[order[:want]] = True
        train.append(pix[chosen])
        test.append(pix[~chosen])
    train = np.concatenate(train) if train else np.zeros((0, 2), np.int64)
    test = np.concatenate(test) if test else np.zeros((0, 2), np.int64)
    if len(test) == 0:
        warnings.warn("split leaves no test pixels", RuntimeWarning, stacklevel=2)
    return Split(train.astype(np.int64), test.astype(np.int64), int(seed))


def write_split(split, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "role"])
            for role in ("train", "test"):
                for r, c in split.side(role):
                    w.writerow([int(r), int(c), role])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_split(path, seed=-1):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["row", "col", "role"]:
        raise FormatError(f"{path}: expected header row,col,role")
    sides = {"train": [], "test": []}
    for lineno, rec in enumerate(rows[1:], start=2):
        if not rec:
            continue
        if len(rec) != 3 or rec[2].strip() not in sides:
            raise FormatError(f"{path}: bad split record on line {lineno}")
        try:
            sides[rec[2].strip()].append((int(rec[0]), int(rec[1])))
        except ValueError:
            raise FormatError(f"{path}: non-integer coordinate on line {lineno}") from None
    as_arr = lambda v: np.array(v, dtype=np.int64).reshape(-1, 2)
    tr, te = as_arr(sides["train"]), as_arr(sides["test"])
    if {tuple(p) for p in tr.tolist()} & {tuple(p) for p in te.tolist()}:
        raise FormatError(f"{path}: a pixel appears in both train and test")
    return Split(tr, te, seed)


def split_labels(labels, idx):
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
    return np.asarray(labels)[idx[:, 0], idx[:, 1]].astype(np.int64)


# ---------------------------------------------------------------- features

def _check_idx(cube, idx):
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
    if idx.size and (idx.min() < 0 or idx[:, 0].max() >= cube.rows
                     or idx[:, 1].max() >= cube.cols):
        raise DegenerateInput("pixel index outside the cube")
    return idx


def extract_spectral_pixels(cube, idx):
    """Band vectors of the pixels ``idx`` as columns (bands x n)."""
    idx = _check_idx(cube, idx)
    return cube.values[:, idx[:, 0], idx[:, 1]].copy()


@dataclass
class PcaModel:
    components: np.ndarray  # (k, d), orthonormal rows
    mean: np.ndarray  # (d,)
    explained_variance: np.ndarray  # (k,)

    def transform(self, X):
        return self.components @ (np.asarray(X, dtype=np.float64) - self.mean[:, None])


def pca_fit(X, k):
    """Top ``k`` principal directions of the columns of ``X``.

    Each component's largest-magnitude entry is made positive (the first
    one on ties) so the result does not depend on the SVD's sign choice.
    """
    X = np.asarray(X, dtype=np.float64)
    d, n = X.shape
    if not 1 <= k <= min(d, n):
        raise DegenerateInput(f"k={k} must lie in 1..min(d, n)={min(d, n)}")
    mean = X.mean(axis=1)
    try:
        U, s, _ = np.linalg.svd(X - mean[:, None], full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"PCA SVD failed: {exc}") from exc
    comps = U[:, :k].T.copy()
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.where(comps[np.arange(k), lead] < 0, -1.0, 1.0)[:, None]
    var = s[:k] ** 2 / max(n - 1, 1)
    return PcaModel(comps, mean, var)


def extract_patch_features(cube, idx, patch_w=5, pca_k=10, pca_model=None):
    """Spatial patch of the PCA bands plus the pixel's spectral projection.

    The cube is projected onto ``pca_model`` (which must be fitted on
    training pixels only), padded by mirror reflection at the borders, and
    each selected pixel yields ``pca_k * patch_w**2`` patch values in
    (component, row, col) order followed by its ``pca_k`` projection.
    """
    if patch_w < 1 or patch_w % 2 == 0:
        raise DegenerateInput(f"patch width must be odd, got {patch_w}")
    if pca_model is None:
        raise DegenerateInput("a fitted PCA model is required")
    if pca_model.components.shape[0] < pca_k or pca_model.components.shape[1] != cube.bands:
        raise DegenerateInput(f"PCA model of shape {pca_model.components.shape} does not "
                              f"provide {pca_k} components over {cube.bands} bands")
    idx = _check_idx(cube, idx)
    pca = PcaModel(pca_model.components[:pca_k], pca_model.mean,
                   pca_model.explained_variance[:pca_k])
    flat = cube.values.reshape(cube.bands, -1)
    proj = pca.transform(flat).reshape(pca_k, cube.rows, cube.cols)
    h = patch_w // 2
    # mirror about the edge pixel: row -1 reads row 1
    padded = np.pad(proj, ((0, 0), (h, h), (h, h)), mode="reflect")
    n = len(idx)
    feats = np.empty((pca_k * patch_w * patch_w + pca_k, n))
    for j, (r, c) in enumerate(idx):
        feats[:-pca_k, j] = padded[:, r:r + patch_w, c:c + patch_w].ravel()
    feats[-pca_k:] = proj[:, idx[:, 0], idx[:, 1]]
    return feats


# ---------------------------------------------------------------- synthetic data

def synth_mixed_noise(D, Z, sigma, spike_frac, spike_mag, seed):
    """Clean product ``D Z`` plus Gaussian noise and sparse spikes.

    Exactly ``round(spike_frac * size)`` entries, drawn without replacement,
    receive ``+-spike_mag`` with random sign.  Returns
    ``(X_clean, X_noisy, spike_mask)``.
    """
    if not 0.0 <= spike_frac <= 1.0:
        raise DegenerateInput(f"spike_frac must lie in [0, 1], got {spike_frac}")
    if sigma < 0:
        raise DegenerateInput(f"sigma must be nonnegative, got {sigma}")
    X = np.asarray(D, dtype=np.float64) @ np.asarray(Z, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(X.shape)
    n_spikes = int(np.floor(spike_frac * X.size + 0.5))
    mask = np.zeros(X.size, dtype=bool)
    mask[rng.choice(X.size, size=n_spikes, replace=False)] = True
    mask = mask.reshape(X.shape)
    signs = rng.choice(np.array([-1.0, 1.0]), size=X.shape)
    noisy = X + noise + np.where(mask, spike_mag * signs, 0.0)
    return X, noisy, mask
