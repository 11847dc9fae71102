import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drddl import hsidata as H
from drddl.errors import DegenerateInput, FormatError, IoError

from oracles import top_eigvecs


def _write_envi(tmp_path, values, header_extra="", bands=None, dtype="<f8", data_type=5,
                interleave="bsq"):
    values = np.asarray(values, dtype=dtype)
    b, r, c = values.shape
    hdr = tmp_path / "cube.hdr"
    hdr.write_text(f"ENVI\nsamples = {c}\nlines = {r}\nbands = {bands or b}\n"
                   f"interleave = {interleave}\ndata type = {data_type}\nbyte order = 0\n"
                   + header_extra)
    (tmp_path / "cube").write_bytes(values.tobytes())
    return hdr


# ---------------------------------------------------------------- ENVI

def test_read_envi_hand_fixture(tmp_path):
    hdr = _write_envi(tmp_path, [[[1.0, 2.0], [3.0, 4.0]]])
    cube = H.read_envi(hdr)
    assert (cube.bands, cube.rows, cube.cols) == (1, 2, 2)
    np.testing.assert_array_equal(cube.values[0], [[1, 2], [3, 4]])


def test_read_envi_float32_widened(tmp_path):
    hdr = _write_envi(tmp_path, np.arange(12).reshape(3, 2, 2), dtype="<f4", data_type=4)
    cube = H.read_envi(hdr)
    assert cube.values.dtype == np.float64
    np.testing.assert_array_equal(cube.values.ravel(), np.arange(12.0))


def test_read_envi_multiline_description(tmp_path):
    hdr = _write_envi(tmp_path, np.ones((2, 1, 3)),
                      header_extra="description = {first line,\n second line}\n")
    assert H.read_envi(hdr).bands == 2


@pytest.mark.parametrize("kwargs, key", [
    (dict(bands=10), "bands"),
    (dict(interleave="bil"), "interleave"),
    (dict(data_type=2), "data type"),
])
def test_read_envi_rejects_bad_headers(tmp_path, kwargs, key):
    hdr = _write_envi(tmp_path, np.ones((1, 2, 2)), **kwargs)
    with pytest.raises(FormatError, match=key):
        H.read_envi(hdr)


def test_read_envi_missing_key_and_file(tmp_path):
    hdr = tmp_path / "x.hdr"
    hdr.write_text("ENVI\nsamples = 2\nlines = 2\ninterleave = bsq\ndata type = 5\n")
    with pytest.raises(FormatError, match="bands"):
        H.read_envi(hdr)
    with pytest.raises(IoError):
        H.read_envi(tmp_path / "absent.hdr")


def test_envi_round_trip(tmp_path):
    cube = H.HsiCube(np.random.default_rng(0).standard_normal((4, 3, 5)))
    H.write_envi(cube, tmp_path / "c.hdr")
    np.testing.assert_array_equal(H.read_envi(tmp_path / "c.hdr").values, cube.values)


# ---------------------------------------------------------------- labels

def test_labels_csv(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("0,1\n2,0\n")
    lab = H.read_labels(p)
    np.testing.assert_array_equal(lab, [[0, 1], [2, 0]])
    assert np.count_nonzero(lab) == 2
    p.write_text("0,1.5\n2,0\n")
    with pytest.raises(FormatError):
        H.read_labels(p)


@pytest.mark.parametrize("maxval", [9, 300])
def test_labels_pgm_round_trip(tmp_path, maxval):
    lab = np.array([[0, 1, 2], [maxval, 0, 1]])
    H.write_labels_pgm(lab, tmp_path / "l.pgm")
    np.testing.assert_array_equal(H.read_labels(tmp_path / "l.pgm"), lab)


def test_pgm_sixteen_bit_is_big_endian(tmp_path):
    p = tmp_path / "l.pgm"
    p.write_bytes(b"P5\n# comment\n2 1\n65535\n" + np.array([1, 258], ">u2").tobytes())
    np.testing.assert_array_equal(H.read_labels(p), [[1, 258]])


def test_pairing_mismatch():
    with pytest.raises(FormatError):
        H.check_pairing(H.HsiCube(np.ones((3, 2, 2))), np.zeros((2, 3), np.int64))


# ---------------------------------------------------------------- splits

def test_presets_match_tables():
    assert H.INDIAN_PINES_TRAIN == (15, 142, 83, 23, 48, 73, 20, 47, 15, 97, 160, 59, 20, 126, 38, 50)
    assert H.PAVIA_TRAIN == (132, 372, 41, 61, 26, 100, 26, 73, 18)
    assert sum(H.INDIAN_PINES_TRAIN) == 1016
    assert sum(H.PAVIA_TRAIN) == 849
    assert sum(H.INDIAN_PINES_TOTAL) == 10249
    assert H.INDIAN_PINES_TOTAL[0] - H.INDIAN_PINES_TRAIN[0] == 31
    assert H.PAVIA_TOTAL[8] - H.PAVIA_TRAIN[8] == 929


def _raster_with_totals(totals, seed=0, pad=37):
    vals = np.concatenate([np.full(t, c) for c, t in enumerate(totals, start=1)]
                          + [np.zeros(pad, np.int64)])
    vals = np.random.default_rng(seed).permutation(vals)
    side = int(np.ceil(np.sqrt(vals.size)))
    out = np.zeros(side * side, np.int64)
    out[: vals.size] = vals
    return out.reshape(side, side)


@pytest.mark.parametrize("train, total", [(H.INDIAN_PINES_TRAIN, H.INDIAN_PINES_TOTAL),
                                          (H.PAVIA_TRAIN, H.PAVIA_TOTAL)])
def test_presets_split_full_size_rasters(train, total):
    labels = _raster_with_totals(total)
    split = H.make_split(labels, train, seed=0)
    got = np.bincount(H.split_labels(labels, split.train_idx), minlength=len(train) + 1)[1:]
    assert tuple(got) == train
    assert len(split.train_idx) + len(split.test_idx) == sum(total)
    assert H.extract_spectral_pixels(H.HsiCube(np.ones((1,) + labels.shape)),
                                     np.concatenate([split.train_idx, split.test_idx])).shape[1] == sum(total)


@settings(max_examples=30)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=5), st.integers(0, 2**31), st.data())
def test_split_properties(totals, seed, data):
    labels = _raster_with_totals(totals, seed % 100, pad=5)
    counts = [data.draw(st.integers(0, t)) for t in totals]
    if counts == totals:
        return
    a = H.make_split(labels, counts, seed)
    b = H.make_split(labels, counts, seed)
    np.testing.assert_array_equal(a.train_idx, b.train_idx)
    np.testing.assert_array_equal(a.test_idx, b.test_idx)
    tr = {tuple(p) for p in a.train_idx.tolist()}
    te = {tuple(p) for p in a.test_idx.tolist()}
    assert not tr & te
    assert tr | te == {tuple(p) for p in np.argwhere(labels > 0).tolist()}
    got = np.bincount(H.split_labels(labels, a.train_idx), minlength=len(totals) + 1)[1:]
    assert got.tolist() == counts


def test_split_boundaries():
    labels = np.array([[1, 1, 2], [0, 2, 2]])
    with pytest.warns(RuntimeWarning, match="no test"):
        split = H.make_split(labels, [2, 3], seed=0)
    assert len(split.test_idx) == 0
    with pytest.raises(DegenerateInput, match="class 2"):
        H.make_split(labels, [1, 4], seed=0)
    assert H.fraction(labels, 0.5) == [1, 2]


def test_split_file_round_trip(tmp_path):
    labels = _raster_with_totals([5, 7])
    split = H.make_split(labels, [2, 3], seed=4)
    H.write_split(split, tmp_path / "s.csv")
    back = H.read_split(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.train_idx, split.train_idx)
    np.testing.assert_array_equal(back.test_idx, split.test_idx)
    (tmp_path / "bad.csv").write_text("row,col,role\n0,0,train\n0,0,test\n")
    with pytest.raises(FormatError):
        H.read_split(tmp_path / "bad.csv")


# ---------------------------------------------------------------- features

def test_single_pixel_selection():
    cube = H.HsiCube(np.arange(24.0).reshape(4, 2, 3))
    np.testing.assert_array_equal(H.extract_spectral_pixels(cube, [[1, 2]])[:, 0],
                                  cube.values[:, 1, 2])
    with pytest.raises(DegenerateInput):
        H.extract_spectral_pixels(cube, [[2, 0]])


def test_pca_line_data():
    t = np.linspace(-3, 3, 50)
    X = np.vstack([t, 2 * t]) + np.array([[1.0], [5.0]])
    pca = H.pca_fit(X, 2)
    np.testing.assert_allclose(pca.components[0], np.array([1.0, 2.0]) / np.sqrt(5), atol=1e-12)
    assert pca.explained_variance[1] < 1e-20


@given(st.integers(0, 10_000))
def test_pca_rows_orthonormal_and_isometric(seed):
    X = np.random.default_rng(seed).standard_normal((6, 20))
    pca = H.pca_fit(X, 6)
    np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(6), atol=1e-8)
    P = pca.transform(X)
    d_in = np.linalg.norm(X[:, :1] - X, axis=0)
    d_out = np.linalg.norm(P[:, :1] - P, axis=0)
    np.testing.assert_allclose(d_out, d_in, atol=1e-8)


def test_pca_matches_eigensolver():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    cov = A @ A.T + np.diag([10.0, 6.0, 3.0, 1.0, 0.5])
    X = np.linalg.cholesky(cov) @ rng.standard_normal((5, 4000))
    pca = H.pca_fit(X, 3)
    Xc = X - X.mean(axis=1, keepdims=True)
    want, _ = top_eigvecs(Xc @ Xc.T, 3)
    for got, ref in zip(pca.components, want):
        assert min(np.abs(got - ref).max(), np.abs(got + ref).max()) < 1e-6
        assert got[np.argmax(np.abs(got))] > 0
    with pytest.raises(DegenerateInput):
        H.pca_fit(X, 6)


def _cube_and_pca(bands=4, rows=3, cols=3, k=2, seed=0):
    cube = H.HsiCube(np.random.default_rng(seed).standard_normal((bands, rows, cols)))
    pca = H.pca_fit(cube.values.reshape(bands, -1), k)
    return cube, pca


def test_patch_width_one_gives_twice_the_projection():
    cube, pca = _cube_and_pca()
    f = H.extract_patch_features(cube, [[1, 1], [0, 2]], patch_w=1, pca_k=2, pca_model=pca)
    assert f.shape == (4, 2)
    np.testing.assert_allclose(f[:2], f[2:])


def test_constant_cube_features_are_equal():
    cube = H.HsiCube(np.full((5, 4, 4), 3.0))
    pca = H.PcaModel(np.eye(5)[:2], np.zeros(5), np.ones(2))
    f = H.extract_patch_features(cube, [[1, 2]], patch_w=3, pca_k=2, pca_model=pca)
    np.testing.assert_array_equal(f, 3.0)


def test_corner_patch_uses_mirror_padding():
    grid = np.arange(1.0, 10.0).reshape(1, 3, 3)  # 1 2 3 / 4 5 6 / 7 8 9
    cube = H.HsiCube(grid)
    pca = H.PcaModel(np.ones((1, 1)), np.zeros(1), np.ones(1))
    f = H.extract_patch_features(cube, [[0, 0]], patch_w=3, pca_k=1, pca_model=pca)
    # mirrored about the corner pixel: row -1 reads row 1, col -1 reads col 1
    want = [5, 4, 5,
            2, 1, 2,
            5, 4, 5,
            1]
    np.testing.assert_array_equal(f[:, 0], want)


def test_patch_errors():
    cube, pca = _cube_and_pca()
    with pytest.raises(DegenerateInput, match="odd"):
        H.extract_patch_features(cube, [[0, 0]], patch_w=4, pca_k=2, pca_model=pca)
    with pytest.raises(DegenerateInput):
        H.extract_patch_features(cube, [[0, 0]], patch_w=3, pca_k=2)
    with pytest.raises(DegenerateInput):
        H.extract_patch_features(cube, [[0, 0]], patch_w=3, pca_k=3, pca_model=pca)


def test_pca_fitted_on_training_pixels_ignores_test_pixels():
    cube = H.HsiCube(np.random.default_rng(1).standard_normal((4, 6, 6)))
    labels = _raster_with_totals([12, 12], pad=12)
    split = H.make_split(labels, [4, 4], seed=0)
    before = H.pca_fit(H.extract_spectral_pixels(cube, split.train_idx), 2)
    poisoned = cube.values.copy()
    poisoned[:, split.test_idx[:, 0], split.test_idx[:, 1]] = 1e6
    after = H.pca_fit(H.extract_spectral_pixels(H.HsiCube(poisoned), split.train_idx), 2)
    np.testing.assert_array_equal(before.components, after.components)
    np.testing.assert_array_equal(before.mean, after.mean)


# ---------------------------------------------------------------- synthetic noise

def _factors():
    rng = np.random.default_rng(0)
    return rng.standard_normal((20, 5)), rng.standard_normal((5, 100))


def test_synth_examples():
    D, Z = _factors()
    clean, noisy, mask = H.synth_mixed_noise(D, Z, 0.0, 0.0, 10.0, seed=1)
    np.testing.assert_array_equal(clean, noisy)
    assert not mask.any()
    clean, noisy, mask = H.synth_mixed_noise(D, Z, 0.0, 1.0, 10.0, seed=1)
    assert mask.all()
    np.testing.assert_allclose(np.abs(noisy - clean), 10.0)


def test_synth_fixture_is_reproducible():
    D, Z = _factors()
    a = H.synth_mixed_noise(D, Z, 0.01, 0.01, 10.0, seed=3)
    b = H.synth_mixed_noise(D, Z, 0.01, 0.01, 10.0, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert a[2].sum() == 20
    spikes = np.abs(a[1] - a[0])[a[2]]
    assert np.all(np.abs(spikes - 10.0) < 0.1)
