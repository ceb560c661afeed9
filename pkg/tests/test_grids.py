import numpy as np
import pytest

from limtomo.grids import (GridMismatchError, Image, Sinogram, SinogramGrid,
                           TruncationMask, read_image, read_sinogram, restrict,
                           restrict_complement, write_image, write_pgm,
                           write_sinogram)


@pytest.fixture
def grid4():
    return SinogramGrid(n_angles=1, n_bins=4)


def test_bin_centers_symmetric_uniform():
    g = SinogramGrid(n_angles=3, n_bins=8)
    c = g.bin_centers
    assert np.allclose(c + c[::-1], 0.0)
    assert np.allclose(np.diff(c), 2.0 / 8)
    assert np.all(np.abs(c) < 1.0)


def test_angles_equispaced_in_half_turn():
    g = SinogramGrid(n_angles=6, n_bins=4)
    a = g.angles
    assert a[0] == 0.0
    assert np.all(np.diff(a) > 0)
    assert a[-1] < np.pi
    assert np.allclose(np.diff(a), np.pi / 6)


def test_restrict_four_bin_example(grid4):
    # centers (-0.75, -0.25, 0.25, 0.75), mu = 0.5: keep the middle two.
    # Hand-applied |s| < mu rule on v = (1, 2, 3, 4).
    v = Sinogram(grid4, np.array([[1.0, 2.0, 3.0, 4.0]]))
    m = TruncationMask(grid4, 0.5)
    assert np.array_equal(restrict(v, m).data, [[0.0, 2.0, 3.0, 0.0]])
    assert np.array_equal(restrict_complement(v, m).data, [[1.0, 0.0, 0.0, 4.0]])


def test_restrict_identity_and_annihilating_masks(grid4):
    v = Sinogram(grid4, np.array([[1.0, -2.0, 3.5, 4.0]]))
    all_true = TruncationMask(grid4, 1.0)
    assert np.array_equal(restrict(v, all_true).data, v.data)
    assert np.array_equal(restrict_complement(v, all_true).data, np.zeros((1, 4)))
    tiny = TruncationMask(grid4, 1e-9, kept=np.zeros((1, 4), dtype=bool))
    assert np.array_equal(restrict(v, tiny).data, np.zeros((1, 4)))


def test_restrict_partition_idempotence_selfadjoint():
    rng = np.random.default_rng(0)
    g = SinogramGrid(5, 16)
    m = TruncationMask(g, 0.37)
    v = Sinogram(g, rng.standard_normal(g.shape))
    w = Sinogram(g, rng.standard_normal(g.shape))
    kept_plus_comp = restrict(v, m).data + restrict_complement(v, m).data
    assert np.array_equal(kept_plus_comp, v.data)
    assert np.array_equal(restrict(restrict(v, m), m).data, restrict(v, m).data)
    lhs = np.vdot(restrict(v, m).data, w.data)
    rhs = np.vdot(v.data, restrict(w, m).data)
    assert lhs == pytest.approx(rhs, rel=1e-14)
    # kept and complement partition the grid exactly
    assert np.array_equal(m.kept ^ m.complement, np.ones(g.shape, dtype=bool))


def test_mask_matches_bin_centers():
    g = SinogramGrid(7, 32)
    m = TruncationMask(g, 0.4)
    expect = np.abs(g.bin_centers) < 0.4
    assert np.array_equal(m.kept, np.broadcast_to(expect, g.shape))


def test_grid_mismatch_raises(grid4):
    v = Sinogram(grid4, np.ones((1, 4)))
    other = TruncationMask(SinogramGrid(2, 4), 0.5)
    with pytest.raises(GridMismatchError):
        restrict(v, other)


def test_mu_range_validation(grid4):
    with pytest.raises(ValueError):
        TruncationMask(grid4, 0.0)
    with pytest.raises(ValueError):
        TruncationMask(grid4, 1.2)


def test_nonfinite_rejected(grid4):
    with pytest.raises(ValueError):
        Sinogram(grid4, np.array([[1.0, np.nan, 0.0, 0.0]]))
    with pytest.raises(ValueError):
        Image(np.array([[np.inf, 0.0], [0.0, 0.0]]))


def test_sinogram_container_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    g = SinogramGrid(9, 12)
    s = Sinogram(g, rng.standard_normal(g.shape))
    path = tmp_path / "t.sino"
    write_sinogram(path, s, mu=0.5)
    s2, mu = read_sinogram(path)
    assert mu == 0.5
    assert s2.grid == g
    assert np.array_equal(s2.data, s.data)
    # 24-byte header before the payload
    assert path.stat().st_size == 24 + 8 * 9 * 12


def test_image_container_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    img = Image(rng.standard_normal((10, 10)))
    path = tmp_path / "t.img2"
    write_image(path, img)
    img2 = read_image(path)
    assert np.array_equal(img2.data, img.data)
    assert img2.pixel_size == img.pixel_size
    assert path.stat().st_size == 24 + 8 * 100


def test_pgm_header_and_size(tmp_path):
    img = Image(np.linspace(0, 1, 64).reshape(8, 8))
    path = tmp_path / "t.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n8 8\n65535\n")
    assert len(raw) == len(b"P5\n8 8\n65535\n") + 2 * 64
