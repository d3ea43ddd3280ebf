import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualpath.errors import ContractError, CoverageError, ParseError, TruncationError
from dualpath.imaging import (
    GrayImage,
    NoiseSpec,
    PatchGrid,
    add_awgn,
    aggregate,
    denoise_image,
    extract_patches,
    gaussian_window,
    load_pgm,
    mse,
    pgm_bytes,
    psnr,
    quantize,
    read_pgm_bytes,
    rmse,
    save_pgm,
)
from dualpath.nn import LayerSpec, NetworkParams


def smooth_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    img = 0.5 + 0.3 * np.sin(x / 7.0 + rng.uniform(0, 6)) * np.cos(y / 11.0)
    return GrayImage(img + 0.05 * rng.uniform(-1, 1, (h, w)))


def center_projection(p, q):
    """Linear net copying the central q x q block of a p x p patch."""
    W = np.zeros((q * q, p * p))
    m = (p - q) // 2
    for u in range(q):
        for v in range(q):
            W[u * q + v, (u + m) * p + (v + m)] = 1.0
    return NetworkParams([LayerSpec(p * p, q * q)], [W], [np.zeros(q * q)])


class TestPGM:
    def test_single_white_pixel(self):
        img = read_pgm_bytes(b"P5\n1 1\n255\n\xff")
        assert img.shape == (1, 1) and img.pixels[0, 0] == 1.0

    def test_bytes_map_exactly(self):
        data = bytes(range(256))
        img = read_pgm_bytes(b"P5 16 16 255\n" + data)
        assert np.array_equal(img.pixels.ravel(), np.arange(256) / 255.0)

    def test_comments_in_header(self):
        img = read_pgm_bytes(b"P5\n# made by hand\n2 # width\n1\n255\n\x00\x80")
        assert img.shape == (1, 2)
        assert img.pixels[0, 1] == 128 / 255

    def test_ascii_variant_rejected(self):
        with pytest.raises(ParseError) as info:
            read_pgm_bytes(b"P2\n1 1\n255\n0\n")
        assert info.value.offset == 0

    def test_maxval_rejected_with_offset(self):
        with pytest.raises(ParseError) as info:
            read_pgm_bytes(b"P5\n1 1\n65535\n\x00\x00")
        assert info.value.offset == 7

    def test_truncated(self):
        with pytest.raises(TruncationError):
            read_pgm_bytes(b"P5\n4 4\n255\n" + bytes(10))

    @pytest.mark.parametrize("data", [b"", b"P5", b"P5\n2 x\n255\n", b"P5\n0 3\n255\n",
                                      b"P5\n1 1\n255"])
    def test_malformed(self, data):
        with pytest.raises(ParseError):
            read_pgm_bytes(data)

    def test_save_rounds_and_clamps(self):
        img = GrayImage(np.array([[-0.2, 0.5 / 255, 1.5 / 255, 2.0]]))
        assert quantize(img.pixels).tolist() == [[0, 1, 2, 255]]

    @settings(max_examples=50)
    @given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.floats(0, 1)))
    def test_roundtrip_within_half_step(self, pixels):
        back = read_pgm_bytes(pgm_bytes(GrayImage(pixels)))
        assert np.max(np.abs(back.pixels - pixels)) <= 1 / 510 + 1e-15

    def test_byte_image_roundtrips_exactly(self, tmp_path):
        rng = np.random.default_rng(0)
        img = GrayImage(rng.integers(0, 256, (7, 9)) / 255.0)
        save_pgm(img, tmp_path / "a.pgm")
        assert np.array_equal(load_pgm(tmp_path / "a.pgm").pixels, img.pixels)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n9 7\n255\n")


class TestNoise:
    def test_std_and_mean(self):
        clean = GrayImage(np.full((512, 512), 0.5))
        noisy = add_awgn(clean, NoiseSpec(25, 1))
        e = noisy.pixels - clean.pixels
        sigma = 25 / 255
        assert abs(e.std() / sigma - 1) < 0.02
        assert abs(e.mean()) < 3 * sigma / math.sqrt(e.size)

    def test_deterministic(self):
        clean = smooth_image(20, 30)
        a = add_awgn(clean, NoiseSpec(15, 7))
        b = add_awgn(clean, NoiseSpec(15, 7))
        c = add_awgn(clean, NoiseSpec(15, 8))
        assert a.pixels.tobytes() == b.pixels.tobytes()
        assert not np.array_equal(a.pixels, c.pixels)

    def test_not_clipped(self):
        noisy = add_awgn(GrayImage(np.ones((64, 64))), NoiseSpec(50, 0))
        assert noisy.pixels.max() > 1.0

    def test_vanishing_sigma(self):
        clean = smooth_image(16, 16)
        noisy = add_awgn(clean, NoiseSpec(1e-300, 0))
        assert np.array_equal(noisy.pixels, clean.pixels)

    def test_invalid_sigma(self):
        with pytest.raises(ContractError):
            NoiseSpec(0, 0)


class TestMetrics:
    @pytest.mark.parametrize("sigma,expected", [(15, 24.61), (25, 20.17), (100, 8.13)])
    def test_noisy_baseline_psnr(self, sigma, expected):
        clean = smooth_image(512, 512, 3)
        noisy = add_awgn(clean, NoiseSpec(sigma, 4))
        assert abs(psnr(clean, noisy) - expected) < 0.05

    def test_constant_extremes(self):
        assert psnr(GrayImage(np.zeros((4, 4))), GrayImage(np.ones((4, 4)))) == pytest.approx(0.0)

    def test_identical_is_infinite(self):
        img = smooth_image(8, 8)
        assert psnr(img, img) == math.inf
        assert rmse(img, img) == 0.0

    def test_definitions(self):
        a = GrayImage(np.zeros((2, 2)))
        b = GrayImage(np.array([[0.1, 0.0], [0.0, 0.0]]))
        assert mse(a, b) == pytest.approx(0.0025)
        assert rmse(a, b) == pytest.approx(0.05)
        assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / (0.0025 * 255**2)))

    def test_symmetric(self):
        a, b = smooth_image(10, 10, 1), smooth_image(10, 10, 2)
        assert psnr(a, b) == psnr(b, a) and rmse(a, b) == rmse(b, a)

    @pytest.mark.parametrize("seed", range(3))
    def test_psnr_decreases_with_sigma(self, seed):
        clean = smooth_image(128, 128)
        values = [psnr(clean, add_awgn(clean, NoiseSpec(s, seed))) for s in (15, 25, 35, 50, 75)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            psnr(smooth_image(4, 4), smooth_image(4, 5))


class TestPatches:
    def test_constant_image(self):
        grid = PatchGrid.for_shape((30, 25), 5, 3, 2)
        X, dc = extract_patches(GrayImage(np.full((30, 25), 0.3)), grid)
        assert np.abs(X).max() < 1e-15
        assert np.allclose(dc, 0.3)

    def test_single_patch(self):
        grid = PatchGrid.for_shape((17, 17), 17, 9, 17)
        assert len(grid) == 1
        X, dc = extract_patches(smooth_image(17, 17), grid)
        assert X.shape == (1, 289)

    def test_rows_have_zero_mean_and_scan_order(self):
        img = smooth_image(40, 33)
        grid = PatchGrid.for_shape(img.shape, 7, 3, 4)
        X, dc = extract_patches(img, grid)
        assert np.abs(X.mean(axis=1)).max() < 1e-12
        for k in (0, 5, len(grid) - 1):
            r, c = grid.positions[k]
            patch = img.pixels[r:r + 7, c:c + 7]
            assert np.allclose(X[k] + dc[k], patch.ravel(), atol=1e-15)
        assert list(map(tuple, grid.positions)) == sorted(map(tuple, grid.positions))

    def test_edges_reached(self):
        grid = PatchGrid.for_shape((50, 41), 17, 9, 3)
        assert grid.positions[:, 0].max() == 50 - 17
        assert grid.positions[:, 1].max() == 41 - 17
        assert grid.positions.min() == 0

    def test_out_of_bounds(self):
        grid = PatchGrid(5, 3, 1, [(0, 0), (10, 0)])
        with pytest.raises(ContractError):
            extract_patches(smooth_image(12, 12), grid)

    @pytest.mark.parametrize("p,q", [(4, 3), (5, 7), (5, 2)])
    def test_grid_validation(self, p, q):
        with pytest.raises(ContractError):
            PatchGrid(p, q, 1)


class TestAggregate:
    def test_window(self):
        w = gaussian_window(9)
        assert w[4, 4] == 1.0
        assert w[0, 4] == pytest.approx(math.exp(-16 / (2 * 2.25**2)))
        assert np.array_equal(w, w.T) and np.array_equal(w, w[::-1])

    def test_single_block_reproduced(self):
        rng = np.random.default_rng(0)
        grid = PatchGrid(5, 5, 1, [(0, 0)])
        block = rng.uniform(size=(1, 25))
        out = aggregate(block, grid, [0.25], (5, 5))
        assert np.allclose(out.pixels.ravel(), block[0] + 0.25, atol=1e-15)

    def test_duplicate_blocks_idempotent(self):
        rng = np.random.default_rng(1)
        block = rng.uniform(size=(1, 9))
        one = aggregate(block, PatchGrid(3, 3, 1, [(0, 0)]), [0.0], (3, 3))
        two = aggregate(np.vstack([block, block]), PatchGrid(3, 3, 1, [(0, 0), (0, 0)]),
                        [0.0, 0.0], (3, 3))
        assert np.allclose(one.pixels, two.pixels, atol=1e-15)

    def test_constant_blocks(self):
        grid = PatchGrid.for_shape((12, 10), 3, 3, 1)
        out = aggregate(np.full((len(grid), 9), 0.1), grid, np.full(len(grid), 0.5), (12, 10))
        assert np.allclose(out.pixels, 0.6, atol=1e-15)

    def test_identity_roundtrip(self):
        img = smooth_image(31, 26)
        grid = PatchGrid.for_shape(img.shape, 5, 5, 2)
        X, dc = extract_patches(img, grid)
        out = aggregate(X, grid, dc, img.shape)
        assert np.abs(out.pixels - img.pixels).max() < 1e-12

    def test_coverage_gap(self):
        grid = PatchGrid.for_shape((20, 20), 7, 3, 3)
        X, dc = extract_patches(smooth_image(20, 20), grid)
        with pytest.raises(CoverageError) as info:
            aggregate(X[:, :9], grid, dc, (20, 20))
        assert (0, 0) in info.value.pixels
        fallback = smooth_image(20, 20, 9)
        out = aggregate(X[:, :9], grid, dc, (20, 20), fallback=fallback)
        assert out.pixels[0, 0] == fallback.pixels[0, 0]

    def test_shape_checks(self):
        grid = PatchGrid(3, 3, 1, [(0, 0)])
        with pytest.raises(ContractError):
            aggregate(np.zeros((2, 9)), grid, [0.0], (3, 3))


class TestDenoise:
    @pytest.mark.parametrize("stride", [1, 3, 5])
    def test_center_projection_reassembles_input(self, stride):
        clean = smooth_image(45, 38, 5)
        noisy = add_awgn(clean, NoiseSpec(25, 0))
        out = denoise_image(center_projection(9, 5), noisy, stride=stride)
        assert out.shape == noisy.shape
        assert psnr(noisy, out) >= 60

    def test_without_padding_copies_margin(self):
        noisy = add_awgn(smooth_image(30, 30), NoiseSpec(25, 1))
        out = denoise_image(center_projection(9, 5), noisy, pad=False)
        assert np.array_equal(out.pixels[0], noisy.pixels[0])
        assert psnr(noisy, out) >= 60

    def test_batched_matches_unbatched(self):
        noisy = add_awgn(smooth_image(40, 40), NoiseSpec(25, 2))
        rng = np.random.default_rng(0)
        net = NetworkParams([LayerSpec(25, 9)], [rng.normal(0, 0.1, (9, 25))],
                            [rng.normal(0, 0.01, 9)])
        a = denoise_image(net, noisy, stride=2)
        b = denoise_image(net, noisy, stride=2, batch_size=7)
        assert np.allclose(a.pixels, b.pixels, rtol=0, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            denoise_image(center_projection(9, 5), smooth_image(20, 20), PatchGrid(7, 5, 3))
