import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nightvis.errors import ShapeError
from nightvis.metrics import (
    INFINITE,
    MetricsReport,
    evaluate,
    mae,
    mean_report,
    metrics_table,
    psnr,
    quadrant_mask,
    rmse,
    ssim,
)
from oracles import mae_loop, psnr_loop, rmse_loop, ssim_loop


def rand_img(rng, shape=(16, 16, 3)):
    return rng.integers(0, 256, size=shape).astype(np.uint8)


def test_direct_examples():
    assert mae(np.array([0.0, 1.0]), np.array([1.0, 3.0])) == 1.5
    assert rmse(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == pytest.approx(3.5355, abs=1e-4)
    a = np.full((4, 4, 3), 100, np.uint8)
    assert psnr(a, a + 1) == pytest.approx(20 * math.log10(255), abs=1e-12)
    assert psnr(a, a + 1) == pytest.approx(48.13, abs=0.01)


def test_constant_offset():
    a = np.random.default_rng(0).uniform(size=(3, 5, 5))
    assert mae(a, a + 0.25) == pytest.approx(0.25)
    assert rmse(a, a + 0.25) == pytest.approx(0.25)


def test_identity_report():
    y = np.random.default_rng(0).uniform(0, 1.65, size=(3, 16, 16))
    r = evaluate(y, y.copy())
    assert (r.mae, r.rmse, r.psnr, r.ssim) == (0.0, 0.0, INFINITE, 1.0)
    assert "psnr = inf" in r.to_text()


def test_ssim_black_vs_white_near_zero():
    black = np.zeros((16, 16, 3), np.uint8)
    white = np.full((16, 16, 3), 255, np.uint8)
    assert ssim(black, white) == pytest.approx(1e-4, abs=1e-3)


def test_ssim_three_factor_variant_identity():
    img = rand_img(np.random.default_rng(1))
    assert ssim(img, img, c3=(0.03 * 255) ** 2 / 2) == pytest.approx(1.0)


def test_ssim_window_too_large():
    with pytest.raises(ShapeError):
        ssim(np.zeros((6, 6, 3)), np.zeros((6, 6, 3)))


def test_shape_mismatch_and_empty_mask():
    with pytest.raises(ShapeError):
        mae(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ValueError):
        mae(np.zeros((3, 4, 4)), np.ones((3, 4, 4)), mask=np.zeros((4, 4), bool))


@pytest.mark.parametrize("seed", range(10))
def test_oracles_on_random_16x16(seed):
    rng = np.random.default_rng(seed)
    a, b = rand_img(rng), rand_img(rng)
    assert mae(a, b) == pytest.approx(mae_loop(a, b), abs=1e-6)
    assert rmse(a, b) == pytest.approx(rmse_loop(a, b), abs=1e-6)
    assert psnr(a, b) == pytest.approx(psnr_loop(a, b), abs=1e-6)
    assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-6)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(np.float64, (2, 3, 4), elements=st.floats(-10, 10)),
)
def test_mae_never_exceeds_rmse(pair):
    assert mae(pair[0], pair[1]) <= rmse(pair[0], pair[1]) + 1e-12


def test_pixel_permutation_invariance():
    rng = np.random.default_rng(3)
    a, b = rand_img(rng), rand_img(rng)
    perm = rng.permutation(16 * 16)
    pa = a.reshape(-1, 3)[perm].reshape(16, 16, 3)
    pb = b.reshape(-1, 3)[perm].reshape(16, 16, 3)
    for f in (mae, rmse, psnr):
        assert f(pa, pb) == pytest.approx(f(a, b), rel=1e-12)


def test_ssim_invariant_under_window_block_shuffle():
    # with window == stride the windows tile the image; shuffling whole tiles preserves the score
    rng = np.random.default_rng(4)
    a, b = rand_img(rng, (32, 32, 3)), rand_img(rng, (32, 32, 3))

    def tiles(img):
        return [img[i : i + 8, j : j + 8] for i in range(0, 32, 8) for j in range(0, 32, 8)]

    perm = rng.permutation(16)

    def rebuild(ts):
        ts = [ts[k] for k in perm]
        return np.concatenate([np.concatenate(ts[4 * r : 4 * r + 4], axis=1) for r in range(4)], axis=0)

    sa, sb = rebuild(tiles(a)), rebuild(tiles(b))
    assert ssim(sa, sb, stride=8) == pytest.approx(ssim(a, b, stride=8), abs=1e-12)


def test_psnr_monotone_in_noise_amplitude():
    rng = np.random.default_rng(5)
    base = np.full((16, 16, 3), 128.0)
    noise = rng.uniform(-1, 1, size=base.shape)
    values = [psnr(base, base + amp * noise) for amp in (1, 2, 4, 8, 16)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_masked_quadrant_ignores_outside_cells():
    rng = np.random.default_rng(6)
    y = rng.uniform(0, 1.65, size=(3, 32, 32))
    s = rng.uniform(0, 1.65, size=(3, 32, 32))
    m = quadrant_mask((32, 32))
    r1 = evaluate(y, s, mask=m)
    s2 = s.copy()
    s2[:, ~m] = y[:, ~m]  # other three quadrants made identical
    r2 = evaluate(y, s2, mask=m)
    cropped = evaluate(y[:, 16:, 16:], s[:, 16:, 16:])
    for key in ("mae", "rmse", "psnr", "ssim"):
        assert getattr(r1, key) == getattr(r2, key)
        assert getattr(r1, key) == pytest.approx(getattr(cropped, key), abs=1e-9)


def test_quadrant_mask_shapes():
    m = quadrant_mask((4, 6), "top_left")
    assert m.sum() == 6 and m[0, 0] and not m[3, 5]
    with pytest.raises(ValueError):
        quadrant_mask((4, 4), "middle")


def test_table_layout_and_mean():
    reps = [MetricsReport(0.06, 0.08, 30.0, 0.5), MetricsReport(0.064, 0.084, INFINITE, 0.46)]
    avg = mean_report(reps)
    assert avg.mae == pytest.approx(0.062) and avg.psnr == 30.0
    text = metrics_table({"Infrared channels+NWP": avg})
    header, row = text.strip().split("\n")
    assert header.split("\t") == ["Model input", "Mean MAE", "Mean RMSE", "PSNR", "SSIM"]
    assert row.split("\t") == ["Infrared channels+NWP", "0.062", "0.082", "30.0", "0.480"]
