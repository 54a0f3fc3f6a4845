import json

import numpy as np
import pytest

from nightvis import data as D
from nightvis.errors import DataError, ShapeError
from nightvis.flow import FlowConfig, FlowField, benchmark_quadrant, estimate_flow, extrapolate, to_luminance


@pytest.fixture(scope="module")
def translating():
    return D.synth_translation(0, 64, 64, shift=(2.0, 0.0), frames=3)


def test_static_scene_gives_zero_flow(translating):
    f = estimate_flow(translating[0], translating[0])
    assert not f.u.any() and not f.v.any()


def test_translation_recovered(translating):
    f = estimate_flow(translating[0], translating[1])
    mu, mv = f.mean()
    assert abs(mu - 2.0) <= 0.3 and abs(mv) <= 0.3
    assert np.all(np.isfinite(f.u)) and np.all(np.isfinite(f.v))


def test_vertical_translation_recovered():
    fr = D.synth_translation(1, 64, 64, shift=(0.0, -1.5), frames=2)
    mu, mv = estimate_flow(fr[0], fr[1]).mean()
    assert abs(mu) <= 0.3 and abs(mv + 1.5) <= 0.3


def test_energy_never_increases(translating):
    f = estimate_flow(translating[0], translating[1])
    assert f.history
    for stage in f.history:
        assert all(b <= a * (1 + 1e-12) for a, b in zip(stage, stage[1:]))


@pytest.mark.parametrize("theta", [0.04, -0.04])
def test_rotation_curl_sign(theta):
    base = D.synth_translation(2, 64, 64, shift=(0.0, 0.0), frames=1, scale=5.0)[0]
    rr, cc = np.indices(base.shape, dtype=float)
    true = FlowField(-theta * (rr - 31.5), theta * (cc - 31.5))
    moved = extrapolate(base, true)
    est = estimate_flow(base, moved)
    inner = est.curl()[16:-16, 16:-16]
    assert np.sign(inner.mean()) == np.sign(theta)


def test_shift_equivariance_interior():
    fr = D.synth_translation(3, 64, 64, shift=(1.5, 0.5), frames=2)
    a = estimate_flow(fr[0], fr[1])
    b = estimate_flow(np.roll(fr[0], (3, 5), axis=(0, 1)), np.roll(fr[1], (3, 5), axis=(0, 1)))
    au = np.roll(a.u, (3, 5), axis=(0, 1))[16:-16, 16:-16]
    av = np.roll(a.v, (3, 5), axis=(0, 1))[16:-16, 16:-16]
    assert np.max(np.abs(au - b.u[16:-16, 16:-16])) < 0.1
    assert np.max(np.abs(av - b.v[16:-16, 16:-16])) < 0.1


def test_zero_flow_warp_is_identity(translating):
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    out = extrapolate(img, FlowField.zeros((16, 16)))
    assert np.array_equal(out, img)
    assert np.array_equal(extrapolate(translating[0], FlowField.zeros((64, 64))), translating[0])


def test_uniform_flow_reproduces_shift(translating):
    f = FlowField(np.full((64, 64), 2.0), np.zeros((64, 64)))
    out = extrapolate(translating[1], f)
    rng = translating.max() - translating.min()
    assert np.abs(out - translating[2]).mean() <= 0.02 * rng


def test_extrapolation_beats_persistence(translating):
    f = estimate_flow(translating[0], translating[1])
    err = np.abs(extrapolate(translating[1], f) - translating[2]).mean()
    persist = np.abs(translating[1] - translating[2]).mean()
    assert err <= 0.7 * persist


def test_multi_step_and_layouts(translating):
    f = FlowField(np.full((64, 64), 2.0), np.zeros((64, 64)))
    two = extrapolate(translating[0], f, steps=2)
    assert np.abs(two - translating[2])[:, 8:].max() < 1e-2
    chw = np.stack([translating[0]] * 3)
    assert extrapolate(chw, f).shape == (3, 64, 64)
    with pytest.raises(ValueError):
        extrapolate(translating[0], f, steps=0)
    with pytest.raises(ShapeError):
        extrapolate(np.zeros((8, 8)), f)


def test_rejects_non_finite_and_mismatch():
    a = np.zeros((16, 16))
    b = a.copy()
    b[3, 3] = np.nan
    with pytest.raises(DataError):
        estimate_flow(a, b)
    with pytest.raises(ShapeError):
        estimate_flow(a, np.zeros((16, 8)))


def test_luminance_weights():
    rgb = np.zeros((1, 1, 3))
    rgb[..., 0] = 1.0
    assert to_luminance(rgb)[0, 0] == pytest.approx(0.299)
    chw = np.zeros((3, 1, 1))
    chw[0] = 1.0  # CH01 is blue
    assert to_luminance(chw)[0, 0] == pytest.approx(0.114)


def test_benchmark_quadrant_identity_and_truth_columns():
    fr = D.synth_translation(4, 32, 32, shift=(1.0, 1.0), frames=3)
    alb = [np.stack([f * 1.2] * 3) for f in fr]
    flow = estimate_flow(alb[0], alb[1])
    bench = np.clip(extrapolate(alb[1], flow), 0, None)
    rep = benchmark_quadrant(alb[0], alb[1], bench, truth_t2=alb[2])
    assert rep.mae == 0.0 and rep.ssim == 1.0
    assert rep.extra["benchmark_vs_truth_mae"] > 0
    assert rep.extra["synth_vs_truth_mae"] == rep.extra["benchmark_vs_truth_mae"]
    assert rep.region == "bottom_right"


def test_flow_export(tmp_path, translating):
    f = estimate_flow(translating[0], translating[1], FlowConfig(levels=2))
    entry = json.loads(f.save(tmp_path).read_text())
    u = np.fromfile(tmp_path / entry["u"], dtype="<f4").reshape(entry["rows"], entry["cols"])
    np.testing.assert_allclose(u, f.u, atol=1e-5)
