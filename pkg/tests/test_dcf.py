import time

import cv2
import numpy as np
import pytest

import sotrack.dcf as dcf
from sotrack.boxes import BoundingBox
from sotrack.dcf import (STRCF, DCFParams, Template, correlate, fft2, learn_template, locate, make_gaussian_label,
                        objective)
from sotrack.features import Frame
from sotrack.synthetic import static_scene


# -- oracles ------------------------------------------------------------------

def circulant_design(x):
    """A[s, (p, d)] = x_d[p + s] (circular), so A @ f is the correlation response."""
    ny, nx, d = x.shape
    a = np.zeros((ny * nx, ny * nx * d))
    for sy in range(ny):
        for sx in range(nx):
            for py in range(ny):
                for px in range(nx):
                    for c in range(d):
                        a[sy * nx + sx, (py * nx + px) * d + c] = x[(py + sy) % ny, (px + sx) % nx, c]
    return a


def dense_solve(x, y, w, mu, f_prev):
    a = circulant_design(x)
    reg = np.repeat((w ** 2).ravel(), x.shape[2])
    lhs = a.T @ a + np.diag(reg) + mu * np.eye(a.shape[1])
    rhs = a.T @ y.ravel() + mu * f_prev.ravel()
    return np.linalg.solve(lhs, rhs).reshape(x.shape)


def spatial_correlation(f, z):
    ny, nx, d = f.shape
    out = np.zeros((ny, nx))
    for sy in range(ny):
        for sx in range(nx):
            for py in range(ny):
                for px in range(nx):
                    out[sy, sx] += np.dot(f[py, px], z[(py + sy) % ny, (px + sx) % nx])
    return out


def template_of(f):
    return Template(fft2(f), np.zeros(f.shape[:2]), np.zeros(f.shape[:2]), 0.0)


def random_problem(rng, n, d):
    x = rng.standard_normal((n, n, d))
    y = make_gaussian_label(n, n, 0.8)
    w = rng.uniform(0.05, 2.0, (n, n))
    f_prev = rng.standard_normal((n, n, d)) * 0.3
    mu = float(rng.uniform(0.1, 5.0))
    return x, y, w, mu, f_prev


# -- labels -------------------------------------------------------------------

def test_label_peak_and_symmetry():
    lab = make_gaussian_label(7, 6, 1.3)
    assert lab.shape == (6, 7) and lab[0, 0] == 1.0 and lab.max() == 1.0
    iy, ix = np.meshgrid(np.arange(6), np.arange(7), indexing="ij")
    np.testing.assert_allclose(lab[(-iy) % 6, (-ix) % 7], lab)


def test_label_narrow_limit_is_delta():
    lab = make_gaussian_label(16, 16, 0.01)
    assert lab.sum() - lab[0, 0] < 1e-6


def test_label_rejects_bad_args():
    for args in [(0, 4, 1.0), (4, 4, 0.0)]:
        with pytest.raises(ValueError):
            make_gaussian_label(*args)


# -- learning -----------------------------------------------------------------

def test_learn_matches_dense_quadratic_solve(rng):
    start = time.perf_counter()
    worst = 0.0
    for n, d in [(4, 1)] * 10 + [(6, 2)] * 10:
        x, y, w, mu, f_prev = random_problem(rng, n, d)
        oracle = dense_solve(x, y, w, mu, f_prev)
        got = learn_template(x, y, w, mu, template_of(f_prev), iterations=None).spatial()
        worst = max(worst, np.linalg.norm(got - oracle) / np.linalg.norm(oracle))
    elapsed = time.perf_counter() - start
    assert worst < 1e-3
    assert elapsed < 1.0


def test_learn_without_previous_drops_temporal_term(rng):
    x, y, w, _, f_prev = random_problem(rng, 4, 1)
    oracle = dense_solve(x, y, w, 0.0, f_prev)
    got = learn_template(x, y, w, 50.0, None, iterations=None)
    assert got.mu == 0.0
    np.testing.assert_allclose(got.spatial(), oracle, rtol=1e-3, atol=1e-6)


def test_huge_mu_keeps_previous_filter(rng):
    x, y, w, _, f_prev = random_problem(rng, 6, 2)
    got = learn_template(x, y, w, 1e9, template_of(f_prev), iterations=None).spatial()
    assert np.max(np.abs(got - f_prev)) < 1e-4


def test_unregularized_single_channel_closed_form(rng):
    x = rng.standard_normal((8, 8))
    y = make_gaussian_label(8, 8, 1.0)
    t = learn_template(x, y, np.zeros((8, 8)), 0.0, None, iterations=None)
    xf, yf = np.fft.fft2(x), np.fft.fft2(y)
    wiener = np.conj(xf) * yf / (np.abs(xf) ** 2 + 1e-4)
    # the filter is stored so that the response is ifft(conj(f_hat) * z_hat)
    got = np.conj(t.f_hat[:, :, 0])
    assert np.max(np.abs(got - wiener)) / np.max(np.abs(wiener)) < 1e-4


def test_objective_never_increases_from_start(rng):
    for i in range(40):
        n, d = (4, 1) if i % 2 else (6, 2)
        x, y, w, mu, f_prev = random_problem(rng, n, d)
        t = learn_template(x, y, w, mu, template_of(f_prev), iterations=None)
        assert objective(t.spatial(), x, y, w, mu, f_prev) <= objective(f_prev, x, y, w, mu, f_prev) + 1e-9
        t0 = learn_template(x, y, w, mu, None, iterations=None)
        assert objective(t0.spatial(), x, y, w, 0.0) <= objective(np.zeros_like(x), x, y, w, 0.0) + 1e-9


def test_fixed_schedule_runs_requested_iterations(rng):
    x, y, w, mu, f_prev = random_problem(rng, 6, 2)
    t = learn_template(x, y, w, mu, template_of(f_prev), iterations=2)
    assert t.iterations == 2 and t.shape == x.shape
    assert np.all(np.isfinite(t.f_hat))


def test_learn_input_errors(rng):
    x, y, w, mu, f_prev = random_problem(rng, 4, 1)
    bad = x.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        learn_template(bad, y, w, mu, None)
    with pytest.raises(ValueError):
        learn_template(x, y[:3], w, mu, None)
    with pytest.raises(ValueError):
        learn_template(x, y, -w, mu, None)
    with pytest.raises(ValueError):
        learn_template(x, y, w, mu, template_of(np.zeros((6, 6, 1))))


# -- correlation --------------------------------------------------------------

def test_fft_correlation_matches_spatial_loop(rng):
    worst = 0.0
    for _ in range(50):
        f, z = rng.standard_normal((8, 8, 3)), rng.standard_normal((8, 8, 3))
        got = correlate(template_of(f), z).values
        ref = spatial_correlation(f, z)
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    assert worst < 1e-6


def test_self_match_peaks_at_zero_shift(rng):
    x = rng.standard_normal((10, 10, 2))
    t = learn_template(x, make_gaussian_label(10, 10, 1.0), np.full((10, 10), 0.1), 0.0, None, iterations=None)
    r = correlate(t, x).values
    assert np.unravel_index(np.argmax(r), r.shape) == (0, 0)


def test_shift_theorem(rng):
    f, z = rng.standard_normal((8, 8, 1)), rng.standard_normal((8, 8, 1))
    base = correlate(template_of(f), z).values
    for dy, dx in [(1, 0), (0, 3), (-2, 5)]:
        shifted = correlate(template_of(f), np.roll(z, (dy, dx), axis=(0, 1))).values
        np.testing.assert_allclose(shifted, np.roll(base, (dy, dx), axis=(0, 1)), atol=1e-10)


def test_parseval_and_linearity(rng):
    f = rng.standard_normal((8, 8, 3))
    z1, z2 = rng.standard_normal((8, 8, 3)), rng.standard_normal((8, 8, 3))
    r = correlate(template_of(f), z1)
    assert np.sum(r.values ** 2) == pytest.approx(np.sum(np.abs(r.spectrum) ** 2) / 64, rel=1e-6)
    a, b = 1.7, -0.4
    lhs = correlate(template_of(f), a * z1 + b * z2).values
    rhs = a * r.values + b * correlate(template_of(f), z2).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9)


def test_correlate_dim_mismatch(rng):
    with pytest.raises(ValueError):
        correlate(template_of(rng.standard_normal((8, 8, 3))), rng.standard_normal((8, 8, 2)))


# -- peak location ------------------------------------------------------------

def test_locate_single_bin():
    m = np.zeros((9, 9))
    m[7, 2] = 1.0
    dx, dy, score = locate(m)
    assert (dx, dy) == (2.0, -2.0) and score == 1.0


def test_locate_gaussian_bump_subcell():
    n, sigma, cx, cy = 32, 2.0, 2.3, -1.7
    k = np.fft.fftfreq(n) * n
    m = np.exp(-((k[None, :] - cx) ** 2 + (k[:, None] - cy) ** 2) / (2 * sigma ** 2))
    # oracle: argmax of the continuous bump on a 64x upsampled grid
    fine = np.arange(-8 * 64, 8 * 64) / 64.0
    ox = fine[np.argmax(np.exp(-(fine - cx) ** 2 / (2 * sigma ** 2)))]
    oy = fine[np.argmax(np.exp(-(fine - cy) ** 2 / (2 * sigma ** 2)))]
    dx, dy, score = locate(m)
    assert abs(dx - ox) < 0.05 and abs(dy - oy) < 0.05
    assert score >= m.max()


def test_locate_uniform_map_tie_break():
    dx, dy, score = locate(np.full((6, 6), 0.5))
    assert (dx, dy) == (0.0, 0.0) and score == pytest.approx(0.5)


def test_locate_empty_map():
    with pytest.raises(ValueError):
        locate(np.zeros((0, 0)))


# -- appearance proposals -----------------------------------------------------

@pytest.fixture(scope="module")
def static_frame():
    return Frame(static_scene(2).frames[0], index=1)


BOX = BoundingBox(100, 70, 40, 40)


def test_static_scene_proposal_stays_put(static_frame, cn_table):
    app = STRCF(DCFParams(), cn_table)
    app.init(static_frame, BOX)
    prop = app.propose(Frame(static_frame.pixels, index=2))
    assert np.hypot(prop.box.cx - BOX.cx, prop.box.cy - BOX.cy) < 0.5
    assert prop.scale_index == 2


def test_zoomed_object_selects_larger_scale(static_frame, cn_table):
    app = STRCF(DCFParams(), cn_table)
    app.init(static_frame, BOX)
    m = cv2.getRotationMatrix2D(BOX.center, 0.0, 1.02)
    zoomed = cv2.warpAffine(static_frame.pixels, m, (static_frame.width, static_frame.height),
                            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    prop = app.propose(Frame(zoomed, index=2))
    assert prop.scale_index == 3
    assert prop.box.w == pytest.approx(BOX.w * 1.02)


def test_five_scales_five_correlations(static_frame, cn_table, monkeypatch):
    app = STRCF(DCFParams(), cn_table)
    app.init(static_frame, BOX)
    calls = []
    real = dcf.correlate
    monkeypatch.setattr(dcf, "correlate", lambda t, z: calls.append(1) or real(t, z))
    prop = app.propose(static_frame)
    assert len(calls) == 5 and len(prop.scale_scores) == 5


def test_propose_requires_init(static_frame):
    with pytest.raises(RuntimeError):
        STRCF().propose(static_frame)


def test_similarity_normalized_to_training_sample(static_frame, cn_table, rng):
    app = STRCF(DCFParams(), cn_table)
    t = app.init(static_frame, BOX)
    assert app.similarity(t, static_frame, BOX) == pytest.approx(1.0, abs=0.05)
    noise = Frame(rng.integers(0, 256, static_frame.pixels.shape, dtype=np.uint8))
    assert app.similarity(t, noise, BOX) < 0.2
    assert app.similarity(t, static_frame, BoundingBox(0, 0, 0, 0)) == 0.0
