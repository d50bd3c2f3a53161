"""Spatial-temporally regularized correlation filter (the appearance model).

The filter ``f`` minimizes, over all D channels,

    1/2 ||sum_d corr(x_d, f_d) - y||^2 + 1/2 sum_d ||w . f_d||^2 + mu/2 ||f - f_prev||^2

with spatial-domain norms. ``corr`` is circular cross-correlation, so the
response to a sample ``z`` is ``ifft2(sum_d conj(f_hat_d) * z_hat_d)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import BoundingBox
from .features import (Frame, apply_window, compute_cn, compute_hog, crop_region, gray_mean_channel,
                       hann_window, to_gray)

log = logging.getLogger(__name__)


def fft2(x: np.ndarray) -> np.ndarray:
    return np.fft.fft2(x, axes=(0, 1))


def ifft2(x: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(x, axes=(0, 1))


def make_gaussian_label(nx: int, ny: int, sigma: float) -> np.ndarray:
    """Circularly centered Gaussian of shape (ny, nx) with value 1 at bin (0, 0)."""
    if nx < 1 or ny < 1 or sigma <= 0:
        raise ValueError("label needs positive dims and sigma")
    ky = np.fft.fftfreq(ny) * ny
    kx = np.fft.fftfreq(nx) * nx
    return np.exp(-0.5 * (ky[:, None] ** 2 + kx[None, :] ** 2) / sigma ** 2)


@dataclass
class Template:
    f_hat: np.ndarray
    label_hat: np.ndarray
    spatial_weight: np.ndarray
    mu: float
    frame_learned: int = 0
    # peak minus mean of the response on the training sample
    self_contrast: float = 1.0
    iterations: int = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.f_hat.shape

    def spatial(self) -> np.ndarray:
        return np.real(ifft2(self.f_hat))


def objective(f: np.ndarray, x: np.ndarray, y: np.ndarray, weight: np.ndarray, mu: float,
              f_prev: np.ndarray | None = None) -> float:
    """Regularized regression cost for a spatial filter ``f`` (ny, nx, D)."""
    r = np.real(ifft2(np.sum(np.conj(fft2(f)) * fft2(x), axis=2)))
    cost = 0.5 * np.sum((r - y) ** 2) + 0.5 * np.sum((weight[:, :, None] * f) ** 2)
    if f_prev is not None and mu > 0:
        cost += 0.5 * mu * np.sum((f - f_prev) ** 2)
    return float(cost)


def learn_template(x: np.ndarray, label: np.ndarray, weight: np.ndarray, mu: float,
                   f_prev: Template | None = None, *, iterations: int | None = None,
                   penalty: float = 1.0, penalty_step: float = 10.0, penalty_max: float = 1e4,
                   tol: float = 1e-7, max_iterations: int = 5000, frame: int = 0) -> Template:
    """Fit the filter to sample ``x`` (ny, nx, D) by ADMM.

    The splitting keeps a spatial copy ``g`` of the filter that carries the
    weight penalty, with a scaled dual ``h`` for ``f = g``. With ``iterations``
    set, a fixed schedule is run: the penalty starts at ``penalty`` and is
    multiplied by ``penalty_step`` (capped at ``penalty_max``) after each
    pass. With ``iterations=None`` the solver runs to convergence using
    residual balancing of the penalty.

    ``f_prev=None`` drops the temporal term regardless of ``mu``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    label = np.asarray(label, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.shape[:2] != label.shape or weight.shape != label.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, label {label.shape}, weight {weight.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(label)) and np.all(np.isfinite(weight))):
        raise ValueError("non-finite input to learn_template")
    if np.any(weight < 0) or mu < 0:
        raise ValueError("weight and mu must be non-negative")
    if f_prev is not None and f_prev.f_hat.shape != x.shape:
        raise ValueError(f"previous template {f_prev.f_hat.shape} does not match sample {x.shape}")

    xf = fft2(x)
    yf = fft2(label)
    w2 = weight ** 2
    if f_prev is None:
        mu = 0.0
        prev = np.zeros_like(xf)
    else:
        prev = f_prev.f_hat

    sxx = np.sum(np.real(np.conj(xf) * xf), axis=2)
    base = xf * np.conj(yf)[:, :, None] + mu * prev
    gamma = float(penalty)
    g = np.zeros(x.shape)
    h = np.zeros(x.shape)
    f_hat = np.zeros_like(xf)
    converge = iterations is None
    n_iter = max_iterations if converge else int(iterations)
    scale = np.sqrt(x.size)
    done = 0
    for it in range(n_iter):
        s = mu + gamma
        b = base + gamma * fft2(g - h)
        xb = np.sum(np.conj(xf) * b, axis=2)
        f_hat = (b - xf * (xb / (s + sxx))[:, :, None]) / s
        f = np.real(ifft2(f_hat))
        g_old = g
        g = gamma * (f + h) / (w2[:, :, None] + gamma)
        h = h + f - g
        done = it + 1
        if converge:
            r_norm = np.linalg.norm(f - g)
            s_norm = gamma * np.linalg.norm(g - g_old)
            eps_pri = tol * (scale + max(np.linalg.norm(f), np.linalg.norm(g)))
            eps_dual = tol * (scale + gamma * np.linalg.norm(h))
            if it > 0 and r_norm <= eps_pri and s_norm <= eps_dual:
                break
            if r_norm > 10 * s_norm:
                gamma *= 2.0
                h /= 2.0
            elif s_norm > 10 * r_norm:
                gamma /= 2.0
                h *= 2.0
        else:
            # the dual is kept scaled, so it follows the penalty
            new_gamma = min(penalty_step * gamma, penalty_max)
            h *= gamma / new_gamma
            gamma = new_gamma

    resp = np.real(ifft2(np.sum(np.conj(f_hat) * xf, axis=2)))
    contrast = float(resp.max() - resp.mean())
    return Template(f_hat=f_hat, label_hat=yf, spatial_weight=weight, mu=float(mu), frame_learned=frame,
                    self_contrast=contrast if contrast > 1e-12 else 1.0, iterations=done)


@dataclass
class ResponseMap:
    values: np.ndarray
    spectrum: np.ndarray

    @property
    def peak(self) -> float:
        return float(self.values.max())


def correlate(template: Template | np.ndarray, z: np.ndarray) -> ResponseMap:
    """Response of the filter over every cyclic shift of sample ``z``."""
    f_hat = template.f_hat if isinstance(template, Template) else template
    z = np.asarray(z)
    if z.ndim == 2:
        z = z[:, :, None]
    if z.shape != f_hat.shape:
        raise ValueError(f"sample {z.shape} does not match template {f_hat.shape}")
    spec = np.sum(np.conj(f_hat) * fft2(z), axis=2)
    return ResponseMap(np.real(ifft2(spec)), spec)


def _signed(idx: int, n: int) -> int:
    return idx - n if idx > (n - 1) // 2 else idx


def locate(response: ResponseMap | np.ndarray, newton_iterations: int = 5) -> tuple[float, float, float]:
    """Sub-cell peak ``(dx, dy, score)`` with shifts wrapped to the signed range.

    Starts at the integer argmax (lowest flat index wins ties) and refines it
    with Newton steps on the trigonometric interpolant of the map.
    """
    if isinstance(response, ResponseMap):
        values, spec = response.values, response.spectrum
    else:
        values = np.asarray(response, dtype=np.float64)
        spec = np.fft.fft2(values)
    if values.size == 0:
        raise ValueError("empty response map")
    ny, nx = values.shape
    row, col = np.unravel_index(int(np.argmax(values)), values.shape)
    py, px = float(_signed(int(row), ny)), float(_signed(int(col), nx))
    score = float(values[row, col])

    wy = 2j * np.pi * np.fft.fftfreq(ny)
    wx = 2j * np.pi * np.fft.fftfreq(nx)
    n = ny * nx
    y0, x0 = py, px
    for _ in range(newton_iterations):
        ey = np.exp(wy * py)
        ex = np.exp(wx * px)
        sy = spec * wy[:, None]
        sx = spec * wx[None, :]
        gy = np.real(ey @ sy @ ex) / n
        gx = np.real(ey @ sx @ ex) / n
        hyy = np.real(ey @ (sy * wy[:, None]) @ ex) / n
        hxx = np.real(ey @ (sx * wx[None, :]) @ ex) / n
        hxy = np.real(ey @ (sy * wx[None, :]) @ ex) / n
        det = hyy * hxx - hxy * hxy
        if not (det > 0 and hyy < 0):
            break
        step_y = (hxx * gy - hxy * gx) / det
        step_x = (hyy * gx - hxy * gy) / det
        ny_, nx_ = py - step_y, px - step_x
        if abs(ny_ - y0) > 1.0 or abs(nx_ - x0) > 1.0:
            break
        py, px = ny_, nx_
    if (py, px) != (y0, x0):
        ey = np.exp(wy * py)
        ex = np.exp(wx * px)
        refined = float(np.real(ey @ spec @ ex) / n)
        if refined >= score:
            score = refined
        else:
            py, px = y0, x0
    return px, py, score


# --------------------------------------------------------------------------
# tracker-level appearance model


def _normalize_block(block: np.ndarray) -> np.ndarray:
    energy = float(np.sum(block * block))
    if energy <= 1e-12:
        return block
    return block * math.sqrt(block.size / energy)


@dataclass
class AppearanceProposal:
    box: BoundingBox
    score: float
    scale_index: int
    sc: float
    scale_scores: list[float] = field(default_factory=list)


@dataclass
class DCFParams:
    cell_size: int = 4
    padding: float = 5.0
    min_sample_area: float = 150.0 ** 2
    max_sample_area: float = 200.0 ** 2
    output_sigma_factor: float = 1.0 / 16.0
    reg_window_min: float = 1e-3
    reg_window_max: float = 1e5
    mu: float = 15.0
    admm_iterations: int = 2
    init_penalty: float = 1.0
    penalty_step: float = 10.0
    max_penalty: float = 10000.0
    newton_iterations: int = 5
    num_scales: int = 5
    scale_step: float = 1.02
    scale_damping: float = 0.995
    use_color: bool = True


class STRCF:
    """Appearance tracker: scale-pyramid search plus regularized filter update.

    Penalty and regularization constants follow the usual STRCF convention
    where the data term is averaged over the T feature cells; they are mapped
    onto :func:`learn_template`'s plain sum-of-squares cost by scaling the
    spatial weight by sqrt(T) and mu and the ADMM penalty by T.
    """

    def __init__(self, params: DCFParams | None = None, cn_table: np.ndarray | None = None):
        self.p = params or DCFParams()
        self.cn_table = cn_table if self.p.use_color else None
        self.template: Template | None = None
        self.center = (0.0, 0.0)
        self.sc = 1.0
        self.frame_index = 0

    # geometry ------------------------------------------------------------

    def init(self, frame: Frame, box: BoundingBox) -> Template:
        if not box.is_valid() or box.w < 1 or box.h < 1:
            raise ValueError("degenerate box")
        p = self.p
        if not frame.is_color:
            self.cn_table = None
        self.center = box.center
        side = math.sqrt(box.w * box.h) * p.padding
        area = side * side
        self.sc = 1.0
        if area > p.max_sample_area:
            self.sc = math.sqrt(area / p.max_sample_area)
        elif area < p.min_sample_area:
            self.sc = math.sqrt(area / p.min_sample_area)
        self.base_size = (box.w / self.sc, box.h / self.sc)
        cs = p.cell_size
        self.crop = max(2, int(round(side / self.sc / cs))) * cs
        self.n = self.crop // cs
        sigma = math.sqrt(max(1, math.floor(self.base_size[0] / cs)) * max(1, math.floor(self.base_size[1] / cs)))
        self.label = make_gaussian_label(self.n, self.n, sigma * p.output_sigma_factor)
        self.window = hann_window(self.n, self.n)
        self.reg_window = self._bowl()
        k = np.arange(p.num_scales) - (p.num_scales - 1) // 2
        self.scale_exponents = k
        self.scale_factors = p.scale_step ** k.astype(np.float64)
        # sampled region at least 5 px wide; target no larger than the frame
        self.min_sc = max(5.0 / self.crop, 1.0 / max(self.base_size))
        self.max_sc = max(min(frame.width / self.base_size[0], frame.height / self.base_size[1]), self.sc)
        self.frame_index = frame.index
        x = self.sample(frame, self.center, self.sc)
        self.template = self._learn(x, mu=0.0, f_prev=None)
        return self.template

    def _bowl(self) -> np.ndarray:
        n = self.n
        w = np.full((n, n), self.p.reg_window_max)
        rw = max(1, int(math.floor(self.base_size[0] / self.p.cell_size)))
        rh = max(1, int(math.floor(self.base_size[1] / self.p.cell_size)))
        # filter taps index sample positions, so the cheap region is the patch center
        ys = np.clip(n // 2 + np.arange(rh) - rh // 2, 0, n - 1)
        xs = np.clip(n // 2 + np.arange(rw) - rw // 2, 0, n - 1)
        w[np.ix_(ys, xs)] = self.p.reg_window_min
        return w

    @property
    def target_size(self) -> tuple[float, float]:
        return (self.base_size[0] * self.sc, self.base_size[1] * self.sc)

    @property
    def box(self) -> BoundingBox:
        w, h = self.target_size
        return BoundingBox.from_center(self.center[0], self.center[1], w, h)

    # features -------------------------------------------------------------

    def features(self, patch: np.ndarray) -> np.ndarray:
        cs = self.p.cell_size
        gray = to_gray(patch)
        blocks = [_normalize_block(compute_hog(gray, cs))]
        if self.cn_table is not None:
            blocks.append(_normalize_block(compute_cn(patch, self.cn_table, cs)))
        blocks.append(_normalize_block(gray_mean_channel(gray, cs)))
        return apply_window(np.concatenate(blocks, axis=2), self.window)

    def sample(self, frame: Frame, center: tuple[float, float], sc: float) -> np.ndarray:
        src = self.crop * sc
        patch = crop_region(frame.pixels, center[0], center[1], src, src, self.crop, self.crop)
        return self.features(patch)

    def _learn(self, x: np.ndarray, mu: float, f_prev: Template | None) -> Template:
        t = float(self.n * self.n)
        p = self.p
        return learn_template(
            x, self.label, self.reg_window * math.sqrt(t), mu * t, f_prev,
            iterations=p.admm_iterations, penalty=p.init_penalty * t,
            penalty_step=p.penalty_step, penalty_max=p.max_penalty * t, frame=self.frame_index)

    # tracking -------------------------------------------------------------

    def propose(self, frame: Frame, center: tuple[float, float] | None = None,
                sc: float | None = None) -> AppearanceProposal:
        """Search all scales around ``center`` and return the best box."""
        if self.template is None:
            raise RuntimeError("template not learned; call init() first")
        center = self.center if center is None else center
        sc = self.sc if sc is None else sc
        p = self.p
        best = None
        scores = []
        for i, factor in enumerate(self.scale_factors):
            z = self.sample(frame, center, sc * factor)
            dx, dy, score = locate(correlate(self.template, z), p.newton_iterations)
            damped = score if self.scale_exponents[i] == 0 else score * p.scale_damping
            scores.append(damped)
            if best is None or damped > best[0]:
                best = (damped, i, dx, dy, score)
        _, i, dx, dy, score = best
        step = p.cell_size * sc * self.scale_factors[i]
        new_center = (center[0] + dx * step, center[1] + dy * step)
        new_sc = float(np.clip(sc * self.scale_factors[i], self.min_sc, self.max_sc))
        w, h = self.base_size[0] * new_sc, self.base_size[1] * new_sc
        box = BoundingBox.from_center(new_center[0], new_center[1], w, h)
        return AppearanceProposal(box, score, i, new_sc, scores)

    def set_state(self, box: BoundingBox) -> None:
        """Move the filter's notion of position and scale to ``box``."""
        self.center = box.center
        sc = math.sqrt(max(box.w * box.h, 1e-9) / (self.base_size[0] * self.base_size[1]))
        self.sc = float(np.clip(sc, self.min_sc, self.max_sc))

    def update(self, frame: Frame, mu: float | None = None) -> Template:
        """Relearn the filter on a sample at the current state."""
        mu = self.p.mu if mu is None else mu
        self.frame_index = frame.index
        x = self.sample(frame, self.center, self.sc)
        self.template = self._learn(x, mu=mu, f_prev=self.template)
        return self.template

    def track(self, frame: Frame) -> BoundingBox:
        """Plain baseline step: search, move, update with the fixed mu."""
        prop = self.propose(frame)
        self.center = prop.box.center
        self.sc = prop.sc
        self.update(frame)
        return self.box

    def similarities(self, templates, frame: Frame, box: BoundingBox, radius: int = 1) -> list[float]:
        """Normalized local correlation peak of each template for a patch at ``box``.

        Features are sampled once at the box center and scale. The score is
        the response maximum within ``radius`` cells of zero shift minus the
        response mean, divided by the same quantity for the template on its
        own training sample. Subtracting the mean cancels the flat response
        that near-constant feature maps (noise, uniform regions) produce.
        Degenerate boxes score 0.
        """
        if not box.is_valid() or box.w < 1 or box.h < 1:
            return [0.0] * len(templates)
        sc = math.sqrt(box.w * box.h / (self.base_size[0] * self.base_size[1]))
        sc = float(np.clip(sc, self.min_sc, self.max_sc))
        zf = fft2(self.sample(frame, box.center, sc))
        idx = np.r_[0:radius + 1, -radius:0] % self.n
        out = []
        for t in templates:
            values = np.real(ifft2(np.sum(np.conj(t.f_hat) * zf, axis=2)))
            out.append(float((values[np.ix_(idx, idx)].max() - values.mean()) / t.self_contrast))
        return out

    def similarity(self, template: Template, frame: Frame, box: BoundingBox, radius: int = 1) -> float:
        return self.similarities((template,), frame, box, radius)[0]
