"""Deterministic solvers on uniform grids.

The single-particle density f lives on a uniform 1-D grid of cell averages,
the pair density g on the tensor-product 2-D grid. Transport of g is
semi-Lagrangian: target cell centers are traced back along the exact pair
flow and the density is interpolated (bi)linearly, with zero read outside
the domain. The time marching of the coupled system evaluates the integral
(mild) form of the dynamics step by step with trapezoidal quadrature and a
fixed-point iteration for the new time slice.

The instantaneous-limit collision operators deposit mass with linear
(cloud-in-cell) weights, so cell mass and first moment are conserved by
construction: every gain deposit is paired with an equal loss at the source
states, and a linear deposit represents its target coordinate exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Params
from .particles import parse_initial

__all__ = [
    "Grid1D",
    "Grid2D",
    "TraceField",
    "grid_from_initial",
    "zero_grid2",
    "product_grid2",
    "transport_semigroup_model1",
    "picard_solve_model1",
    "Model1GridResult",
    "quasistationary_g",
    "apply_q1",
    "apply_q2",
    "solve_instantaneous",
    "InstantaneousResult",
    "trace_gbar",
    "solve_model2_mild",
    "Model2Result",
]

BOUNDARY_MASS_WARN = 1e-8


@dataclass
class Grid1D:
    """Cell-averaged density on a uniform grid over [lo, hi]."""

    lo: float
    hi: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"lo < hi required, got [{self.lo}, {self.hi}]")
        if self.n < 8:
            raise ValueError(f"n >= 8 required, got {self.n}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValueError("values must have shape (n,)")

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.dx

    def mass(self) -> float:
        return float(self.values.sum()) * self.dx

    def copy(self) -> "Grid1D":
        return Grid1D(self.lo, self.hi, self.n, self.values.copy())

    def interp(self, pos) -> np.ndarray:
        """Linear interpolation of the cell-center values; zero outside."""
        return _interp1(self.values, self.lo, self.dx, self.n, np.asarray(pos, float))


@dataclass
class Grid2D:
    """Cell-averaged pair density on the square grid [lo, hi]^2."""

    lo: float
    hi: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"lo < hi required, got [{self.lo}, {self.hi}]")
        if self.n < 8:
            raise ValueError(f"n >= 8 required, got {self.n}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n, self.n):
            raise ValueError("values must have shape (n, n)")

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.dx

    def mass(self) -> float:
        return float(self.values.sum()) * self.dx * self.dx

    def marginal(self) -> Grid1D:
        """One-particle marginal, integrated over the partner state."""
        return Grid1D(self.lo, self.hi, self.n, self.values.sum(axis=1) * self.dx)

    def asymmetry(self) -> float:
        return float(np.abs(self.values - self.values.T).max())

    def copy(self) -> "Grid2D":
        return Grid2D(self.lo, self.hi, self.n, self.values.copy())


@dataclass
class TraceField:
    """Pair density restricted to the diagonal, per 1-D cell."""

    lo: float
    hi: float
    n: int
    values: np.ndarray

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.dx


def grid_from_initial(initial: str, lo: float, hi: float, n: int, mass: float) -> Grid1D:
    """Cell-averaged density of a named initial distribution.

    uniform(a,b) is averaged exactly over cells; gaussian(mean,sd) is
    evaluated at cell centers. two-point data has no grid density.
    """
    name, a, b = parse_initial(initial)
    if name == "two-point":
        raise ValueError(
            "two-point initial data has no grid density; use the particle engine"
        )
    edges = lo + np.arange(n + 1) * (hi - lo) / n
    if name == "uniform":
        cover = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
        values = mass / (b - a) * cover / ((hi - lo) / n)
    else:
        if b <= 0:
            raise ValueError("gaussian initial data on a grid requires sd > 0")
        x = 0.5 * (edges[:-1] + edges[1:])
        values = mass * np.exp(-0.5 * ((x - a) / b) ** 2) / (b * math.sqrt(2 * math.pi))
    return Grid1D(lo, hi, n, values)


def zero_grid2(lo: float, hi: float, n: int) -> Grid2D:
    return Grid2D(lo, hi, n, np.zeros((n, n)))


def product_grid2(f: Grid1D, pair_mass: float) -> Grid2D:
    """Symmetric product pair density f x f scaled to total mass pair_mass."""
    m = f.mass()
    if m <= 0:
        raise ValueError("product pair density needs a positive-mass f")
    scale = pair_mass / (m * m)
    return Grid2D(f.lo, f.hi, f.n, scale * f.values[:, None] * f.values[None, :])


def _interp1(v: np.ndarray, lo: float, dx: float, n: int, pos: np.ndarray) -> np.ndarray:
    fi = (pos - lo) / dx - 0.5
    inside = (fi >= 0.0) & (fi <= n - 1.0)
    fi = np.clip(fi, 0.0, n - 1.0)
    i0 = np.minimum(fi.astype(np.int64), n - 2)
    th = fi - i0
    out = (1.0 - th) * v[i0] + th * v[i0 + 1]
    return np.where(inside, out, 0.0)


def _interp2(v: np.ndarray, lo: float, dx: float, n: int,
             x: np.ndarray, y: np.ndarray) -> np.ndarray:
    fx = (x - lo) / dx - 0.5
    fy = (y - lo) / dx - 0.5
    inside = (fx >= 0.0) & (fx <= n - 1.0) & (fy >= 0.0) & (fy <= n - 1.0)
    fx = np.clip(fx, 0.0, n - 1.0)
    fy = np.clip(fy, 0.0, n - 1.0)
    i0 = np.minimum(fx.astype(np.int64), n - 2)
    j0 = np.minimum(fy.astype(np.int64), n - 2)
    tx = fx - i0
    ty = fy - j0
    flat = v.ravel()
    base = i0 * n + j0
    out = (
        (1.0 - tx) * ((1.0 - ty) * flat[base] + ty * flat[base + 1])
        + tx * ((1.0 - ty) * flat[base + n] + ty * flat[base + n + 1])
    )
    return np.where(inside, out, 0.0)


def _deposit(pos: np.ndarray, mass: np.ndarray, lo: float, dx: float, n: int) -> np.ndarray:
    """Cloud-in-cell deposition onto cell centers; exact in total mass and
    in first moment for interior targets."""
    fi = (pos - lo) / dx - 0.5
    i0 = np.clip(fi.astype(np.int64), 0, n - 2)
    th = fi - i0
    idx = np.concatenate([i0, i0 + 1])
    wts = np.concatenate([mass * (1.0 - th), mass * th])
    return np.bincount(idx, weights=wts, minlength=n)


def _warn_boundary(mass_edge: float, mass_total: float, what: str) -> None:
    if mass_total > 0 and mass_edge > BOUNDARY_MASS_WARN * mass_total:
        warnings.warn(
            f"{what}: boundary cells carry {mass_edge / mass_total:.2e} of the "
            "total mass; enlarge the domain",
            RuntimeWarning,
            stacklevel=3,
        )


def _check_boundary_1d(f: Grid1D, what: str) -> None:
    edge = (float(f.values[0]) + float(f.values[-1])) * f.dx
    _warn_boundary(edge, f.mass(), what)


def transport_semigroup_model1(g: Grid2D, t: float, params: Params) -> Grid2D:
    """Exact-flow semi-Lagrangian transport of the pair density over time t.

    Each target cell center is traced back along the alignment flow (the
    half-gap expands by e^t backwards) and g is interpolated bilinearly;
    the prefactor e^{(1-gamma)t} accounts for volume contraction and the
    collision-ending decay.
    """
    if not (t >= 0):
        raise ValueError(f"t >= 0 required, got {t}")
    if t == 0.0:
        return g.copy()
    c = g.centers
    mid = 0.5 * (c[:, None] + c[None, :])
    half = 0.5 * (c[:, None] - c[None, :])
    grow = math.exp(t) * half
    vals = _interp2(g.values, g.lo, g.dx, g.n, mid + grow, mid - grow)
    return Grid2D(g.lo, g.hi, g.n, math.exp((1.0 - params.gamma) * t) * vals)


def _segment_steps(t_end: float, dt: float, report_times) -> list[tuple[float, int]]:
    """Split [0, t_end] into report segments, each subdivided into equal
    steps of size <= dt, landing exactly on every report time."""
    if report_times is None:
        marks = [t_end]
    else:
        marks = sorted(float(t) for t in report_times)
        if marks and marks[-1] > t_end + 1e-9:
            raise ValueError("report times must not exceed t_end")
        if not marks or abs(marks[-1] - t_end) > 1e-9:
            marks = marks + [t_end]
    segs = []
    prev = 0.0
    for m in marks:
        if m <= prev + 1e-12:
            continue
        segs.append((m, max(1, math.ceil((m - prev) / dt - 1e-9))))
        prev = m
    return segs


@dataclass
class Model1GridResult:
    """Report-time slices of the coupled (f, g) solution."""

    times: list[float]
    fs: list[Grid1D]
    gs: list[Grid2D]

    def index_of(self, t: float) -> int:
        for i, ti in enumerate(self.times):
            if abs(ti - t) < 1e-9:
                return i
        raise ValueError(f"time {t} not among the recorded times")


def picard_solve_model1(
    f0: Grid1D,
    g0: Grid2D,
    params: Params,
    t_end: float,
    dt: float,
    *,
    report_times=None,
    report_every: int = 1,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> Model1GridResult:
    """March the coupled alignment system in its integral form.

    Per step the two update integrals are evaluated by the trapezoidal rule
    (the pairing-loss weight F from the running free mass, the transported
    terms via the exact-flow semigroup) and the new slice is fixed-point
    iterated until the combined grid-L1 change drops below tol. The scale
    parameter of params makes the pair dynamics fast (transport over
    dt/epsilon, source lam/epsilon), which is the rescaled system; epsilon=1
    is the plain model.
    """
    if not (dt > 0):
        raise ValueError(f"dt > 0 required, got {dt}")
    if (f0.lo, f0.hi, f0.n) != (g0.lo, g0.hi, g0.n):
        raise ValueError("f0 and g0 must share the same grid")
    scale = float(np.abs(g0.values).max())
    if g0.asymmetry() > 1e-9 * max(scale, 1e-300):
        raise ValueError("g0 must be symmetric")
    _check_boundary_1d(f0, "picard_solve_model1 f0")

    lam, gam, eps = params.lam, params.gamma, params.epsilon
    dx = f0.dx
    n = f0.n
    f = f0.values.copy()
    g = g0.values.copy()
    times = [0.0]
    fs = [Grid1D(f0.lo, f0.hi, n, f.copy())]
    gs = [Grid2D(f0.lo, f0.hi, n, g.copy())]

    t = 0.0
    step_index = 0
    for seg_end, n_sub in _segment_steps(t_end, dt, report_times):
        h = (seg_end - t) / n_sub
        tau = h / eps
        for _ in range(n_sub):
            gw = Grid2D(f0.lo, f0.hi, n, g)
            sg = transport_semigroup_model1(gw, tau, params).values
            ff = f[:, None] * f[None, :]
            sff = transport_semigroup_model1(
                Grid2D(f0.lo, f0.hi, n, ff), tau, params
            ).values
            g_marg = g.sum(axis=1) * dx
            m_f0 = f.sum() * dx
            f_new = f
            g_new = g
            prev_f = None
            converged = False
            for _ in range(max_iter):
                m_f1 = f_new.sum() * dx
                fweight = math.exp(-2.0 * lam * 0.5 * h * (m_f0 + m_f1))
                g_new = sg + (lam / eps) * 0.5 * h * (sff + f_new[:, None] * f_new[None, :])
                f_next = fweight * f + 2.0 * gam * 0.5 * h * (
                    fweight * g_marg + g_new.sum(axis=1) * dx
                )
                if prev_f is not None:
                    delta = float(np.abs(f_next - prev_f).sum()) * dx
                    if delta < tol:
                        f_new = f_next
                        converged = True
                        break
                prev_f = f_next
                f_new = f_next
            if not converged:
                raise RuntimeError(
                    f"inner iteration did not converge in {max_iter} sweeps at "
                    f"t = {t:.6g}; reduce dt"
                )
            g_new = sg + (lam / eps) * 0.5 * h * (sff + f_new[:, None] * f_new[None, :])
            f = f_new
            g = g_new
            t += h
            step_index += 1
            record = (
                report_times is None and step_index % report_every == 0
            ) or abs(t - seg_end) < 1e-12 * max(1.0, seg_end)
            if record and (not times or abs(t - times[-1]) > 1e-12):
                times.append(t)
                fs.append(Grid1D(f0.lo, f0.hi, n, f.copy()))
                gs.append(Grid2D(f0.lo, f0.hi, n, g.copy()))
                _check_boundary_1d(fs[-1], "picard_solve_model1 f")
        t = seg_end
    return Model1GridResult(times, fs, gs)


def _s_quadrature(lam: float, gamma: float, m_f: float, tol: float, step=None):
    """Trapezoidal nodes/weights on [0, s_max] for collision-duration
    integrals; the truncation point keeps the neglected mass below tol."""
    if not (tol > 0):
        raise ValueError(f"tol > 0 required, got {tol}")
    if m_f <= 0:
        return None
    arg = lam * m_f * m_f / (gamma * tol)
    if arg <= 1.0:
        return None
    s_max = math.log(arg) / gamma
    ds = step if step is not None else min(0.05, 1.0 / (20.0 * gamma))
    n_s = max(1, math.ceil(s_max / ds - 1e-9))
    nodes = np.linspace(0.0, s_max, n_s + 1)
    h = s_max / n_s
    w = np.full(n_s + 1, h)
    w[0] = w[-1] = 0.5 * h
    return nodes, w


def quasistationary_g(f: Grid1D, params: Params, tol: float) -> Grid2D:
    """Pair density in instantaneous balance with f: the collision-duration
    integral of the transported product f f*, truncated once the neglected
    mass is below tol."""
    if np.any(f.values < 0):
        raise ValueError("f must be nonnegative")
    lam, gam = params.lam, params.gamma
    quad = _s_quadrature(lam, gam, f.mass(), tol)
    n = f.n
    if quad is None:
        return zero_grid2(f.lo, f.hi, n)
    nodes, wts = quad
    c = f.centers
    mid = 0.5 * (c[:, None] + c[None, :])
    half = 0.5 * (c[:, None] - c[None, :])
    acc = np.zeros((n, n))
    for s, w in zip(nodes, wts):
        grow = math.exp(s) * half
        fp = _interp1(f.values, f.lo, f.dx, n, mid + grow)
        fm = _interp1(f.values, f.lo, f.dx, n, mid - grow)
        acc += (lam * w * math.exp((1.0 - gam) * s)) * fp * fm
    return Grid2D(f.lo, f.hi, n, acc)


def apply_q1(f: Grid1D, params: Params, *, s_tol: float = 1e-7,
             s_step: float | None = None) -> Grid1D:
    """Time-derivative field of the instantaneous random-duration collision
    operator, assembled in weak form.

    For every ordered cell pair and duration node, the post-collisional
    states receive linear deposits of the collision flux while the same flux
    is removed at the two source cells, so total mass and first moment
    cancel by construction.
    """
    if np.any(f.values < 0):
        raise ValueError("f must be nonnegative")
    lam, gam = params.lam, params.gamma
    n = f.n
    dx = f.dx
    m_f = f.mass()
    out = np.zeros(n)
    quad = _s_quadrature(lam, gam, m_f, s_tol, s_step if s_step is not None
                         else min(0.1, 1.0 / (10.0 * gam)))
    if quad is None:
        return Grid1D(f.lo, f.hi, n, out)
    nodes, wts = quad
    c = f.centers
    mid = (0.5 * (c[:, None] + c[None, :])).ravel()
    half = (0.5 * (c[:, None] - c[None, :])).ravel()
    pair_mass = (f.values[:, None] * f.values[None, :]).ravel() * (dx * dx)
    gain = np.zeros(n)
    sig_total = 0.0
    for s, w in zip(nodes, wts):
        sig_w = 2.0 * lam * gam * math.exp(-gam * s) * w
        sig_total += sig_w
        shrink = math.exp(-s) * half
        pos = np.concatenate([mid + shrink, mid - shrink])
        q = 0.5 * sig_w * pair_mass
        gain += _deposit(pos, np.concatenate([q, q]), f.lo, dx, n)
    loss = sig_total * m_f * f.values * dx
    return Grid1D(f.lo, f.hi, n, (gain - loss) / dx)


def apply_q2(f: Grid1D, params: Params) -> Grid1D:
    """Time-derivative field of the sticky collision operator: both
    participants of each collision deposit at their common midpoint."""
    if np.any(f.values < 0):
        raise ValueError("f must be nonnegative")
    lam = params.lam
    n = f.n
    dx = f.dx
    c = f.centers
    mid = (0.5 * (c[:, None] + c[None, :])).ravel()
    pair_mass = (f.values[:, None] * f.values[None, :]).ravel() * (dx * dx)
    gain = _deposit(mid, 2.0 * lam * pair_mass, f.lo, dx, n)
    loss = 2.0 * lam * f.mass() * f.values * dx
    return Grid1D(f.lo, f.hi, n, (gain - loss) / dx)


@dataclass
class InstantaneousResult:
    """Report-time slices of the limit-equation solution plus the mass
    removed by undershoot clamping."""

    times: list[float]
    fields: list[Grid1D]
    clamped_mass: list[float]

    def field_at(self, t: float) -> Grid1D:
        for ti, fi in zip(self.times, self.fields):
            if abs(ti - t) < 1e-9:
                return fi
        raise ValueError(f"time {t} not among the recorded times")


def solve_instantaneous(
    f0: Grid1D,
    params: Params,
    operator: str,
    t_end: float,
    dt: float,
    *,
    report_times=None,
    report_every: int = 1,
    s_tol: float = 1e-7,
) -> InstantaneousResult:
    """Explicit midpoint (RK2) marching of the limit equation df/dt = Q(f,f).

    Negative undershoot is clamped to zero and the clamped mass accounted,
    keeping the conservation checks honest.
    """
    if operator not in ("q1", "q2"):
        raise ValueError(f"operator must be q1 or q2, got {operator!r}")
    m0 = f0.mass()
    if dt * 4.0 * params.lam * m0 > 0.5 + 1e-12:
        raise ValueError(
            f"unstable dt: dt*4*lam*M = {dt * 4.0 * params.lam * m0:.3g} > 0.5"
        )
    _check_boundary_1d(f0, "solve_instantaneous f0")

    def rate(vals: np.ndarray) -> np.ndarray:
        grid = Grid1D(f0.lo, f0.hi, f0.n, vals)
        if operator == "q1":
            return apply_q1(grid, params, s_tol=s_tol).values
        return apply_q2(grid, params).values

    f = f0.values.copy()
    clamped = 0.0
    times = [0.0]
    fields = [f0.copy()]
    clamped_series = [0.0]
    t = 0.0
    step_index = 0
    for seg_end, n_sub in _segment_steps(t_end, dt, report_times):
        h = (seg_end - t) / n_sub
        for _ in range(n_sub):
            stage = np.maximum(f + 0.5 * h * rate(f), 0.0)
            raw = f + h * rate(stage)
            neg = raw < 0.0
            clamped += -float(raw[neg].sum()) * f0.dx
            f = np.where(neg, 0.0, raw)
            t += h
            step_index += 1
            record = (
                report_times is None and step_index % report_every == 0
            ) or abs(t - seg_end) < 1e-12 * max(1.0, seg_end)
            if record and abs(t - times[-1]) > 1e-12:
                times.append(t)
                fields.append(Grid1D(f0.lo, f0.hi, f0.n, f.copy()))
                clamped_series.append(clamped)
        t = seg_end
    return InstantaneousResult(times, fields, clamped_series)


def trace_gbar(g0: Grid2D, f_history, t: float, params: Params) -> TraceField:
    """Diagonal trace of the pair density at time t for the constant-speed
    model: the initial data slides along the shifted anti-diagonal while the
    collision history integral accumulates the products of past f slices.

    f_history is a sequence of (time, Grid1D) covering [0, t]; t must be one
    of the history times.
    """
    hist = sorted(f_history, key=lambda p: p[0])
    if not hist or hist[0][0] > 1e-9 or hist[-1][0] < t - 1e-9:
        raise ValueError("f_history must cover [0, t]")
    upto = [(ti, fi) for ti, fi in hist if ti <= t + 1e-9]
    if abs(upto[-1][0] - t) > 1e-9:
        raise ValueError("t must be one of the history times")
    ref = upto[0][1]
    c = ref.centers
    vals = _interp2(g0.values, g0.lo, g0.dx, g0.n, c + 0.5 * t, c - 0.5 * t)
    if len(upto) > 1:
        ts = np.array([p[0] for p in upto])
        w = np.zeros(len(upto))
        w[:-1] += 0.5 * np.diff(ts)
        w[1:] += 0.5 * np.diff(ts)
        acc = np.zeros(ref.n)
        for (ti, fi), wi in zip(upto, w):
            shift = 0.5 * (t - ti)
            acc += wi * fi.interp(c + shift) * fi.interp(c - shift)
        vals = vals + params.lam * acc
    return TraceField(ref.lo, ref.hi, ref.n, vals)


@dataclass
class Model2Result:
    """Report-time slices of the constant-speed model solution.

    The pair density is reconstructed on demand from the stored step-level
    history; the diagonal trace comes for free from the solver's own
    integrals.
    """

    lo: float
    hi: float
    n: int
    params: Params
    times: list[float]
    fs: list[Grid1D]
    gbars: list[TraceField]
    step_times: np.ndarray = field(repr=False)
    f_hist: np.ndarray = field(repr=False)  # (n_steps+1, n)
    g0: Grid2D = field(repr=False)

    def g_at(self, t: float) -> Grid2D:
        """Pair density at a recorded step time via the integral form:
        free-streamed initial data plus the accumulated source history.
        On the diagonal the outward back-trace direction is tied to the
        upper side; both one-sided limits agree by symmetry."""
        k = int(np.argmin(np.abs(self.step_times - t)))
        if abs(self.step_times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not a step time of this solve")
        c = self.g0.centers
        x, y = np.meshgrid(c, c, indexing="ij")
        sgn = np.where(x >= y, 1.0, -1.0)
        vals = _interp2(
            self.g0.values, self.lo, self.g0.dx, self.g0.n,
            x + 0.5 * t * sgn, y - 0.5 * t * sgn,
        )
        ts = self.step_times[: k + 1]
        if len(ts) > 1:
            w = np.zeros(len(ts))
            w[:-1] += 0.5 * np.diff(ts)
            w[1:] += 0.5 * np.diff(ts)
            dxg = self.g0.dx
            acc = np.zeros((self.g0.n, self.g0.n))
            for j, (tj, wj) in enumerate(zip(ts, w)):
                back = 0.5 * (t - tj) * sgn
                fj = self.f_hist[j]
                fp = _interp1(fj, self.lo, dxg, self.n, (x + back).ravel()).reshape(x.shape)
                fm = _interp1(fj, self.lo, dxg, self.n, (y - back).ravel()).reshape(x.shape)
                acc += wj * fp * fm
            vals = vals + self.params.lam * acc
        return Grid2D(self.lo, self.hi, self.g0.n, vals)


def solve_model2_mild(
    f0: Grid1D,
    g0: Grid2D,
    params: Params,
    t_end: float,
    dt: float,
    *,
    tol: float = 1e-10,
    max_iter: int = 50,
    report_every: int = 1,
) -> Model2Result:
    """March the constant-speed model in its integral form for f.

    The new time slice enters its own update through the pairing-loss
    weight and the endpoint of the collision-history integral, so each step
    is fixed-point iterated; all quadratures are trapezoidal. The diagonal
    trace is the by-product g0 term plus the history integral.
    """
    if not (dt > 0):
        raise ValueError(f"dt > 0 required, got {dt}")
    if (f0.lo, f0.hi, f0.n) != (g0.lo, g0.hi, g0.n):
        raise ValueError("f0 and g0 must share the same grid")
    scale = float(np.abs(g0.values).max())
    if g0.asymmetry() > 1e-9 * max(scale, 1e-300):
        raise ValueError("g0 must be symmetric")
    _check_boundary_1d(f0, "solve_model2_mild f0")

    lam = params.lam
    n = f0.n
    dx = f0.dx
    c = f0.centers
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    h = t_end / n_steps
    step_times = np.arange(n_steps + 1) * h

    f_hist = np.empty((n_steps + 1, n))
    f_hist[0] = f0.values
    diag0 = _interp2(g0.values, g0.lo, g0.dx, n, c + 0.0, c - 0.0)
    a_terms = [diag0]          # g0(phi + s/2, phi - s/2) at each step time
    b_terms = [np.zeros(n)]    # collision-history integrals at each step time
    m_f = [f0.mass()]
    cum = [0.0]                # cumulative integral of M_f

    times = [0.0]
    fs = [f0.copy()]
    gbars = [TraceField(f0.lo, f0.hi, n, diag0 + lam * b_terms[0])]

    for m in range(1, n_steps + 1):
        s = step_times[m]
        a_terms.append(_interp2(g0.values, g0.lo, g0.dx, n, c + 0.5 * s, c - 0.5 * s))
        # history part of the inner integral: nodes r = t_0 .. t_{m-1}
        w_inner = np.full(m + 1, h)
        w_inner[0] = w_inner[-1] = 0.5 * h
        b_known = np.zeros(n)
        for j in range(m):
            shift = 0.5 * (s - step_times[j])
            fj = f_hist[j]
            b_known += w_inner[j] * (
                _interp1(fj, f0.lo, dx, n, c + shift)
                * _interp1(fj, f0.lo, dx, n, c - shift)
            )
        w_outer = np.full(m + 1, h)
        w_outer[0] = w_outer[-1] = 0.5 * h
        a_stack = np.stack(a_terms)          # (m+1, n)
        b_stack = np.stack(b_terms)          # (m, n) so far; endpoint appended per iterate
        f_guess = f_hist[m - 1].copy()
        prev = None
        converged = False
        for _ in range(max_iter):
            m_f_new = float(f_guess.sum()) * dx
            cum_new = cum[m - 1] + 0.5 * h * (m_f[m - 1] + m_f_new)
            call = np.array(cum + [cum_new])  # cumulative at t_0..t_m
            fweights = np.exp(-2.0 * lam * (cum_new - call))
            b_end = b_known + w_inner[-1] * f_guess * f_guess
            source = a_stack + lam * np.vstack([b_stack, b_end[None, :]])
            f_next = fweights[0] * f0.values + 4.0 * (
                (w_outer[:, None] * fweights[:, None] * source).sum(axis=0)
            )
            if prev is not None:
                delta = float(np.abs(f_next - prev).sum()) * dx
                if delta < tol:
                    f_guess = f_next
                    converged = True
                    break
            prev = f_next
            f_guess = f_next
        if not converged:
            raise RuntimeError(
                f"inner iteration did not converge in {max_iter} sweeps at "
                f"t = {s:.6g}; reduce dt (the contraction needs a small window)"
            )
        f_hist[m] = f_guess
        m_f.append(float(f_guess.sum()) * dx)
        cum.append(cum[m - 1] + 0.5 * h * (m_f[m - 1] + m_f[m]))
        b_terms.append(b_known + w_inner[-1] * f_guess * f_guess)
        if m % report_every == 0 or m == n_steps:
            times.append(s)
            fgrid = Grid1D(f0.lo, f0.hi, n, f_guess.copy())
            fs.append(fgrid)
            gbars.append(TraceField(f0.lo, f0.hi, n, a_terms[m] + lam * b_terms[m]))
            _check_boundary_1d(fgrid, "solve_model2_mild f")
    return Model2Result(
        lo=f0.lo, hi=f0.hi, n=n, params=params, times=times, fs=fs,
        gbars=gbars, step_times=step_times, f_hist=f_hist, g0=g0.copy(),
    )
