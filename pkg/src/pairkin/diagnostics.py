"""Moment extraction, entropy bookkeeping, distances, and the scale sweep.

Everything here is pure computation on values produced by the other
modules. Dispatch is by duck typing (ensemble-like objects expose
weight/free/pair_members, grid-like objects expose values/dx/centers), so
this module imports no solver modules at import time; the scale sweep pulls
them in lazily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Params
from .moments import EquilibriumModel1, MomentVector

__all__ = [
    "EntropyValue",
    "DistanceReport",
    "EquilibriumDistances",
    "moments_of",
    "entropy",
    "w1_distance",
    "equilibrium_distance",
    "fit_decay_rate",
    "epsilon_sweep",
]


@dataclass(frozen=True)
class EntropyValue:
    """Entropy H, its exchange dissipation, and the pair mass entering the
    balance dH/dt = -dissipation + m_g."""

    h: float
    dissipation: float
    m_g: float


class EquilibriumDistances:
    """Scalar distances of a state from an equilibrium description."""

    __slots__ = ("mass_f", "mass_g", "w1_f", "spread_f")

    def __init__(self, mass_f, mass_g, w1_f, spread_f):
        self.mass_f = mass_f
        self.mass_g = mass_g
        self.w1_f = w1_f
        self.spread_f = spread_f

    def __iter__(self):
        return iter((self.mass_f, self.mass_g, self.w1_f, self.spread_f))

    def __repr__(self):
        return (
            f"EquilibriumDistances(mass_f={self.mass_f:.3e}, mass_g={self.mass_g:.3e}, "
            f"w1_f={self.w1_f:.3e}, spread_f={self.spread_f:.3e})"
        )


def _is_ensemble(obj) -> bool:
    return hasattr(obj, "pair_members") and hasattr(obj, "weight")


def _is_grid1d(obj) -> bool:
    return hasattr(obj, "values") and np.ndim(obj.values) == 1 and hasattr(obj, "dx")


def _is_grid2d(obj) -> bool:
    return hasattr(obj, "values") and np.ndim(obj.values) == 2 and hasattr(obj, "dx")


def _ensemble_moments(e, phi_inf: float) -> MomentVector:
    w = e.weight
    free = np.asarray(e.free, dtype=float)
    m_f = w * free.size
    i_f = w * float(free.sum())
    v_f = w * float(((free - phi_inf) ** 2).sum())
    phi, phi_star = e.pair_members()
    m_g = w * len(phi)
    i_g = w * 0.5 * float((phi + phi_star).sum())
    v_g = w * 0.5 * float(((phi - phi_inf) ** 2 + (phi_star - phi_inf) ** 2).sum())
    vbar = w * float(((phi - phi_star) ** 2).sum())
    return MomentVector(m_f, m_g, i_f, i_g, v_f, v_g, vbar)


def _grid1d_moments(f, phi_inf: float) -> MomentVector:
    x = f.centers
    v = f.values
    dx = f.dx
    return MomentVector(
        m_f=float(v.sum()) * dx,
        i_f=float((x * v).sum()) * dx,
        v_f=float(((x - phi_inf) ** 2 * v).sum()) * dx,
    )


def _grid2d_moments(g, phi_inf: float) -> MomentVector:
    x = g.centers
    v = g.values
    da = g.dx * g.dx
    row = v.sum(axis=1)  # integrate over the partner state
    col = v.sum(axis=0)
    gap2 = (x[:, None] - x[None, :]) ** 2
    return MomentVector(
        m_g=float(v.sum()) * da,
        i_g=float((x * row).sum()) * da,
        v_g=float(((x - phi_inf) ** 2 * row).sum()) * da,
        vbar_g=float((gap2 * v).sum()) * da,
    )


def moments_of(obj, phi_inf: float = 0.0) -> MomentVector:
    """Moment vector of an ensemble, a 1-D grid, a 2-D grid, or an (f, g) pair.

    Variance-type moments are centered at phi_inf. Pair contributions are
    symmetrized over the two members, matching the symmetric pair density.
    """
    if isinstance(obj, tuple) and len(obj) == 2:
        mf = _grid1d_moments(obj[0], phi_inf)
        mg = _grid2d_moments(obj[1], phi_inf)
        return MomentVector(mf.m_f, mg.m_g, mf.i_f, mg.i_g, mf.v_f, mg.v_g, mg.vbar_g)
    if _is_ensemble(obj):
        return _ensemble_moments(obj, phi_inf)
    if _is_grid1d(obj):
        return _grid1d_moments(obj, phi_inf)
    if _is_grid2d(obj):
        return _grid2d_moments(obj, phi_inf)
    raise TypeError(f"cannot extract moments from {type(obj).__name__}")


def entropy(f, g, params: Params) -> EntropyValue:
    """Entropy adapted to the pairing/ending exchange and its dissipation.

    H = sum f (log(lam f) - 1) dphi + sum g (log(gamma g) - 1) dphi^2 with
    the 0 log 0 = 0 convention per cell; the dissipation sums
    (lam f f* - gamma g) log(lam f f* / (gamma g)) over cells where both
    factors are positive, each term nonnegative by construction.
    """
    lam, gam = params.lam, params.gamma
    fv = f.values
    gv = g.values
    fpos = fv > 0.0
    h_f = float((fv[fpos] * (np.log(lam * fv[fpos]) - 1.0)).sum()) * f.dx
    gpos = gv > 0.0
    h_g = float((gv[gpos] * (np.log(gam * gv[gpos]) - 1.0)).sum()) * g.dx * g.dx
    prod = lam * fv[:, None] * fv[None, :]
    both = (prod > 0.0) & (gv > 0.0)
    a = prod[both]
    b = gam * gv[both]
    diss = float(((a - b) * np.log(a / b)).sum()) * g.dx * g.dx
    m_g = float(gv.sum()) * g.dx * g.dx
    return EntropyValue(h=h_f + h_g, dissipation=diss, m_g=m_g)


def _atoms(obj) -> tuple[np.ndarray, np.ndarray]:
    """Positions and weights of a distribution given as a grid, a sample
    array, or a (points, weights) pair."""
    if _is_grid1d(obj):
        return np.asarray(obj.centers, dtype=float), np.asarray(obj.values, dtype=float) * obj.dx
    if isinstance(obj, tuple) and len(obj) == 2:
        pts = np.asarray(obj[0], dtype=float)
        wts = np.asarray(obj[1], dtype=float)
        if pts.shape != wts.shape:
            raise ValueError("points and weights must have equal shapes")
        return pts, wts
    pts = np.asarray(obj, dtype=float)
    return pts, np.full(pts.shape, 1.0)


def w1_distance(a, b) -> float:
    """Wasserstein-1 distance between two one-dimensional distributions,
    each normalized to unit mass; the area between the two CDFs."""
    pa, wa = _atoms(a)
    pb, wb = _atoms(b)
    ma = float(wa.sum())
    mb = float(wb.sum())
    if pa.size == 0 or pb.size == 0 or ma <= 0.0 or mb <= 0.0:
        raise ValueError("w1_distance requires nonempty inputs with positive mass")
    pts = np.concatenate([pa, pb])
    sgn = np.concatenate([wa / ma, -wb / mb])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    cdf_diff = np.cumsum(sgn[order])[:-1]
    return float(np.abs(cdf_diff * np.diff(pts)).sum())


def equilibrium_distance(state, eq) -> EquilibriumDistances:
    """Distance of a state from an equilibrium: mass errors for both
    populations, the W1 distance of f/M_f from the point mass at phi_inf
    (the mean absolute deviation), and the spread sqrt(V_f)."""
    if isinstance(eq, EquilibriumModel1):
        m_f_inf, m_g_inf, phi_inf = eq.m_f_inf, eq.m_g_inf, eq.phi_inf
    else:
        m_f_inf, m_g_inf, phi_inf = eq
    mom = moments_of(state, phi_inf)
    if _is_ensemble(state):
        w = state.weight
        free = np.asarray(state.free, dtype=float)
        mad = w * float(np.abs(free - phi_inf).sum())
    else:
        f = state[0] if isinstance(state, tuple) else state
        mad = float((np.abs(f.centers - phi_inf) * f.values).sum()) * f.dx
    w1 = mad / mom.m_f if mom.m_f > 0 else 0.0
    return EquilibriumDistances(
        mass_f=abs(mom.m_f - m_f_inf),
        mass_g=abs(mom.m_g - m_g_inf),
        w1_f=w1,
        spread_f=math.sqrt(max(mom.v_f, 0.0)),
    )


def fit_decay_rate(times, values, *, rel_floor: float = 1e-13) -> float:
    """Exponential decay rate fitted by least squares on log(values).

    Entries at or below rel_floor times the peak are dropped (noise floor).
    Returns the positive rate mu with values ~ exp(-mu t).
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > rel_floor * v.max()
    if keep.sum() < 3:
        raise ValueError("need at least 3 usable points to fit a decay rate")
    slope = np.polyfit(t[keep], np.log(v[keep]), 1)[0]
    return -float(slope)


@dataclass(frozen=True)
class DistanceReport:
    """Distances between the rescaled runs and the instantaneous limit,
    per scale parameter and comparison time (means and standard errors
    over replicas)."""

    epsilons: tuple[float, ...]
    times: tuple[float, ...]
    f_w1: np.ndarray          # (n_eps, n_times)
    f_w1_se: np.ndarray
    marginal_w1: np.ndarray   # pooled pair members vs quasistationary marginal
    gap: np.ndarray           # E|phi - phi_star| under the pair population
    gap_se: np.ndarray
    gap_limit: np.ndarray     # (n_times,) quasistationary value

    def __post_init__(self):
        if not all(a > b for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly decreasing")


def _replica_seed(base_seed: int, eps_index: int, replica: int) -> int:
    ss = np.random.SeedSequence([base_seed, eps_index, replica])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def epsilon_sweep(
    base,
    epsilons,
    compare_times,
    *,
    replicas: int = 16,
    grid_lo: float = -6.0,
    grid_hi: float = 6.0,
    grid_n: int = 256,
    s_tol: float = 1e-8,
) -> DistanceReport:
    """Instantaneous-limit study: for each scale parameter run the rescaled
    pair model and compare against the limit solver.

    The limit f(t) comes from the deterministic instantaneous solver; the
    pair population is compared through its pooled one-particle marginal
    (W1 against the quasistationary marginal) and the mean gap E|phi-phi_star|
    against the quasistationary value. Initial pair mass is scaled by
    epsilon, matching scale-independent rescaled initial data.
    """
    from . import grids, particles  # lazy: avoids an import cycle

    eps_list = tuple(float(x) for x in epsilons)
    if not all(0.0 < x <= 1.0 for x in eps_list):
        raise ValueError("epsilons must lie in (0, 1]")
    if not all(a > b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    times = tuple(float(t) for t in compare_times)
    if not all(t > 0 for t in times) or list(times) != sorted(times):
        raise ValueError("compare times must be positive and increasing")
    if replicas < 2:
        raise ValueError("replicas >= 2 required for standard errors")

    p0 = base.params
    limit_params = Params(p0.lam, p0.gamma, 1.0)
    f0 = grids.grid_from_initial(base.initial, grid_lo, grid_hi, grid_n, base.mass)
    dt = min(0.5 / (4.0 * p0.lam * base.mass), times[0] / 8.0)
    limit = grids.solve_instantaneous(
        f0, limit_params, "q1", t_end=times[-1], dt=dt, report_times=times
    )
    f_limits = {t: limit.field_at(t) for t in times}
    gap_limit = np.empty(len(times))
    marginals = {}
    for j, t in enumerate(times):
        gq = grids.quasistationary_g(f_limits[t], limit_params, s_tol)
        x = gq.centers
        gaps = np.abs(x[:, None] - x[None, :])
        mass = gq.values.sum()
        gap_limit[j] = float((gaps * gq.values).sum() / mass) if mass > 0 else np.nan
        marginals[t] = gq.marginal()

    # smallest epsilon must admit steps within the guard at a sane budget
    min_dt = particles.MAX_EVENT_PROB * eps_list[-1] / p0.gamma
    if times[-1] / min_dt > 5e5:
        raise ValueError(
            f"epsilon = {eps_list[-1]} needs more than 5e5 steps to honor the "
            "step guard; raise epsilon or shorten the comparison window"
        )

    shape = (len(eps_list), len(times))
    f_w1 = np.empty(shape)
    f_w1_se = np.empty(shape)
    marg_w1 = np.empty(shape)
    gap = np.empty(shape)
    gap_se = np.empty(shape)
    for i, eps in enumerate(eps_list):
        per_rep_f = np.empty((replicas, len(times)))
        per_rep_marg = np.empty((replicas, len(times)))
        per_rep_gap = np.empty((replicas, len(times)))
        for r in range(replicas):
            spec = particles.SimSpec(
                model="model1",
                params=Params(p0.lam, p0.gamma, eps),
                n_particles=base.n_particles,
                mass=base.mass,
                t_end=times[-1],
                dt_report=base.dt_report,
                initial=base.initial,
                pair_fraction=base.pair_fraction * eps,
                seed=_replica_seed(base.seed, i, r),
                report_times=times,
                keep_states=True,
            )
            rep = particles.run(spec)
            for j, t in enumerate(times):
                free, phi, phi_star = rep.snapshots[1 + j]
                per_rep_f[r, j] = w1_distance(
                    (free, np.full(free.shape, spec.mass / spec.n_particles)),
                    f_limits[t],
                )
                if len(phi):
                    pooled = np.concatenate([phi, phi_star])
                    per_rep_marg[r, j] = w1_distance(pooled, marginals[t])
                    per_rep_gap[r, j] = float(np.abs(phi - phi_star).mean())
                else:
                    per_rep_marg[r, j] = np.nan
                    per_rep_gap[r, j] = np.nan
        f_w1[i] = per_rep_f.mean(axis=0)
        f_w1_se[i] = per_rep_f.std(axis=0, ddof=1) / math.sqrt(replicas)
        marg_w1[i] = np.nanmean(per_rep_marg, axis=0)
        gap[i] = np.nanmean(per_rep_gap, axis=0)
        gap_se[i] = np.nanstd(per_rep_gap, axis=0, ddof=1) / math.sqrt(replicas)
    return DistanceReport(
        epsilons=eps_list, times=times, f_w1=f_w1, f_w1_se=f_w1_se,
        marginal_w1=marg_w1, gap=gap, gap_se=gap_se, gap_limit=gap_limit,
    )
