"""Weighted-particle engine for the four collision models.

An ensemble holds N equally weighted particles, split into free singles and
interacting pairs. Pairing is tau-leaped: per step the number of new pairs
is Poisson with mean lam*w*n_f^2*dt (the per-unordered-pair rate 2*lam*w
that reproduces the kinetic mass flux -2*lam*M_f^2), and the selected pairs
are disjoint. Pair internals are exact: each model-1 pair draws its
exponential collision lifetime when it forms and is released with the exact
flow at the exact elapsed duration; model-2 pairs are released at the exact
alignment time at the exact midpoint.

Pairs are stored as (midpoint, half-gap, remaining internal duration): the
flows only touch the half-gap, so the conserved pair sums live in an
untouched midpoint array and particle count conservation is exact by
construction.

Determinism: one numpy PCG64 generator per run, seeded from SimSpec.seed.
Per step the draw order is fixed (pairing count; partner selection if any;
model-1 lifetimes if any), so a (spec, seed) pair reproduces bit-identical
runs. Replica seeds are spawned as SeedSequence([seed, replica_index]).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .core import Params
from .diagnostics import moments_of
from .moments import MomentVector

__all__ = [
    "SimSpec",
    "Ensemble",
    "RunReport",
    "parse_initial",
    "sample_initial",
    "init_ensemble",
    "step_model1",
    "step_model2",
    "step_instantaneous_q1",
    "step_instantaneous_q2",
    "run",
]

MODELS = ("model1", "model2", "inst_q1", "inst_q2")

# per-step event-probability guard from the step preconditions
MAX_EVENT_PROB = 0.1

# internal step ramp dt(t) = (RAMP_DT0 + RAMP_RATE*t) * 3/rho, tuned so the
# tau-leap rate-freezing bias stays below the 3-SE oracle bands at N=1e5
RAMP_DT0 = 5e-4
RAMP_RATE = 4e-3


_INITIAL_RE = re.compile(r"^\s*([a-zA-Z_-]+)\s*\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)\s*$")


def parse_initial(spec: str) -> tuple[str, float, float]:
    """Parse a sampler spec like 'gaussian(0, 1)' into (name, a, b)."""
    m = _INITIAL_RE.match(spec)
    if not m:
        raise ValueError(
            f"malformed initial sampler {spec!r}; expected name(a,b) with "
            "name in uniform|gaussian|two-point"
        )
    name = m.group(1).replace("_", "-").lower()
    if name not in ("uniform", "gaussian", "two-point"):
        raise ValueError(
            f"unknown initial sampler {name!r}; known: uniform, gaussian, two-point"
        )
    a, b = float(m.group(2)), float(m.group(3))
    if name == "uniform" and not a < b:
        raise ValueError(f"uniform(a,b) requires a < b, got ({a}, {b})")
    if name == "gaussian" and not b >= 0:
        raise ValueError(f"gaussian(mean,sd) requires sd >= 0, got sd={b}")
    return name, a, b


def sample_initial(spec: str, n: int, rng: np.random.Generator) -> np.ndarray:
    name, a, b = parse_initial(spec)
    if name == "uniform":
        return rng.uniform(a, b, n)
    if name == "gaussian":
        return rng.normal(a, b, n)
    return np.where(rng.random(n) < 0.5, a, b)


@dataclass(frozen=True)
class SimSpec:
    """Configuration of one particle run."""

    model: str
    params: Params
    n_particles: int = 100_000
    mass: float = 1.0
    t_end: float = 10.0
    dt_report: float = 0.5
    initial: str = "gaussian(0,1)"
    pair_fraction: float = 0.0
    seed: int = 42
    report_times: tuple[float, ...] | None = None
    step_scale: float = 1.0  # >1 loosens the bias ramp (endpoint-only runs)
    keep_states: bool = False  # snapshot raw states at report times

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.n_particles < 2:
            raise ValueError(f"n_particles >= 2 required, got {self.n_particles}")
        if not (self.t_end > 0):
            raise ValueError(f"t_end > 0 required, got {self.t_end}")
        if not (self.dt_report > 0):
            raise ValueError(f"dt_report > 0 required, got {self.dt_report}")
        if not (self.mass > 0):
            raise ValueError(f"mass > 0 required, got {self.mass}")
        parse_initial(self.initial)


@dataclass
class Ensemble:
    """Weighted particle population: free singles plus interacting pairs."""

    weight: float
    free: np.ndarray
    pair_mid: np.ndarray
    pair_half: np.ndarray
    pair_remaining: np.ndarray  # internal-clock time to release
    rng: np.random.Generator
    rng_seed: int
    time: float = 0.0
    n_pairings: int = 0
    n_releases: int = 0

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_mid)

    @property
    def total_mass(self) -> float:
        return self.weight * (self.n_free + 2 * self.n_pairs)

    def pair_members(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pair_mid + self.pair_half, self.pair_mid - self.pair_half

    def state_sum(self) -> float:
        phi, phi_star = self.pair_members()
        return float(self.free.sum() + phi.sum() + phi_star.sum())


def _pair_remaining(model: str, half: np.ndarray, gamma: float,
                    rng: np.random.Generator) -> np.ndarray:
    if model in ("model1", "inst_q1"):
        return rng.exponential(scale=1.0 / gamma, size=len(half))
    return 2.0 * np.abs(half)  # model2: internal gap closes at unit rate


def init_ensemble(spec: SimSpec) -> Ensemble:
    """Sample the initial population and split the requested mass into pairs.

    Pair states are two independent draws from the single-particle sampler
    (symmetric joint law); instantaneous modes require pair_fraction 0.
    """
    if not (0.0 <= spec.pair_fraction <= 1.0):
        raise ValueError(f"pair fraction must be in [0, 1], got {spec.pair_fraction}")
    if spec.model in ("inst_q1", "inst_q2") and spec.pair_fraction != 0.0:
        raise ValueError("instantaneous modes require pair_fraction = 0")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    states = sample_initial(spec.initial, spec.n_particles, rng)
    w = spec.mass / spec.n_particles
    k = int(round(spec.pair_fraction * spec.n_particles / 2.0))
    k = min(k, spec.n_particles // 2)
    if k > 0:
        order = rng.permutation(spec.n_particles)
        a = states[order[:k]]
        b = states[order[k : 2 * k]]
        free = states[order[2 * k :]]
        mid = 0.5 * (a + b)
        half = 0.5 * (a - b)
        remaining = _pair_remaining(spec.model, half, spec.params.gamma, rng)
    else:
        free = states
        mid = np.empty(0)
        half = np.empty(0)
        remaining = np.empty(0)
    return Ensemble(
        weight=w, free=free, pair_mid=mid, pair_half=half,
        pair_remaining=remaining, rng=rng, rng_seed=spec.seed,
    )


def _check_pairing_guard(e: Ensemble, dt: float, params: Params) -> None:
    load = params.lam * e.weight * e.n_free * dt
    if load > MAX_EVENT_PROB + 1e-12:
        raise ValueError(
            f"step too large: lam*w*n_f*dt = {load:.3g} exceeds {MAX_EVENT_PROB}"
        )


def _form_pairs(e: Ensemble, dt: float, params: Params, model: str) -> None:
    """Tau-leaped pairing: Poisson event count at the current free count,
    disjoint uniformly random partners."""
    n_f = e.n_free
    mean = params.lam * e.weight * n_f * n_f * dt
    k = int(e.rng.poisson(mean)) if mean > 0 else 0
    k = min(k, n_f // 2)
    if k == 0:
        return
    idx = e.rng.choice(n_f, size=2 * k, replace=False)
    a = e.free[idx[:k]]
    b = e.free[idx[k:]]
    mid = 0.5 * (a + b)
    half = 0.5 * (a - b)
    remaining = _pair_remaining(model, half, params.gamma, e.rng)
    keep = np.ones(n_f, dtype=bool)
    keep[idx] = False
    e.free = e.free[keep]
    e.pair_mid = np.concatenate([e.pair_mid, mid])
    e.pair_half = np.concatenate([e.pair_half, half])
    e.pair_remaining = np.concatenate([e.pair_remaining, remaining])
    e.n_pairings += k


def step_model1(e: Ensemble, dt: float, params: Params) -> Ensemble:
    """One step of the stochastic-duration alignment model (in place).

    Releases pairs whose pre-drawn exponential lifetime elapses within the
    step (post states from the exact flow at the exact lifetime), advances
    survivors by dt/epsilon on the collision clock, then forms new pairs.
    """
    eps = params.epsilon
    if params.gamma * dt / eps > MAX_EVENT_PROB + 1e-12:
        raise ValueError(
            f"step too large: gamma*dt/epsilon = {params.gamma * dt / eps:.3g} "
            f"exceeds {MAX_EVENT_PROB}"
        )
    _check_pairing_guard(e, dt, params)
    ds = dt / eps
    if e.n_pairs:
        done = e.pair_remaining <= ds
        if done.any():
            h_rel = e.pair_half[done] * np.exp(-e.pair_remaining[done])
            m_rel = e.pair_mid[done]
            e.free = np.concatenate([e.free, m_rel + h_rel, m_rel - h_rel])
            e.n_releases += int(done.sum())
            keep = ~done
            e.pair_mid = e.pair_mid[keep]
            e.pair_half = e.pair_half[keep]
            e.pair_remaining = e.pair_remaining[keep]
        e.pair_half = e.pair_half * math.exp(-ds)
        e.pair_remaining = e.pair_remaining - ds
    _form_pairs(e, dt, params, "model1")
    e.time += dt
    return e


def step_model2(e: Ensemble, dt: float, params: Params) -> Ensemble:
    """One step of the deterministic-duration alignment model (in place).

    Pairs whose remaining gap closes within the step release both members at
    the exact midpoint; survivors shrink their gap by dt/epsilon.
    """
    _check_pairing_guard(e, dt, params)
    ds = dt / params.epsilon
    if e.n_pairs:
        done = e.pair_remaining <= ds
        if done.any():
            m_rel = e.pair_mid[done]
            e.free = np.concatenate([e.free, m_rel, m_rel])
            e.n_releases += int(done.sum())
            keep = ~done
            e.pair_mid = e.pair_mid[keep]
            e.pair_half = e.pair_half[keep]
            e.pair_remaining = e.pair_remaining[keep]
        e.pair_half = np.sign(e.pair_half) * (np.abs(e.pair_half) - 0.5 * ds)
        e.pair_remaining = e.pair_remaining - ds
    _form_pairs(e, dt, params, "model2")
    e.time += dt
    return e


def _instantaneous_events(e: Ensemble, dt: float, params: Params):
    if e.n_pairs:
        raise ValueError("instantaneous modes operate on pair-free ensembles")
    _check_pairing_guard(e, dt, params)
    n_f = e.n_free
    mean = params.lam * e.weight * n_f * n_f * dt
    k = int(e.rng.poisson(mean)) if mean > 0 else 0
    k = min(k, n_f // 2)
    if k == 0:
        return None
    idx = e.rng.choice(n_f, size=2 * k, replace=False)
    return idx[:k], idx[k:]


def step_instantaneous_q1(e: Ensemble, dt: float, params: Params) -> Ensemble:
    """Instantaneous collisions with exponentially distributed duration:
    each colliding pair jumps to its post-collisional state in place."""
    ev = _instantaneous_events(e, dt, params)
    if ev is not None:
        ia, ib = ev
        s = e.rng.exponential(scale=1.0 / params.gamma, size=len(ia))
        a = e.free[ia]
        b = e.free[ib]
        mid = 0.5 * (a + b)
        half = 0.5 * (a - b) * np.exp(-s)
        e.free[ia] = mid + half
        e.free[ib] = mid - half
        e.n_pairings += len(ia)
        e.n_releases += len(ia)
    e.time += dt
    return e


def step_instantaneous_q2(e: Ensemble, dt: float, params: Params) -> Ensemble:
    """Sticky collisions: both partners exit at their common midpoint."""
    ev = _instantaneous_events(e, dt, params)
    if ev is not None:
        ia, ib = ev
        mid = 0.5 * (e.free[ia] + e.free[ib])
        e.free[ia] = mid
        e.free[ib] = mid
        e.n_pairings += len(ia)
        e.n_releases += len(ia)
    e.time += dt
    return e


_STEPPERS = {
    "model1": step_model1,
    "model2": step_model2,
    "inst_q1": step_instantaneous_q1,
    "inst_q2": step_instantaneous_q2,
}


@dataclass
class RunReport:
    """Diagnostics time series of one particle run."""

    times: list[float] = field(default_factory=list)
    moments: list[MomentVector] = field(default_factory=list)
    entropy: list[float] | None = None
    pairings: list[int] = field(default_factory=list)
    releases: list[int] = field(default_factory=list)
    snapshots: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    phi_inf: float = 0.0
    seed: int = 0


def _report_times(spec: SimSpec) -> list[float]:
    if spec.report_times is not None:
        ts = sorted(spec.report_times)
        if ts and ts[0] <= 0:
            raise ValueError("explicit report times must be positive")
        return list(ts)
    n = max(1, int(round(spec.t_end / spec.dt_report)))
    ts = [i * spec.dt_report for i in range(1, n + 1)]
    if ts[-1] < spec.t_end - 1e-12:
        ts.append(spec.t_end)
    else:
        ts[-1] = spec.t_end
    return ts


def _dt_limit(spec: SimSpec, t: float) -> float:
    """Internal step target: event-probability guards plus the linear bias ramp."""
    p = spec.params
    cap = MAX_EVENT_PROB / (p.lam * spec.mass)  # lam*w*n_f*dt <= 0.1 for any n_f
    if spec.model == "model1":
        cap = min(cap, MAX_EVENT_PROB * p.epsilon / p.gamma)
    if spec.model in ("model1", "model2"):
        rho = 2.0 * p.lam * spec.mass + (p.gamma / p.epsilon if spec.model == "model1" else 1.0)
        cap = min(cap, spec.step_scale * (RAMP_DT0 + RAMP_RATE * t) * 3.0 / rho)
    else:
        cap = 0.5 * cap  # keeps the fitted-rate bias of the instant modes small
    return cap


def run(spec: SimSpec) -> RunReport:
    """Run the configured model to t_end, recording diagnostics at the report
    grid. Fully deterministic for a fixed (spec, seed)."""
    e = init_ensemble(spec)
    stepper = _STEPPERS[spec.model]
    phi0 = moments_of(e, 0.0)
    m0 = phi0.total_mass
    phi_inf = phi0.total_first / m0 if m0 != 0.0 else 0.0
    report = RunReport(phi_inf=phi_inf, seed=spec.seed)

    def record(t):
        report.times.append(t)
        report.moments.append(moments_of(e, phi_inf))
        report.pairings.append(e.n_pairings)
        report.releases.append(e.n_releases)
        if spec.keep_states:
            phi, phi_star = e.pair_members()
            report.snapshots.append((e.free.copy(), phi, phi_star))

    record(0.0)
    t = 0.0
    for t_next in _report_times(spec):
        if t_next - t <= 0:
            continue
        while t < t_next - 1e-12 * t_next:
            h = min(_dt_limit(spec, t), t_next - t)
            stepper(e, h, spec.params)
            t += h
        t = t_next
        record(t)
    return report
