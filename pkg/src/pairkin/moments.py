"""Closed moment systems for model 1 and the explicit equilibria.

The seven tracked moments are the masses (m_f, m_g), first moments
(i_f, i_g) and variance-type moments (v_f, v_g, vbar_g) of the free and
pair populations. For model 1 they satisfy a closed ODE system whose
solutions are the exact oracle for both the particle engine and the grid
solvers. The combinations m_f + 2 m_g and i_f + 2 i_g are conserved
identically (their right-hand sides cancel term by term, also in floating
point), and the variance block decays exponentially to zero.

Model 2 has no closed moment system; only its limiting masses have a
closed form (equilibrium_masses_model2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Params

__all__ = [
    "MomentVector",
    "MomentTrajectory",
    "EquilibriumModel1",
    "LayerState",
    "moment_rhs_model1",
    "rescaled_moment_rhs",
    "layer_rhs",
    "integrate_moments",
    "integrate_rescaled_moments",
    "equilibrium_model1",
    "equilibrium_masses_model2",
    "stability_matrix",
    "rk4_integrate",
]


@dataclass(frozen=True)
class MomentVector:
    """Mass, first-moment and variance-type moments of the two populations."""

    m_f: float = 0.0
    m_g: float = 0.0
    i_f: float = 0.0
    i_g: float = 0.0
    v_f: float = 0.0
    v_g: float = 0.0
    vbar_g: float = 0.0

    @property
    def total_mass(self) -> float:
        return self.m_f + 2.0 * self.m_g

    @property
    def total_first(self) -> float:
        return self.i_f + 2.0 * self.i_g

    @property
    def total_variance(self) -> float:
        return self.v_f + 2.0 * self.v_g

    @property
    def mean_state(self) -> float:
        m = self.total_mass
        return self.total_first / m if m != 0.0 else 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.m_f, self.m_g, self.i_f, self.i_g, self.v_f, self.v_g, self.vbar_g]
        )

    @classmethod
    def from_array(cls, x) -> "MomentVector":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class MomentTrajectory:
    """Time series of moment vectors produced by a fixed-step integration."""

    times: np.ndarray
    values: np.ndarray  # shape (len(times), 7)

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def state(self, i: int) -> MomentVector:
        return MomentVector.from_array(self.values[i])

    @property
    def states(self) -> list[MomentVector]:
        return [MomentVector.from_array(row) for row in self.values]

    @property
    def final(self) -> MomentVector:
        return MomentVector.from_array(self.values[-1])


@dataclass(frozen=True)
class EquilibriumModel1:
    """Long-time limits of the model-1 moments for given conserved (M, I)."""

    m_f_inf: float
    m_g_inf: float
    i_f_inf: float
    i_g_inf: float
    phi_inf: float


@dataclass(frozen=True)
class LayerState:
    """Fast pair moments on the collision time scale tau = t / epsilon."""

    m_g_hat: float = 0.0
    i_g_hat: float = 0.0
    v_g_hat: float = 0.0
    vbar_g_hat: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.m_g_hat, self.i_g_hat, self.v_g_hat, self.vbar_g_hat])

    @classmethod
    def from_array(cls, x) -> "LayerState":
        return cls(*(float(v) for v in x))


def _rhs_terms(x: np.ndarray, lam: float, gamma: float, phi_inf: float):
    """Shared exchange terms; pairing gain `a` and ending loss `b` etc. are
    computed once so the conserved combinations cancel exactly in floating
    point."""
    m_f, m_g, i_f, i_g, v_f, v_g, vbar = x
    a = lam * m_f * m_f
    b = gamma * m_g
    c = lam * i_f * m_f
    e = gamma * i_g
    p = lam * m_f * v_f
    q = gamma * v_g
    excess = i_f - phi_inf * m_f
    inhom = 2.0 * lam * excess * excess
    return a, b, c, e, p, q, vbar, inhom


def moment_rhs_model1(x: MomentVector, params: Params, phi_inf: float) -> MomentVector:
    """Time derivative of the seven model-1 moments.

    phi_inf is the conserved mean state, computed once from the initial
    data by the caller; it enters only through the inhomogeneity of the
    vbar_g equation.
    """
    a, b, c, e, p, q, vbar, inhom = _rhs_terms(x.as_array(), params.lam, params.gamma, phi_inf)
    return MomentVector(
        m_f=2.0 * (b - a),
        m_g=a - b,
        i_f=2.0 * (e - c),
        i_g=c - e,
        v_f=2.0 * (q - p),
        v_g=p - q - vbar,
        vbar_g=2.0 * p - (2.0 + params.gamma) * vbar + inhom,
    )


def rescaled_moment_rhs(x: MomentVector, params: Params) -> MomentVector:
    """Moment derivatives for the fast/short collision scaling.

    The free-population (slow) equations are unchanged; the pair (fast)
    equations carry a 1/epsilon factor. The conserved mean is
    (i_f + 2 eps i_g)/(m_f + 2 eps m_g), constant along exact trajectories,
    so it is evaluated from the current state.
    """
    eps = params.epsilon
    if not (eps > 0):
        raise ValueError(f"epsilon > 0 required, got {eps}")
    denom = x.m_f + 2.0 * eps * x.m_g
    phi_inf = (x.i_f + 2.0 * eps * x.i_g) / denom if denom != 0.0 else 0.0
    a, b, c, e, p, q, vbar, inhom = _rhs_terms(x.as_array(), params.lam, params.gamma, phi_inf)
    return MomentVector(
        m_f=2.0 * (b - a),
        m_g=(a - b) / eps,
        i_f=2.0 * (e - c),
        i_g=(c - e) / eps,
        v_f=2.0 * (q - p),
        v_g=(p - q - vbar) / eps,
        vbar_g=(2.0 * p - (2.0 + params.gamma) * vbar + inhom) / eps,
    )


def layer_rhs(y: LayerState, frozen, params: Params) -> LayerState:
    """Fast-moment derivatives on the layer time scale with frozen slow data.

    frozen = (m_f0, i_f0, v_f0, phi_inf), the slow variables held at their
    initial values across the O(epsilon) transient.
    """
    m_f0, i_f0, v_f0, phi_inf = frozen
    lam, gamma = params.lam, params.gamma
    excess = i_f0 - phi_inf * m_f0
    return LayerState(
        m_g_hat=lam * m_f0 * m_f0 - gamma * y.m_g_hat,
        i_g_hat=lam * i_f0 * m_f0 - gamma * y.i_g_hat,
        v_g_hat=lam * m_f0 * v_f0 - gamma * y.v_g_hat - y.vbar_g_hat,
        vbar_g_hat=2.0 * lam * m_f0 * v_f0
        - (2.0 + gamma) * y.vbar_g_hat
        + 2.0 * lam * excess * excess,
    )


def rk4_integrate(fun, x0: np.ndarray, t_end: float, dt: float):
    """Classical fixed-step RK4; returns (times, values) with every step recorded.

    A final shortened step lands exactly on t_end.
    """
    if not (dt > 0):
        raise ValueError(f"dt > 0 required, got {dt}")
    if not (t_end >= 0):
        raise ValueError(f"t_end >= 0 required, got {t_end}")
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    times = [0.0]
    values = [x.copy()]
    t = 0.0
    while t < t_end - 1e-12 * max(1.0, t_end):
        h = min(dt, t_end - t)
        k1 = fun(x)
        k2 = fun(x + 0.5 * h * k1)
        k3 = fun(x + 0.5 * h * k2)
        k4 = fun(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        times.append(t)
        values.append(x.copy())
    return np.array(times), np.array(values)


def integrate_moments(
    x0: MomentVector, params: Params, t_end: float, dt: float
) -> MomentTrajectory:
    """Integrate the model-1 moment system with RK4 at fixed step dt.

    The conserved mean state is computed once from x0. Global error O(dt^4);
    the conserved combinations are flat to rounding.
    """
    m = x0.total_mass
    phi_inf = x0.total_first / m if m != 0.0 else 0.0
    lam, gamma = params.lam, params.gamma

    def fun(x):
        a, b, c, e, p, q, vbar, inhom = _rhs_terms(x, lam, gamma, phi_inf)
        return np.array(
            [2.0 * (b - a), a - b, 2.0 * (e - c), c - e,
             2.0 * (q - p), p - q - vbar,
             2.0 * p - (2.0 + gamma) * vbar + inhom]
        )

    times, values = rk4_integrate(fun, x0.as_array(), t_end, dt)
    return MomentTrajectory(times, values)


def integrate_rescaled_moments(
    x0: MomentVector, params: Params, t_end: float, dt: float | None = None
) -> MomentTrajectory:
    """Integrate the rescaled system; dt is capped at epsilon/10 to resolve
    the initial layer."""
    cap = params.epsilon / 10.0
    dt = cap if dt is None else min(dt, cap)

    def fun(x):
        d = rescaled_moment_rhs(MomentVector.from_array(x), params)
        return d.as_array()

    times, values = rk4_integrate(fun, x0.as_array(), t_end, dt)
    return MomentTrajectory(times, values)


def equilibrium_model1(params: Params, mass: float, first: float) -> EquilibriumModel1:
    """Explicit long-time limits of the model-1 moments.

    m_f_inf solves the pairing/ending balance lam*m_f^2 = gamma*m_g together
    with m_f + 2 m_g = M; the first moments follow with the same split and
    the conserved mean phi_inf = I/M.
    """
    if not (mass > 0):
        raise ValueError(f"M > 0 required, got {mass}")
    s = math.sqrt(1.0 + 8.0 * params.lam * mass / params.gamma)
    m_f = 2.0 * mass / (1.0 + s)
    m_g = 0.5 * (mass - m_f)
    phi = first / mass
    return EquilibriumModel1(
        m_f_inf=m_f, m_g_inf=m_g, i_f_inf=phi * m_f, i_g_inf=phi * m_g, phi_inf=phi
    )


def equilibrium_masses_model2(params: Params, mass: float) -> tuple[float, float]:
    """Limiting (m_f, m_g) of model 2: 2 m_g = lam m_f^2 with m_f + 2 m_g = M."""
    if not (mass > 0):
        raise ValueError(f"M > 0 required, got {mass}")
    s = math.sqrt(1.0 + 4.0 * params.lam * mass)
    m_f = 2.0 * mass / (1.0 + s)
    return m_f, 0.5 * (mass - m_f)


def _cubic_real_parts(c2: float, c1: float, c0: float) -> list[float]:
    """Real parts of the roots of x^3 + c2 x^2 + c1 x + c0 via the closed-form
    (Cardano / trigonometric) solution, with a Newton polish on real roots."""

    def poly(x):
        return ((x + c2) * x + c1) * x + c0

    def dpoly(x):
        return (3.0 * x + 2.0 * c2) * x + c1

    def polish(x):
        for _ in range(3):
            d = dpoly(x)
            if d == 0.0:
                break
            x -= poly(x) / d
        return x

    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc > 0.0:
        # one real root, one complex conjugate pair
        r = math.sqrt(disc)
        u = math.copysign(abs(-q / 2.0 + r) ** (1.0 / 3.0), -q / 2.0 + r)
        v = math.copysign(abs(-q / 2.0 - r) ** (1.0 / 3.0), -q / 2.0 - r)
        y1 = u + v
        real_root = polish(y1 - shift)
        pair_real = -0.5 * y1 - shift  # Re of the conjugate pair (root sum = -c2)
        return [real_root, pair_real, pair_real]
    if p == 0.0:
        return [polish(-shift)] * 3
    # three real roots
    m = 2.0 * math.sqrt(-p / 3.0)
    arg = max(-1.0, min(1.0, 3.0 * q / (p * m)))
    theta = math.acos(arg)
    return [
        polish(m * math.cos((theta - 2.0 * math.pi * k) / 3.0) - shift)
        for k in range(3)
    ]


def stability_matrix(params: Params, m_f_inf: float) -> tuple[np.ndarray, float]:
    """Limiting coefficient matrix of the variance block and its spectral abscissa.

    With a = lam * m_f_inf the matrix is
        [-2a  2g   0 ]
        [  a  -g  -1 ]
        [ 2a   0 -(2+g)]
    and all its eigenvalues have negative real part for every a, g > 0
    (Routh-Hurwitz). The maximum real part is computed from the closed-form
    cubic with a Newton polish, for determinism.
    """
    if not (m_f_inf > 0):
        raise ValueError(f"m_f_inf > 0 required, got {m_f_inf}")
    a = params.lam * m_f_inf
    g = params.gamma
    mat = np.array(
        [[-2.0 * a, 2.0 * g, 0.0], [a, -g, -1.0], [2.0 * a, 0.0, -(2.0 + g)]]
    )
    # characteristic polynomial x^3 + c2 x^2 + c1 x + c0
    c2 = -float(np.trace(mat))
    c1 = (
        mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        + mat[0, 0] * mat[2, 2] - mat[0, 2] * mat[2, 0]
        + mat[1, 1] * mat[2, 2] - mat[1, 2] * mat[2, 1]
    )
    det = (
        mat[0, 0] * (mat[1, 1] * mat[2, 2] - mat[1, 2] * mat[2, 1])
        - mat[0, 1] * (mat[1, 0] * mat[2, 2] - mat[1, 2] * mat[2, 0])
        + mat[0, 2] * (mat[1, 0] * mat[2, 1] - mat[1, 1] * mat[2, 0])
    )
    return mat, max(_cubic_real_parts(c2, float(c1), -float(det)))
