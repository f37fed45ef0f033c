"""Problem definitions: drift/diffusion coefficients and the constants ledger.

A ``ProblemSpec`` bundles the scalar drift f, scalar diffusion g, an initial
condition vanishing at the endpoints of (0,1), and the ledger of structural
constants (one-sided Lipschitz L1, coercivity L2/L3, growth L4/L5, diffusion
Lipschitz/growth L6..L8, H1 noise constants L9/L10, growth order q, and the
first Dirichlet eigenvalue lambda1).  Every long-time guarantee checked by the
experiment modules is an inequality between these numbers, so they are kept
explicit and verifiable here.

All types are immutable after construction and all functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

LAMBDA1_UNIT_INTERVAL = np.pi**2

_FD_STEP = 1e-6
_FD_RTOL = 1e-6


class HypothesisError(ValueError):
    """A theorem hypothesis fails; carries the offending margin."""

    def __init__(self, message: str, margin: float):
        super().__init__(f"{message} (margin={margin!r})")
        self.margin = margin


def _central_difference(f, x, step=_FD_STEP):
    e = step * np.maximum(1.0, np.abs(x))
    return (f(x + e) - f(x - e)) / (2.0 * e)


@dataclass(frozen=True)
class DriftSpec:
    """Scalar drift f with its derivative and growth order q >= 1."""

    f: Callable[[np.ndarray], np.ndarray]
    f_prime: Callable[[np.ndarray], np.ndarray]
    q: float = 1.0
    polynomial_coeffs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.q < 1.0:
            raise ValueError(f"growth order q must be >= 1, got {self.q}")
        grid = np.linspace(-5.0, 5.0, 101)
        fd = _central_difference(self.f, grid)
        fp = np.asarray(self.f_prime(grid), dtype=float)
        scale = np.maximum(1.0, np.abs(fd))
        if np.max(np.abs(fd - fp) / scale) > _FD_RTOL:
            raise ValueError("f_prime does not match finite differences of f")
        if self.polynomial_coeffs is not None:
            coeffs = np.asarray(self.polynomial_coeffs, dtype=float)
            ref = npoly.polyval(grid, coeffs)
            val = np.asarray(self.f(grid), dtype=float)
            if np.max(np.abs(ref - val)) > 1e-12 * np.max(1.0 + np.abs(ref)):
                raise ValueError("polynomial_coeffs do not reproduce f")


@dataclass(frozen=True)
class DiffusionSpec:
    """Scalar diffusion g; ``additive`` means g is constant."""

    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    additive: bool = False

    def __post_init__(self):
        grid = np.linspace(-5.0, 5.0, 101)
        gp = np.max(np.abs(np.asarray(self.g_prime(grid), dtype=float)))
        if self.additive and gp > 1e-14:
            raise ValueError("additive diffusion must have g_prime identically zero")
        if not self.additive and gp <= 1e-14:
            raise ValueError("g_prime vanishes on the sample grid; mark as additive")


@dataclass(frozen=True)
class ConstantsLedger:
    """Structural constants gating every stability/ergodicity statement.

    L1 and L2 may be negative; L3..L10 must be nonnegative.  The relation
    L1 <= L2 can always be arranged by enlarging L2, but sharp ledgers
    (e.g. the double-well drift with a negative L2) violate it on purpose,
    so it is reported by ``verify_conditions`` rather than enforced here.
    """

    L1: float
    L2: float
    L3: float
    L4: float
    L5: float
    L6: float = 0.0
    L7: float = 0.0
    L8: float = 0.0
    L9: float = 0.0
    L10: float = 0.0
    q: float = 1.0
    lambda1: float = LAMBDA1_UNIT_INTERVAL

    def __post_init__(self):
        for name in ("L3", "L4", "L5", "L6", "L7", "L8", "L9", "L10"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lambda1 <= 0.0:
            raise ValueError("lambda1 must be positive")
        if self.q < 1.0:
            raise ValueError("growth order q must be >= 1")


@dataclass(frozen=True)
class ProblemSpec:
    drift: DriftSpec
    diffusion: DiffusionSpec
    constants: ConstantsLedger
    initial_condition: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        ends = np.asarray(self.initial_condition(np.array([0.0, 1.0])), dtype=float)
        if np.max(np.abs(ends)) > 1e-12:
            raise ValueError("initial condition must vanish at 0 and 1")


# ---------------------------------------------------------------------------
# constructors


def polynomial_drift(coeffs: Sequence[float]) -> DriftSpec:
    """Drift from polynomial coefficients in ascending powers."""
    coeffs = tuple(float(c) for c in coeffs)
    c = np.asarray(coeffs)
    dc = npoly.polyder(c)
    degree = max(len(coeffs) - 1, 1)
    return DriftSpec(
        f=lambda x: npoly.polyval(x, c),
        f_prime=lambda x: npoly.polyval(x, dc),
        q=float(degree),
        polynomial_coeffs=coeffs,
    )


def constant_diffusion(value: float) -> DiffusionSpec:
    v = float(value)
    return DiffusionSpec(
        g=lambda x: np.full_like(np.asarray(x, dtype=float), v),
        g_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        additive=True,
    )


def linear_diffusion(scale: float) -> DiffusionSpec:
    s = float(scale)
    if s == 0.0:
        return constant_diffusion(0.0)
    return DiffusionSpec(
        g=lambda x: s * np.asarray(x, dtype=float),
        g_prime=lambda x: np.full_like(np.asarray(x, dtype=float), s),
        additive=False,
    )


def sine_initial(amplitude: float = 1.0, mode: int = 1) -> Callable:
    a, k = float(amplitude), int(mode)
    return lambda x: a * np.sin(k * np.pi * np.asarray(x, dtype=float))


def zero_initial() -> Callable:
    return lambda x: np.zeros_like(np.asarray(x, dtype=float))


def allen_cahn_spec(
    alpha: float,
    noise_trace_L8: float = 0.0,
    noise_h1_L10: float = 0.0,
    initial_condition: Optional[Callable] = None,
    diffusion: Optional[DiffusionSpec] = None,
) -> ProblemSpec:
    """Double-well drift f(x) = (x - x^3) / alpha^2 with its sharp ledger.

    The coercivity pair is pinned to L2 = -1 with the matching minimal
    L3 = (1 + alpha^2)^2 / (4 alpha^2) so that the stability constants are
    reproducible numbers rather than a free family.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a2inv = 1.0 / alpha**2
    drift = polynomial_drift([0.0, a2inv, 0.0, -a2inv])
    constants = ConstantsLedger(
        L1=a2inv,
        L2=-1.0,
        L3=(1.0 + alpha**2) ** 2 / (4.0 * alpha**2),
        L4=2.0 * a2inv,
        L5=a2inv,
        L6=0.0,
        L7=0.0,
        L8=float(noise_trace_L8),
        L9=0.0,
        L10=float(noise_h1_L10),
        q=3.0,
        lambda1=LAMBDA1_UNIT_INTERVAL,
    )
    return ProblemSpec(
        drift=drift,
        diffusion=diffusion if diffusion is not None else constant_diffusion(1.0),
        constants=constants,
        initial_condition=initial_condition or sine_initial(),
    )


# ---------------------------------------------------------------------------
# structural condition checks


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    max_violation: float


@dataclass(frozen=True)
class ConditionReport:
    checks: tuple[ConditionCheck, ...]
    grid_radius: float
    grid_points: int
    l1_le_l2: bool = True

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _check(name, violation, tol=1e-9):
    violation = float(violation)
    return ConditionCheck(name=name, passed=violation <= tol, max_violation=violation)


def verify_conditions(
    spec: ProblemSpec, grid_radius: float = 10.0, grid_points: int = 2001
) -> ConditionReport:
    """Evaluate the five scalar structural inequalities on [-R, R].

    Pair-based checks (one-sided Lipschitz for f, Lipschitz for g) use the
    fact that any chord slope over grid points is a convex combination of
    adjacent chord slopes, so the all-pairs extremum is attained on adjacent
    pairs.  Violations are reported, never raised: probing parameter regimes
    where a hypothesis fails is a supported use.
    """
    if grid_points < 2 or grid_radius <= 0.0:
        raise ValueError("need grid_radius > 0 and at least two grid points")
    c = spec.constants
    x = np.linspace(-grid_radius, grid_radius, grid_points)
    fx = np.asarray(spec.drift.f(x), dtype=float)
    fpx = np.asarray(spec.drift.f_prime(x), dtype=float)
    gx = np.asarray(spec.diffusion.g(x), dtype=float)
    dx = np.diff(x)

    slopes_f = np.diff(fx) / dx
    mono_vio = np.max(slopes_f) - c.L1
    coer_vio = np.max(fx * x - (c.L2 * x**2 + c.L3))
    grow_vio = np.max(np.abs(fpx) - (c.L4 * np.abs(x) ** (c.q - 1.0) + c.L5))
    lip_vio = np.max((np.diff(gx) / dx) ** 2) - c.L6
    ggrow_vio = np.max(gx**2 - (c.L7 * x**2 + c.L8))

    checks = (
        _check("monotonicity", mono_vio),
        _check("coercivity", coer_vio),
        _check("derivative_growth", grow_vio),
        _check("diffusion_lipschitz", lip_vio),
        _check("diffusion_growth", ggrow_vio),
    )
    return ConditionReport(
        checks=checks,
        grid_radius=grid_radius,
        grid_points=grid_points,
        l1_le_l2=c.L1 <= c.L2,
    )


# ---------------------------------------------------------------------------
# theorem constants


def ergodicity_margins(constants: ConstantsLedger) -> tuple[float, float]:
    """(lambda1 - (L1 + L6/2), lambda1 - (L2 + L7/2)); both positive => mixing."""
    return (
        constants.lambda1 - (constants.L1 + constants.L6 / 2.0),
        constants.lambda1 - (constants.L2 + constants.L7 / 2.0),
    )


def contraction_rate_gamma6(constants: ConstantsLedger) -> float:
    margin = ergodicity_margins(constants)[0]
    if margin <= 0.0:
        raise HypothesisError("contraction requires L1 + L6/2 < lambda1", margin)
    return _gamma6_raw(constants)


def _gamma6_raw(constants: ConstantsLedger) -> float:
    a = 2.0 * (constants.lambda1 - constants.L1)
    return (a - constants.L6) / (a + 1.0)


def stability_rate_gamma5(
    constants: ConstantsLedger, tau: float
) -> tuple[float, float]:
    margin = ergodicity_margins(constants)[1]
    if margin <= 0.0:
        raise HypothesisError("stability requires L2 + L7/2 < lambda1", margin)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"step size must lie in (0,1), got {tau}")
    a = 2.0 * (constants.lambda1 - constants.L2)
    gamma5 = (a - constants.L7) / (1.0 + a * tau)
    c_gamma5 = (2.0 * constants.L3 + constants.L8) / (a - constants.L7)
    return gamma5, c_gamma5


@dataclass(frozen=True)
class WellPosednessBounds:
    """Largest admissible step sizes; ``inf`` means unconstrained."""

    die: float
    dieg: float


def max_wellposed_tau(constants: ConstantsLedger) -> WellPosednessBounds:
    lam = constants.lambda1
    a_die = constants.L1 - lam / (lam + 1.0)
    a_dieg = constants.L1 - lam
    die = np.inf if a_die <= 0.0 else 1.0 / a_die
    dieg = np.inf if a_dieg <= 0.0 else 1.0 / a_dieg
    return WellPosednessBounds(die=float(die), dieg=float(dieg))


# ---------------------------------------------------------------------------
# polynomial ledger helpers


def polynomial_sup_fprime(coeffs: Sequence[float]) -> float:
    """Sharp one-sided Lipschitz constant sup f' for a polynomial drift.

    Requires the leading coefficient negative and odd degree, so that f' is
    bounded above; the supremum is attained at a real root of f''.
    """
    c = np.asarray(coeffs, dtype=float)
    degree = len(c) - 1
    if degree < 1 or degree % 2 == 0 or c[-1] >= 0.0:
        raise ValueError("need odd degree and a negative leading coefficient")
    dc = npoly.polyder(c)
    if degree == 1:
        return float(dc[0])
    ddc = npoly.polyder(dc)
    roots = npoly.polyroots(ddc)
    real = roots.real[np.abs(roots.imag) < 1e-10]
    candidates = npoly.polyval(real, dc) if real.size else np.array([dc[0]])
    return float(np.max(candidates))


def polynomial_coercivity_l3(coeffs: Sequence[float], l2: float) -> float:
    """Minimal L3 with f(x) x <= L2 x^2 + L3 for a dissipative polynomial."""
    c = np.asarray(coeffs, dtype=float)
    if len(c) - 1 < 3 or c[-1] >= 0.0 or (len(c) - 1) % 2 == 0:
        raise ValueError("need odd degree >= 3 and a negative leading coefficient")
    # maximize p(x) = f(x) x - L2 x^2 over the reals
    p = npoly.polymulx(c)
    p = npoly.polysub(p, np.array([0.0, 0.0, float(l2)]))
    dp = npoly.polyder(p)
    roots = npoly.polyroots(dp)
    real = roots.real[np.abs(roots.imag) < 1e-10]
    values = npoly.polyval(real, p) if real.size else np.array([p[0]])
    return float(max(np.max(values), 0.0))


def ledger_for_polynomial(
    coeffs: Sequence[float],
    l2: float = -1.0,
    L6: float = 0.0,
    L7: float = 0.0,
    L8: float = 0.0,
    L9: float = 0.0,
    L10: float = 0.0,
    lambda1: float = LAMBDA1_UNIT_INTERVAL,
) -> ConstantsLedger:
    """Valid ledger for an odd polynomial drift with negative leading term."""
    c = np.asarray(coeffs, dtype=float)
    dc = npoly.polyder(c)
    abs_dc = np.abs(dc)
    return ConstantsLedger(
        L1=polynomial_sup_fprime(coeffs),
        L2=float(l2),
        L3=polynomial_coercivity_l3(coeffs, l2),
        L4=float(np.sum(abs_dc[1:])) if len(dc) > 1 else 0.0,
        L5=float(np.sum(abs_dc)),
        L6=L6,
        L7=L7,
        L8=L8,
        L9=L9,
        L10=L10,
        q=float(len(c) - 1),
        lambda1=lambda1,
    )
