"""Implicit time steppers for d u = (Laplace u + f(u)) dt + g(u) dW.

One step solves the monotone nonlinear system

    (M + tau K) u - tau * load(f, u) = M * state + noise_load

by damped Newton with exact tridiagonal Jacobians, falling back to a
contractive fixed-point sweep if Newton stalls.  The Galerkin Euler step
("dieg") integrates g(state) * dW against the hat basis; the Milstein step
("diem") adds the pointwise correction
0.5 * g'(state) g(state) * (dW^2 - tau * qdiag), valid because the diagonal
sine covariance commutes with pointwise multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fem import FemSpace, SymTridiag, project_l2, solve_tridiag
from .noise import NoisePath, q_diag_field
from .problem import ProblemSpec, max_wellposed_tau

_MIN_DAMPING = 2.0**-30


class SolverFailure(RuntimeError):
    """Implicit solve did not reach the residual tolerance."""

    def __init__(self, message: str, residual: float, step_index: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    fallback_fixed_point: bool = True
    max_fixed_point_iters: int = 200

    def __post_init__(self):
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")


@dataclass(frozen=True)
class StepReport:
    newton_iters: int
    final_residual: float
    used_fallback: bool
    residual_history: tuple[float, ...] = ()


class ImplicitSystem:
    """Cached (M + tau K) for one (space, tau) pair, shared across steps."""

    def __init__(self, space: FemSpace, tau: float):
        if tau <= 0.0:
            raise ValueError("tau must be positive")
        self.space = space
        self.tau = float(tau)
        self.matrix = SymTridiag(
            space.mass.diag + tau * space.stiffness.diag,
            space.mass.off + tau * space.stiffness.off,
        )
        self.matrix.factorize()


def _solve_implicit(system: ImplicitSystem, problem: ProblemSpec, rhs, u0, cfg):
    """Newton iteration on R(u) = (M + tau K) u - tau load(f,u) - rhs."""
    space, tau = system.space, system.tau
    f, fp = problem.drift.f, problem.drift.f_prime
    a = system.matrix

    def residual(u):
        uq = space.eval_at_quad(u)
        return a.matvec(u) - tau * space.load_from_quad(f(uq)) - rhs

    scale = max(float(np.linalg.norm(rhs)), 1e-30)
    tol = cfg.newton_tol * scale
    u = np.array(u0, dtype=float, copy=True)
    r = residual(u)
    rn = float(np.linalg.norm(r))
    history = [rn]

    for it in range(cfg.max_newton_iters):
        if rn <= tol:
            return u, StepReport(it, rn, False, tuple(history))
        jac = space.weighted_mass_from_quad(fp(space.eval_at_quad(u)))
        delta = solve_tridiag(a.diag - tau * jac.diag, a.off - tau * jac.off, -r)
        lam = 1.0
        while lam >= _MIN_DAMPING:
            u_try = u + lam * delta
            r_try = residual(u_try)
            rn_try = float(np.linalg.norm(r_try))
            if rn_try < rn:
                break
            lam *= 0.5
        else:
            break  # no decrease at any damping: stall, go to fallback
        u, r, rn = u_try, r_try, rn_try
        history.append(rn)
    iters = len(history) - 1

    if rn <= tol:
        return u, StepReport(iters, rn, False, tuple(history))

    if cfg.fallback_fixed_point:
        # u <- (M + tau K)^{-1} (rhs + tau load(f,u)); contracts whenever
        # tau * L1 < 1 + tau * lambda1h, i.e. inside the step-size bound.
        for _ in range(cfg.max_fixed_point_iters):
            uq = space.eval_at_quad(u)
            u = a.solve(rhs + tau * space.load_from_quad(f(uq)))
            r = residual(u)
            rn = float(np.linalg.norm(r))
            iters += 1
            history.append(rn)
            if rn <= tol:
                return u, StepReport(iters, rn, True, tuple(history))

    raise SolverFailure(
        f"implicit solve stalled at residual {rn:.3e} (tolerance {tol:.3e})",
        residual=rn,
    )


def _noise_rhs(system, problem, state, integrand_q):
    noise_load = system.space.load_from_quad(integrand_q)
    return system.space.mass.matvec(state) + noise_load


def dieg_step(
    space: FemSpace,
    problem: ProblemSpec,
    state: np.ndarray,
    dw_field: np.ndarray,
    tau: float,
    cfg: Optional[SolverConfig] = None,
    system: Optional[ImplicitSystem] = None,
):
    """One Euler Galerkin step; dw_field holds increment values at quad points."""
    cfg = cfg or SolverConfig()
    system = system or ImplicitSystem(space, tau)
    state = space.check_vector(state)
    uq = space.eval_at_quad(state)
    integrand = np.asarray(problem.diffusion.g(uq), dtype=float) * dw_field
    rhs = _noise_rhs(system, problem, state, integrand)
    return _solve_implicit(system, problem, rhs, state, cfg)


def diem_step(
    space: FemSpace,
    problem: ProblemSpec,
    state: np.ndarray,
    dw_field: np.ndarray,
    qdiag_field: np.ndarray,
    tau: float,
    cfg: Optional[SolverConfig] = None,
    system: Optional[ImplicitSystem] = None,
):
    """Milstein variant: second-order noise correction before quadrature."""
    cfg = cfg or SolverConfig()
    system = system or ImplicitSystem(space, tau)
    state = space.check_vector(state)
    uq = space.eval_at_quad(state)
    gq = np.asarray(problem.diffusion.g(uq), dtype=float)
    gpq = np.asarray(problem.diffusion.g_prime(uq), dtype=float)
    integrand = gq * dw_field + 0.5 * gpq * gq * (dw_field**2 - tau * qdiag_field)
    rhs = _noise_rhs(system, problem, state, integrand)
    return _solve_implicit(system, problem, rhs, state, cfg)


@dataclass(frozen=True)
class RecordSpec:
    """What to keep from a trajectory.

    ``observables`` maps names to callables of the nodal vector; None records
    the discrete L2 norm and H1 seminorm.  States are stored at step 0, the
    final step, every ``store_every``-th step, and all ``checkpoints``.
    """

    observables: Optional[dict[str, Callable]] = None
    store_every: Optional[int] = None
    checkpoints: tuple[int, ...] = ()


@dataclass
class StatePath:
    space: FemSpace
    tau: float
    scheme: str
    state_steps: list[int]
    states: list[np.ndarray]
    observables: dict[str, np.ndarray]
    newton_iters_total: int = 0
    newton_iters_max: int = 0

    @property
    def n_steps(self) -> int:
        return len(next(iter(self.observables.values()))) - 1

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def state_at(self, step: int) -> np.ndarray:
        try:
            return self.states[self.state_steps.index(step)]
        except ValueError:
            raise KeyError(f"state at step {step} was not recorded") from None


def default_observables(space: FemSpace) -> dict[str, Callable]:
    return {
        "l2": lambda u: float(np.sqrt(max(space.mass.quadratic_form(u), 0.0))),
        "h1_semi": lambda u: float(np.sqrt(max(space.stiffness.quadratic_form(u), 0.0))),
    }


def simulate(
    space: FemSpace,
    problem: ProblemSpec,
    noise_path: NoisePath,
    cfg: Optional[SolverConfig] = None,
    record: Optional[RecordSpec] = None,
    scheme: str = "dieg",
    initial: Optional[np.ndarray] = None,
    enforce_step_bound: bool = True,
) -> StatePath:
    """Iterate the chosen step over a noise path, recording observables.

    The step size comes from the noise path.  The well-posedness bound of the
    fully discrete scheme is checked once up front; pass
    ``enforce_step_bound=False`` to probe beyond it.
    """
    if scheme not in ("dieg", "diem"):
        raise ValueError(f"unknown scheme {scheme!r}")
    cfg = cfg or SolverConfig()
    record = record or RecordSpec()
    tau = noise_path.tau
    if enforce_step_bound:
        bound = max_wellposed_tau(problem.constants).dieg
        if not tau < bound:
            raise ValueError(
                f"tau={tau} exceeds the well-posedness bound {bound} "
                "(pass enforce_step_bound=False to override)"
            )

    u = (
        space.check_vector(initial).copy()
        if initial is not None
        else project_l2(space, problem.initial_condition)
    )
    system = ImplicitSystem(space, tau)
    obs_fns = record.observables or default_observables(space)
    n_steps = noise_path.n_steps
    series = {name: np.empty(n_steps + 1) for name in obs_fns}
    for name, fn in obs_fns.items():
        series[name][0] = fn(u)

    checkpoints = frozenset(record.checkpoints)
    state_steps = [0]
    states = [u.copy()]

    scaled_basis = noise_path.spec.scaled_basis_matrix(space.quad_x.ravel())
    qdiag = (
        q_diag_field(noise_path.spec, space.quad_x) if scheme == "diem" else None
    )
    quad_shape = space.quad_x.shape

    iters_total = 0
    iters_max = 0
    for m in range(n_steps):
        dw = (noise_path.increments[m] @ scaled_basis).reshape(quad_shape)
        try:
            if scheme == "dieg":
                u, rep = dieg_step(space, problem, u, dw, tau, cfg, system)
            else:
                u, rep = diem_step(space, problem, u, dw, qdiag, tau, cfg, system)
        except SolverFailure as exc:
            exc.step_index = m
            raise
        iters_total += rep.newton_iters
        iters_max = max(iters_max, rep.newton_iters)
        step = m + 1
        for name, fn in obs_fns.items():
            series[name][step] = fn(u)
        keep = (
            step == n_steps
            or step in checkpoints
            or (record.store_every and step % record.store_every == 0)
        )
        if keep:
            state_steps.append(step)
            states.append(u.copy())

    return StatePath(
        space=space,
        tau=tau,
        scheme=scheme,
        state_steps=state_steps,
        states=states,
        observables=series,
        newton_iters_total=iters_total,
        newton_iters_max=iters_max,
    )
