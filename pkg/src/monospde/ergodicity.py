"""Long-time experiments: coupling contraction, moment stability, Cesaro
averages, ergodic time-averages, mixing decay, and temporal Hoelder ratios.

All experiments expand one seed into per-path streams in path-index order and
accumulate Monte Carlo statistics in that fixed order, so reports are
bit-reproducible.  Out-of-hypothesis parameter regimes can be probed behind an
explicit override; the reports then carry ``hypothesis_failed=True``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .fem import FemSpace, first_eigenpair, project_l2
from .noise import QWienerSpec, derive_seed, sample_path
from .problem import (
    HypothesisError,
    ProblemSpec,
    _gamma6_raw,
    ergodicity_margins,
    stability_rate_gamma5,
)
from .schemes import (
    ImplicitSystem,
    RecordSpec,
    SolverConfig,
    dieg_step,
    diem_step,
    simulate,
)

_MSD_FIT_FLOOR = 1e-12


def default_noise_spec(space: FemSpace, decay_exponent: float = 4.0) -> QWienerSpec:
    """H1-regular preset truncated at the mesh resolution."""
    return QWienerSpec(n_modes=space.n_interior, decay_exponent=decay_exponent)


def fit_log_linear(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through (x, log y); returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.any(y <= 0.0):
        raise ValueError("log fit requires positive values")
    ly = np.log(y)
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# functionals on nodal vectors


def l2_squared(space: FemSpace) -> Callable:
    """phi(x) = ||x||^2 in the discrete L2 norm (quadratic, not in Lip_b)."""
    return lambda u: float(space.mass.quadratic_form(u))


def clamped_norm(space: FemSpace, cap: float = 1.0) -> Callable:
    """phi(x) = min(||x||, cap): bounded with Lipschitz constant 1."""
    return lambda u: float(min(np.sqrt(max(space.mass.quadratic_form(u), 0.0)), cap))


def mode1_coefficient(space: FemSpace) -> Callable:
    """phi(x) = <x, v1> against the mass-normalized first eigenvector."""
    _, v1 = first_eigenpair(space)
    mv1 = space.mass.matvec(v1)
    return lambda u: float(u @ mv1)


# ---------------------------------------------------------------------------
# coupling contraction


@dataclass(frozen=True)
class CouplingReport:
    times: np.ndarray
    mean_sq_diff: np.ndarray
    bound: np.ndarray
    fitted_rate: Optional[float]
    n_paths: int
    per_step_factor: float
    max_step_ratio: float
    hypothesis_failed: bool = False


def coupling_experiment(
    problem: ProblemSpec,
    space: FemSpace,
    x: np.ndarray,
    y: np.ndarray,
    tau: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
    allow_out_of_hypothesis: bool = False,
) -> CouplingReport:
    """Evolve pairs from x and y under identical noise and watch them merge.

    Per path and per step the squared distance is compared with the one-step
    factor (1 + L6 tau) / (1 + 2 (lambda1 - L1) tau); with constant diffusion
    the noise cancels in the difference, so the factor holds pathwise up to
    solver tolerance and ``max_step_ratio`` should not exceed 1.
    """
    c = problem.constants
    margin = ergodicity_margins(c)[0]
    hypothesis_failed = margin <= 0.0
    if hypothesis_failed and not allow_out_of_hypothesis:
        raise HypothesisError("coupling requires L1 + L6/2 < lambda1", margin)
    cfg = cfg or SolverConfig()
    spec = noise_spec or default_noise_spec(space)
    x = space.check_vector(x)
    y = space.check_vector(y)
    rho = (1.0 + c.L6 * tau) / (1.0 + 2.0 * (c.lambda1 - c.L1) * tau)

    system = ImplicitSystem(space, tau)
    scaled_basis = spec.scaled_basis_matrix(space.quad_x.ravel())
    quad_shape = space.quad_x.shape

    msd_sum = np.zeros(n_steps + 1)
    max_ratio = 0.0
    for p in range(n_paths):
        path = sample_path(spec, tau, n_steps, derive_seed(seed, "coupling", p))
        u, v = x.copy(), y.copy()
        d2 = space.mass.quadratic_form(u - v)
        msd_sum[0] += d2
        for m in range(n_steps):
            dw = (path.increments[m] @ scaled_basis).reshape(quad_shape)
            u, _ = dieg_step(space, problem, u, dw, tau, cfg, system)
            v, _ = dieg_step(space, problem, v, dw, tau, cfg, system)
            d2_new = space.mass.quadratic_form(u - v)
            if d2 > 1e-300:
                max_ratio = max(max_ratio, d2_new / (rho * d2))
            d2 = d2_new
            msd_sum[m + 1] += d2

    mean_sq = msd_sum / n_paths
    times = tau * np.arange(n_steps + 1)
    bound = np.exp(-_gamma6_raw(c) * times) * space.mass.quadratic_form(x - y)

    fitted = None
    mask = mean_sq > _MSD_FIT_FLOOR
    if np.count_nonzero(mask) >= 2:
        slope, _, _ = fit_log_linear(times[mask], mean_sq[mask])
        fitted = -slope
    return CouplingReport(
        times=times,
        mean_sq_diff=mean_sq,
        bound=bound,
        fitted_rate=fitted,
        n_paths=n_paths,
        per_step_factor=rho,
        max_step_ratio=max_ratio,
        hypothesis_failed=hypothesis_failed,
    )


# ---------------------------------------------------------------------------
# moment stability


@dataclass(frozen=True)
class StabilityReport:
    times: np.ndarray
    moments: np.ndarray
    stderr: np.ndarray
    envelope: Optional[np.ndarray]
    violation_count: Optional[int]
    p: int
    n_paths: int
    hypothesis_failed: bool = False


def _ensemble_series(problem, space, tau, n_steps, n_paths, seed, label,
                     observable, noise_spec, cfg, scheme, initial):
    """Mean and stderr of one scalar observable across an ensemble."""
    values = np.empty((n_paths, n_steps + 1))
    for p in range(n_paths):
        path = sample_path(noise_spec, tau, n_steps, derive_seed(seed, label, p))
        sp = simulate(space, problem, path, cfg=cfg,
                      record=RecordSpec(observables={"phi": observable}),
                      scheme=scheme, initial=initial)
        values[p] = sp.observables["phi"]
    mean = values.mean(axis=0)
    if n_paths > 1:
        stderr = values.std(axis=0, ddof=1) / np.sqrt(n_paths)
    else:
        stderr = np.zeros(n_steps + 1)
    return mean, stderr


def stability_experiment(
    problem: ProblemSpec,
    space: FemSpace,
    tau: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    p: int = 2,
    initial: Optional[np.ndarray] = None,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
    allow_out_of_hypothesis: bool = False,
) -> StabilityReport:
    """Monte Carlo E||X_m||^p with, for p=2, the dissipation envelope
    exp(-gamma5 t) ||X_0||^2 + C_gamma5 and a count of envelope violations."""
    if p not in (2, 4, 6):
        raise ValueError("moment order p must be one of 2, 4, 6")
    c = problem.constants
    margin = ergodicity_margins(c)[1]
    hypothesis_failed = margin <= 0.0
    if hypothesis_failed and not allow_out_of_hypothesis:
        raise HypothesisError("stability requires L2 + L7/2 < lambda1", margin)
    spec = noise_spec or default_noise_spec(space)
    x0 = (
        space.check_vector(initial).copy()
        if initial is not None
        else project_l2(space, problem.initial_condition)
    )

    def phi(u, _space=space, _p=p):
        return float(max(_space.mass.quadratic_form(u), 0.0) ** (_p / 2.0))

    mean, stderr = _ensemble_series(problem, space, tau, n_steps, n_paths, seed,
                                    "stability", phi, spec, cfg, scheme, x0)
    times = tau * np.arange(n_steps + 1)

    envelope = None
    violations = None
    if p == 2 and not hypothesis_failed:
        gamma5, c_gamma5 = stability_rate_gamma5(c, tau)
        envelope = np.exp(-gamma5 * times) * space.mass.quadratic_form(x0) + c_gamma5
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mean > 0.0, stderr / np.where(mean > 0.0, mean, 1.0), 0.0)
        violations = int(np.sum(mean > envelope * (1.0 + 3.0 * ratio)))
    return StabilityReport(
        times=times,
        moments=mean,
        stderr=stderr,
        envelope=envelope,
        violation_count=violations,
        p=p,
        n_paths=n_paths,
        hypothesis_failed=hypothesis_failed,
    )


# ---------------------------------------------------------------------------
# Cesaro H1 averages


@dataclass(frozen=True)
class CesaroReport:
    times: np.ndarray
    running_average: np.ndarray
    sup_value: float
    n_paths: int


def cesaro_h1(
    problem: ProblemSpec,
    space: FemSpace,
    tau: float,
    n_steps: int,
    seed: int,
    n_paths: int,
    initial: Optional[np.ndarray] = None,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
) -> CesaroReport:
    """Running averages (1/m) sum_{k<=m} E||X_k||_1^2 of the H1 seminorm."""
    spec = noise_spec or default_noise_spec(space)
    x0 = (
        space.check_vector(initial).copy()
        if initial is not None
        else project_l2(space, problem.initial_condition)
    )
    phi = lambda u: float(max(space.stiffness.quadratic_form(u), 0.0))
    mean, _ = _ensemble_series(problem, space, tau, n_steps, n_paths, seed,
                               "cesaro", phi, spec, cfg, scheme, x0)
    cums = np.cumsum(mean)
    divisors = np.maximum(np.arange(n_steps + 1), 1)
    running = cums / divisors
    running[0] = mean[0]
    sup = float(np.max(running[1:])) if n_steps >= 1 else float(running[0])
    return CesaroReport(
        times=tau * np.arange(n_steps + 1),
        running_average=running,
        sup_value=sup,
        n_paths=n_paths,
    )


# ---------------------------------------------------------------------------
# ergodic averages and mixing


@dataclass(frozen=True)
class ErgodicAverageReport:
    functional_name: str
    burn_in: int
    running_average: np.ndarray
    batch_means_stderr: float
    final_estimate: float
    n_samples: int


def ergodic_average(
    problem: ProblemSpec,
    space: FemSpace,
    functional: Callable,
    tau: float,
    n_total: int,
    burn_in: int,
    seed: int,
    initial: Optional[np.ndarray] = None,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
    functional_name: str = "phi",
    n_batches: int = 20,
) -> ErgodicAverageReport:
    """Time average of one functional along a single long trajectory.

    The estimator uses the samples after ``burn_in`` steps; its uncertainty is
    the batch-means standard error over ``n_batches`` equal blocks.
    """
    if not 0 <= burn_in < n_total:
        raise ValueError("burn_in must satisfy 0 <= burn_in < n_total")
    spec = noise_spec or default_noise_spec(space)
    x0 = (
        space.check_vector(initial).copy()
        if initial is not None
        else project_l2(space, problem.initial_condition)
    )
    path = sample_path(spec, tau, n_total, derive_seed(seed, "ergodic", 0))
    sp = simulate(space, problem, path, cfg=cfg,
                  record=RecordSpec(observables={"phi": functional}),
                  scheme=scheme, initial=x0)
    samples = sp.observables["phi"][burn_in + 1 :]
    running = np.cumsum(samples) / np.arange(1, samples.size + 1)
    estimate = float(samples.mean())

    n_batches = min(n_batches, samples.size)
    block = samples.size // n_batches
    trimmed = samples[samples.size - n_batches * block :]
    batch_means = trimmed.reshape(n_batches, block).mean(axis=1)
    stderr = (
        float(batch_means.std(ddof=1) / np.sqrt(n_batches)) if n_batches > 1 else 0.0
    )
    return ErgodicAverageReport(
        functional_name=functional_name,
        burn_in=burn_in,
        running_average=running,
        batch_means_stderr=stderr,
        final_estimate=estimate,
        n_samples=samples.size,
    )


@dataclass(frozen=True)
class MixingReport:
    times: np.ndarray
    decay: np.ndarray
    ensemble_stderr: np.ndarray
    pi_estimate: float
    pi_stderr: float
    fitted_rate: Optional[float]
    fit_window: np.ndarray
    n_ensemble: int


def mixing_decay(
    problem: ProblemSpec,
    space: FemSpace,
    functional: Callable,
    x: np.ndarray,
    tau: float,
    horizon_steps: int,
    n_ensemble: int,
    seed: int,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
    pi_total: Optional[int] = None,
    pi_burn_in: Optional[int] = None,
    functional_name: str = "phi",
) -> MixingReport:
    """|E phi(X_m^x) - pi(phi)| against time, with a log-linear rate fit.

    The equilibrium average comes from a separate long run; the decay series
    is fitted only above 3x the combined Monte Carlo noise floor, where the
    exponential trend is identifiable.
    """
    margin = min(ergodicity_margins(problem.constants))
    if margin <= 0.0:
        raise HypothesisError("mixing requires both ergodicity margins > 0", margin)
    spec = noise_spec or default_noise_spec(space)
    x = space.check_vector(x)
    mean, stderr = _ensemble_series(problem, space, tau, horizon_steps, n_ensemble,
                                    seed, "mixing-ens", functional, spec, cfg,
                                    scheme, x)
    pi_total = pi_total or max(40 * horizon_steps, 20000)
    pi_burn_in = pi_burn_in if pi_burn_in is not None else pi_total // 5
    pi_report = ergodic_average(
        problem, space, functional, tau, pi_total, pi_burn_in,
        derive_seed(seed, "mixing-pi", 0), initial=x, noise_spec=spec,
        cfg=cfg, scheme=scheme, functional_name=functional_name,
    )

    decay = np.abs(mean - pi_report.final_estimate)
    floor = 3.0 * np.sqrt(stderr**2 + pi_report.batch_means_stderr**2)
    times = tau * np.arange(horizon_steps + 1)
    window = decay > floor
    fitted = None
    if np.count_nonzero(window) >= 2:
        slope, _, _ = fit_log_linear(times[window], decay[window])
        fitted = -slope
    return MixingReport(
        times=times,
        decay=decay,
        ensemble_stderr=stderr,
        pi_estimate=pi_report.final_estimate,
        pi_stderr=pi_report.batch_means_stderr,
        fitted_rate=fitted,
        fit_window=window,
        n_ensemble=n_ensemble,
    )


# ---------------------------------------------------------------------------
# temporal Hoelder ratios


@dataclass(frozen=True)
class HolderReport:
    base_steps: np.ndarray
    lags: np.ndarray
    ratios: np.ndarray
    sup_ratio: float
    p: int
    n_paths: int


def holder_ratio(
    problem: ProblemSpec,
    space: FemSpace,
    tau: float,
    n_steps: int,
    n_paths: int,
    lag_set: Sequence[int],
    seed: int,
    p: int = 2,
    initial: Optional[np.ndarray] = None,
    noise_spec: Optional[QWienerSpec] = None,
    cfg: Optional[SolverConfig] = None,
    scheme: str = "dieg",
    n_base_times: int = 4,
) -> HolderReport:
    """sup over base times and lags of E||X_{t+L} - X_t||^p / L^{p/2}."""
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    lags = np.unique(np.asarray(lag_set, dtype=int))
    if lags.size == 0 or lags[0] < 1:
        raise ValueError("lags must be positive integers")
    max_lag = int(lags[-1])
    if max_lag >= n_steps:
        raise ValueError("largest lag must be smaller than n_steps")
    spec = noise_spec or default_noise_spec(space)
    x0 = (
        space.check_vector(initial).copy()
        if initial is not None
        else project_l2(space, problem.initial_condition)
    )
    start = n_steps // 4
    bases = np.unique(
        np.linspace(start, n_steps - max_lag, n_base_times).astype(int)
    )
    needed = sorted({int(b) for b in bases} | {int(b + l) for b in bases for l in lags})

    acc = np.zeros((bases.size, lags.size))
    for j in range(n_paths):
        path = sample_path(spec, tau, n_steps, derive_seed(seed, "holder", j))
        sp = simulate(space, problem, path, cfg=cfg,
                      record=RecordSpec(checkpoints=tuple(needed)),
                      scheme=scheme, initial=x0)
        for bi, b in enumerate(bases):
            xb = sp.state_at(int(b))
            for li, lag in enumerate(lags):
                diff = sp.state_at(int(b + lag)) - xb
                acc[bi, li] += max(space.mass.quadratic_form(diff), 0.0) ** (p / 2.0)
    means = acc / n_paths
    denom = (lags * tau) ** (p / 2.0)
    ratios = means / denom[None, :]
    return HolderReport(
        base_steps=bases,
        lags=lags,
        ratios=ratios,
        sup_ratio=float(ratios.max()) if ratios.size else 0.0,
        p=p,
        n_paths=n_paths,
    )
