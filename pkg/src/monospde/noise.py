"""Truncated Karhunen-Loeve Q-Wiener increments on (0,1).

The covariance eigenbasis is fixed to g_k(x) = sqrt(2) sin(k pi x) with
eigenvalues q_k, either from the power rule q_k = k^(-s) or supplied
explicitly.  Increments are sampled with a counter-based generator keyed by
(seed, step), so any step's row can be regenerated independently and path
generation is reproducible regardless of evaluation order.

Refinement bookkeeping: ``aggregate`` sums fine increments into coarse ones by
repeated pairwise halving, which makes dyadic re-aggregation associative at
the bit level (aggregate twice by 2 equals aggregate once by 4, exactly).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class QWienerSpec:
    """Covariance truncation: K sine modes with eigenvalues q_k >= 0."""

    n_modes: int
    decay_exponent: Optional[float] = 2.0
    eigenvalues: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.eigenvalues is not None:
            q = np.asarray(self.eigenvalues, dtype=float)
            if q.shape != (self.n_modes,):
                raise ValueError("eigenvalues length must equal n_modes")
            if np.any(q < 0.0):
                raise ValueError("eigenvalues must be nonnegative")
        elif self.decay_exponent is None or self.decay_exponent <= 1.0:
            raise ValueError("decay_exponent must be > 1 for a summable trace")

    def mode_eigenvalues(self) -> np.ndarray:
        if self.eigenvalues is not None:
            return np.asarray(self.eigenvalues, dtype=float)
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return k ** (-self.decay_exponent)

    def basis_matrix(self, points: np.ndarray) -> np.ndarray:
        """[K, n_points] matrix of sqrt(2) sin(k pi x)."""
        x = np.asarray(points, dtype=float).ravel()
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return np.sqrt(2.0) * np.sin(np.outer(k * np.pi, x))

    def scaled_basis_matrix(self, points: np.ndarray) -> np.ndarray:
        """Basis rows premultiplied by sqrt(q_k); field = increments @ rows."""
        return np.sqrt(self.mode_eigenvalues())[:, None] * self.basis_matrix(points)


@dataclass(frozen=True)
class TraceInfo:
    partial: float
    tail_bound: Optional[float]


def partial_trace(spec: QWienerSpec) -> TraceInfo:
    """Sum of the truncated eigenvalues plus an integral tail bound."""
    partial = float(np.sum(spec.mode_eigenvalues()))
    tail = None
    if spec.eigenvalues is None:
        s = spec.decay_exponent
        tail = float(spec.n_modes ** (1.0 - s) / (s - 1.0))
    return TraceInfo(partial=partial, tail_bound=tail)


def h1_trace(spec: QWienerSpec) -> float:
    """Sum of (k pi)^2 q_k, finite iff the noise has H1-regular samples."""
    k = np.arange(1, spec.n_modes + 1, dtype=float)
    return float(np.sum((k * np.pi) ** 2 * spec.mode_eigenvalues()))


def evaluate_field(
    spec: QWienerSpec, increments_row: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Pointwise field sum_k sqrt(q_k) g_k(x) * db_k for one increment row."""
    row = np.asarray(increments_row, dtype=float)
    if row.shape != (spec.n_modes,):
        raise ValueError("increment row length must equal n_modes")
    shape = np.asarray(points, dtype=float).shape
    return (row @ spec.scaled_basis_matrix(points)).reshape(shape)


def q_diag_field(spec: QWienerSpec, points: np.ndarray) -> np.ndarray:
    """Pointwise covariance diagonal sum_k q_k g_k(x)^2."""
    x = np.asarray(points, dtype=float)
    b = spec.basis_matrix(x)
    return (spec.mode_eigenvalues() @ b**2).reshape(x.shape)


@dataclass(frozen=True)
class NoisePath:
    """Brownian mode increments over uniform steps, [n_steps, n_modes]."""

    tau: float
    n_steps: int
    increments: np.ndarray = field(repr=False)
    seed: int
    spec: QWienerSpec

    def __post_init__(self):
        if self.increments.shape != (self.n_steps, self.spec.n_modes):
            raise ValueError("increment matrix shape mismatch")
        self.increments.flags.writeable = False


def _step_normals(seed: int, step: int, n_modes: int) -> np.ndarray:
    key = np.array([seed & _MASK64, step & _MASK64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(n_modes)


def sample_path(
    spec: QWienerSpec, tau: float, n_steps: int, seed: int
) -> NoisePath:
    """i.i.d. N(0, tau) increments per mode per step, deterministic in seed."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    seed = int(seed)
    inc = np.empty((n_steps, spec.n_modes))
    for m in range(n_steps):
        inc[m] = _step_normals(seed, m, spec.n_modes)
    inc *= np.sqrt(tau)
    return NoisePath(tau=float(tau), n_steps=int(n_steps), increments=inc,
                     seed=seed, spec=spec)


def aggregate(path: NoisePath, factor: int) -> NoisePath:
    """Sum blocks of ``factor`` fine increments into one coarse increment.

    Power-of-two parts of the factor are folded by pairwise halving so that
    dyadic compositions are bit-exact; an odd residual factor is summed
    sequentially within each block.
    """
    factor = int(factor)
    if factor < 2:
        raise ValueError("factor must be >= 2")
    if path.n_steps % factor != 0:
        raise ValueError(
            f"n_steps={path.n_steps} is not divisible by factor={factor}"
        )
    inc = path.increments
    f = factor
    while f % 2 == 0:
        inc = inc[0::2] + inc[1::2]
        f //= 2
    if f > 1:
        inc = inc.reshape(-1, f, path.spec.n_modes).sum(axis=1)
    return NoisePath(
        tau=path.tau * factor,
        n_steps=path.n_steps // factor,
        increments=np.ascontiguousarray(inc),
        seed=path.seed,
        spec=path.spec,
    )


def save_path_csv(path: NoisePath, file_path) -> None:
    """Long-format audit dump: one (step, mode, increment) row per entry."""
    with open(file_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(
            f"# seed={path.seed} tau={path.tau!r} n_steps={path.n_steps} "
            f"n_modes={path.spec.n_modes}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["step", "mode", "increment"])
        for m in range(path.n_steps):
            for k in range(path.spec.n_modes):
                writer.writerow([m, k + 1, repr(path.increments[m, k])])


def load_path_csv(file_path, spec: QWienerSpec) -> NoisePath:
    with open(file_path, newline="", encoding="utf-8") as fh:
        meta = fh.readline()
        if not meta.startswith("# "):
            raise ValueError("missing metadata line")
        fields = dict(item.split("=") for item in meta[2:].split())
        rows = list(csv.DictReader(fh))
    n_steps = int(fields["n_steps"])
    n_modes = int(fields["n_modes"])
    if n_modes != spec.n_modes:
        raise ValueError("spec n_modes does not match the stored path")
    inc = np.zeros((n_steps, n_modes))
    for row in rows:
        inc[int(row["step"]), int(row["mode"]) - 1] = float(row["increment"])
    return NoisePath(
        tau=float(fields["tau"]),
        n_steps=n_steps,
        increments=inc,
        seed=int(fields["seed"]),
        spec=spec,
    )


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """Expand one master seed into documented per-experiment streams.

    The derivation hashes "{master}:{label}:{index}" with SHA-256 and keeps
    the low 64 bits, so sub-experiments are independently reproducible.
    """
    import hashlib

    digest = hashlib.sha256(f"{int(master_seed)}:{label}:{int(index)}".encode())
    return int.from_bytes(digest.digest()[:8], "little")
