"""Uniform P1 finite elements on (0,1) with homogeneous Dirichlet conditions.

Interior nodal values are plain 1-D numpy arrays of length ``n_cells - 1``;
the two boundary values are implicitly zero.  Mass and stiffness matrices are
kept in symmetric tridiagonal form and factorized once at build time, so a
``FemSpace`` is safe to share read-only between concurrent simulations.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.linalg import get_lapack_funcs

# 3-point Gauss-Legendre rule on the reference cell [0, 1]: exact through
# degree 5, hence exact for cubic nonlinearities composed with P1 functions.
GAUSS_POINTS = np.array([0.5 - np.sqrt(0.6) / 2.0, 0.5, 0.5 + np.sqrt(0.6) / 2.0])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


class ConvergenceFailure(RuntimeError):
    """Raised when an iterative eigenvalue solve exceeds its iteration cap."""


class SymTridiag:
    """Symmetric tridiagonal SPD matrix with a cached LDL^T factorization."""

    __slots__ = ("diag", "off", "_factor")

    def __init__(self, diag, off):
        self.diag = np.ascontiguousarray(diag, dtype=float)
        self.off = np.ascontiguousarray(off, dtype=float)
        if self.off.size != max(self.diag.size - 1, 0):
            raise ValueError("off-diagonal length must be n-1")
        self._factor = None

    @property
    def n(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        if self.n > 1:
            out[:-1] += self.off * v[1:]
            out[1:] += self.off * v[:-1]
        return out

    def factorize(self):
        if self._factor is None:
            pttrf = get_lapack_funcs("pttrf", (self.diag,))
            d, e, info = pttrf(self.diag, self.off)
            if info != 0:
                raise np.linalg.LinAlgError(f"pttrf failed with info={info}")
            self._factor = (d, e)
        return self._factor

    def solve(self, b: np.ndarray) -> np.ndarray:
        d, e = self.factorize()
        pttrs = get_lapack_funcs("pttrs", (self.diag,))
        x, info = pttrs(d, e, b)
        if info != 0:
            raise np.linalg.LinAlgError(f"pttrs failed with info={info}")
        return x

    def quadratic_form(self, v: np.ndarray) -> float:
        return float(v @ self.matvec(v))

    def to_dense(self) -> np.ndarray:
        a = np.diag(self.diag)
        if self.n > 1:
            a += np.diag(self.off, 1) + np.diag(self.off, -1)
        return a


def solve_tridiag(diag: np.ndarray, off: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One-shot SPD tridiagonal solve (LAPACK ptsv), no cached factorization."""
    ptsv = get_lapack_funcs("ptsv", (diag,))
    _, _, x, info = ptsv(diag, off, b)
    if info != 0:
        raise np.linalg.LinAlgError(f"ptsv failed with info={info}")
    return x


class FemSpace:
    """Uniform P1 space on (0,1): mesh, matrices, and quadrature layout."""

    def __init__(self, n_cells: int):
        if n_cells < 2:
            raise ValueError("n_cells must be >= 2 (need at least one interior node)")
        self.n_cells = int(n_cells)
        self.h = 1.0 / self.n_cells
        self.nodes = np.arange(1, self.n_cells) * self.h
        n = self.n_interior
        h = self.h
        self.mass = SymTridiag(np.full(n, 2.0 * h / 3.0), np.full(n - 1, h / 6.0))
        self.stiffness = SymTridiag(np.full(n, 2.0 / h), np.full(n - 1, -1.0 / h))
        # quadrature points per cell, shape [n_cells, 3]
        cell_left = np.arange(self.n_cells) * h
        self.quad_x = cell_left[:, None] + GAUSS_POINTS[None, :] * h
        # factorize eagerly so shared read-only use needs no locking
        self.mass.factorize()
        self.stiffness.factorize()

    @property
    def n_interior(self) -> int:
        return self.n_cells - 1

    def check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_interior,):
            raise ValueError(
                f"vector length {v.shape} does not match space with "
                f"{self.n_interior} interior nodes"
            )
        return v

    def eval_at_quad(self, v: np.ndarray) -> np.ndarray:
        """P1 interpolant of interior values at the Gauss points, [n_cells, 3]."""
        v = self.check_vector(v)
        vb = np.zeros(self.n_cells + 1)
        vb[1:-1] = v
        s = GAUSS_POINTS
        return vb[:-1, None] * (1.0 - s) + vb[1:, None] * s

    def load_from_quad(self, fq: np.ndarray) -> np.ndarray:
        """Assemble b_i = integral of fq against the hat phi_i from cell samples."""
        wl = GAUSS_WEIGHTS * (1.0 - GAUSS_POINTS) * self.h
        wr = GAUSS_WEIGHTS * GAUSS_POINTS * self.h
        b = np.zeros(self.n_cells + 1)
        b[:-1] += fq @ wl
        b[1:] += fq @ wr
        return b[1:-1]

    def weighted_mass_from_quad(self, wq: np.ndarray) -> SymTridiag:
        """Tridiagonal matrix of integrals wq * phi_i * phi_j (Newton Jacobian blocks)."""
        s = GAUSS_POINTS
        h = self.h
        dl = (GAUSS_WEIGHTS * (1.0 - s) ** 2) * h
        dr = (GAUSS_WEIGHTS * s**2) * h
        doff = (GAUSS_WEIGHTS * s * (1.0 - s)) * h
        left = wq @ dl   # contribution to the cell's left node diagonal
        right = wq @ dr
        off_cells = wq @ doff
        n = self.n_interior
        diag = np.zeros(n)
        diag += right[: self.n_cells - 1]  # node i as right end of cell i-1
        diag += left[1:]                   # node i as left end of cell i
        return SymTridiag(diag, off_cells[1 : self.n_cells - 1].copy())


def build_space(n_cells: int) -> FemSpace:
    return FemSpace(n_cells)


def project_l2(space: FemSpace, fn) -> np.ndarray:
    """L2-orthogonal projection onto the interior P1 space (mass solve)."""
    b = space.load_from_quad(np.asarray(fn(space.quad_x), dtype=float))
    return space.mass.solve(b)


def interpolate(space: FemSpace, fn) -> np.ndarray:
    """Nodal interpolant (pointwise values at interior nodes)."""
    return np.asarray(fn(space.nodes), dtype=float)


def norms(space: FemSpace, v: np.ndarray) -> tuple[float, float, float]:
    """Return (l2, h1_semi, h_minus1) of an interior nodal vector."""
    v = space.check_vector(v)
    l2 = np.sqrt(max(space.mass.quadratic_form(v), 0.0))
    h1 = np.sqrt(max(space.stiffness.quadratic_form(v), 0.0))
    b = space.mass.matvec(v)
    hm1 = np.sqrt(max(float(b @ space.stiffness.solve(b)), 0.0))
    return float(l2), float(h1), float(hm1)


def nemytskii_load(space: FemSpace, fn, u: np.ndarray) -> np.ndarray:
    """Load vector of the pointwise composition fn(u) against the hat basis."""
    uq = space.eval_at_quad(u)
    return space.load_from_quad(np.asarray(fn(uq), dtype=float))


def nemytskii_jacobian(space: FemSpace, fn_prime, u: np.ndarray) -> SymTridiag:
    """Derivative of nemytskii_load with respect to the nodal values of u."""
    uq = space.eval_at_quad(u)
    return space.weighted_mass_from_quad(np.asarray(fn_prime(uq), dtype=float))


def smallest_eigenvalue(
    space: FemSpace, tol: float = 1e-10, max_iters: int = 10000
) -> float:
    lam, _ = first_eigenpair(space, tol=tol, max_iters=max_iters)
    return lam


def first_eigenpair(
    space: FemSpace, tol: float = 1e-10, max_iters: int = 10000
) -> tuple[float, np.ndarray]:
    """Smallest generalized eigenvalue of (K, M) by inverse power iteration.

    The returned vector is M-normalized.  Convergence is declared on the
    eigen-residual, which makes the Rayleigh quotient accurate to O(tol^2).
    """
    m, k = space.mass, space.stiffness
    v = np.ones(space.n_interior)
    v /= np.sqrt(m.quadratic_form(v))
    lam = k.quadratic_form(v)
    for _ in range(max_iters):
        w = k.solve(m.matvec(v))
        w /= np.sqrt(m.quadratic_form(w))
        lam = k.quadratic_form(w)
        resid = k.matvec(w) - lam * m.matvec(w)
        v = w
        if np.linalg.norm(resid) <= tol * abs(lam) * np.linalg.norm(m.matvec(w)):
            return float(lam), v
    raise ConvergenceFailure(
        f"inverse power iteration did not converge in {max_iters} iterations"
    )


def p1_eigenvalue_exact(n_cells: int, k: int = 1) -> float:
    """Closed-form k-th eigenvalue of the uniform P1 pencil on (0,1)."""
    h = 1.0 / n_cells
    c = np.cos(k * np.pi * h)
    return (6.0 / h**2) * (1.0 - c) / (2.0 + c)


def prolong(coarse: FemSpace, fine: FemSpace, v: np.ndarray) -> np.ndarray:
    """Exact P1 prolongation between nested uniform meshes (fine nodal values)."""
    if fine.n_cells % coarse.n_cells != 0:
        raise ValueError("meshes are not nested (fine n_cells must be a multiple)")
    v = coarse.check_vector(v)
    xc = np.concatenate(([0.0], coarse.nodes, [1.0]))
    vc = np.concatenate(([0.0], v, [0.0]))
    return np.interp(fine.nodes, xc, vc)


def save_vector_csv(space: FemSpace, v: np.ndarray, path) -> None:
    """Dump a nodal vector as two CSV rows: node coordinates, then values."""
    v = space.check_vector(v)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([repr(x) for x in space.nodes])
        writer.writerow([repr(x) for x in v])


def load_vector_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2:
        raise ValueError(f"expected 2 CSV rows (nodes, values), got {len(rows)}")
    nodes = np.array([float(x) for x in rows[0]])
    values = np.array([float(x) for x in rows[1]])
    return nodes, values
