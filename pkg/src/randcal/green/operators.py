"""Discrete Dirichlet Green's operators and their exact averages.

Potentials use the standard 3/5-point Laplacian plus a diagonal; conductivity
uses face conductivities given by harmonic node averages, which preserves the
scalar-multiple identity R_{alpha*gamma} = alpha^{-1} R_gamma exactly at the
matrix level.  Operators are SPD and immutable after construction; the dense
inverse is materialized lazily and only where a test needs the full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grids import Grid

_SYM_TOL = 1e-12


class AssemblyError(ValueError):
    pass


def _laplacian(grid: Grid) -> sp.csc_matrix:
    h2 = grid.h * grid.h
    mats = []
    for s in grid.shape:
        main = np.full(s, 2.0)
        off = np.full(s - 1, -1.0)
        mats.append(sp.diags([off, main, off], [-1, 0, 1], format="csc"))
    if grid.dim == 1:
        return (mats[0] / h2).tocsc()
    n0, n1 = grid.shape
    eye0, eye1 = sp.identity(n0, format="csc"), sp.identity(n1, format="csc")
    return ((sp.kron(mats[0], eye1) + sp.kron(eye0, mats[1])) / h2).tocsc()


def _conductivity_matrix(grid: Grid, gamma: np.ndarray) -> sp.csc_matrix:
    grid.check_field(gamma)
    if np.any(gamma <= 0):
        raise AssemblyError("conductivity field must be strictly positive")
    h2 = grid.h * grid.h

    def face(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return 2.0 * a * b / (a + b)

    if grid.dim == 1:
        g = gamma
        left = face(g[:-1], g[1:])          # faces between nodes i and i+1
        n = grid.shape[0]
        main = (left[:-1] + left[1:]) / h2  # per interior node i=1..n
        off = -left[1:-1] / h2
        return sp.diags([off, main, off], [-1, 0, 1], format="csc")

    n0, n1 = grid.shape
    fx = face(gamma[:-1, :], gamma[1:, :])  # (n0+1, n1+2) faces in axis 0
    fy = face(gamma[:, :-1], gamma[:, 1:])  # (n0+2, n1+1) faces in axis 1
    idx = np.arange(n0 * n1).reshape(n0, n1)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    diag = (fx[:-1, 1:-1] + fx[1:, 1:-1] + fy[1:-1, :-1] + fy[1:-1, 1:]) / h2
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())

    cx = -fx[1:-1, 1:-1] / h2               # coupling (i, j) <-> (i+1, j)
    rows.append(idx[:-1, :].ravel()); cols.append(idx[1:, :].ravel()); vals.append(cx.ravel())
    rows.append(idx[1:, :].ravel()); cols.append(idx[:-1, :].ravel()); vals.append(cx.ravel())

    cy = -fy[1:-1, 1:-1] / h2               # coupling (i, j) <-> (i, j+1)
    rows.append(idx[:, :-1].ravel()); cols.append(idx[:, 1:].ravel()); vals.append(cy.ravel())
    rows.append(idx[:, 1:].ravel()); cols.append(idx[:, :-1].ravel()); vals.append(cy.ravel())

    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n0 * n1, n0 * n1))
    return mat.tocsc()


class DiscreteGreen:
    """Factorization-backed inverse of an SPD elliptic system matrix."""

    def __init__(self, grid: Grid, system: sp.csc_matrix, kind: str,
                 field: np.ndarray):
        self.grid = grid
        self.kind = kind
        self.field = field
        self.system = system
        defect = abs(system - system.T).max()
        if defect > _SYM_TOL * max(1.0, abs(system).max()):
            raise AssemblyError(f"assembled system is not symmetric (defect {defect})")
        self._lu = splu(system)
        if hasattr(self._lu, "U"):
            du = self._lu.U.diagonal()
            if np.any(du.real <= 0) if np.isrealobj(du) else np.any(du.real <= 0):
                raise AssemblyError("assembled system is not positive definite")
        self._dense: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.system.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Green operator action: solve the system (handles complex input)."""
        v = np.asarray(v)
        if np.iscomplexobj(v):
            return self._lu.solve(v.real.copy()) + 1j * self._lu.solve(v.imag.copy())
        return self._lu.solve(v.astype(float))

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self._lu.solve(np.eye(self.n))
            self._dense = 0.5 * (self._dense + self._dense.T)
        return self._dense

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.dense())


def assemble_green(grid: Grid, field: np.ndarray, kind: str = "potential") -> DiscreteGreen:
    """Dirichlet Green's operator for a potential or conductivity field."""
    field = np.asarray(field, dtype=float)
    grid.check_field(field)
    if kind == "potential":
        if np.any(field < 0):
            raise AssemblyError("potential field must be nonnegative")
        q = grid.flatten_interior(field)
        system = (_laplacian(grid) + sp.diags(q)).tocsc()
    elif kind == "conductivity":
        system = _conductivity_matrix(grid, field)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return DiscreteGreen(grid, system, kind, field)


# ---------------------------------------------------------------------------
# Samplers over coefficient fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomSampler:
    """Finitely supported law over coefficient fields."""

    atoms: Tuple[Tuple[float, np.ndarray], ...]

    def __post_init__(self):
        atoms = tuple((float(w), np.asarray(f, dtype=float)) for w, f in self.atoms)
        if any(w <= 0 for w, _ in atoms):
            raise ValueError("atom weights must be positive")
        if abs(sum(w for w, _ in atoms) - 1.0) > 1e-12:
            raise ValueError("atom weights must sum to 1")
        object.__setattr__(self, "atoms", atoms)

    def support(self) -> Tuple[Tuple[float, np.ndarray], ...]:
        return self.atoms

    def mean_field(self) -> np.ndarray:
        return sum(w * f for w, f in self.atoms)

    def moment_field(self, k: int) -> np.ndarray:
        return sum(w * f**k for w, f in self.atoms)


@dataclass(frozen=True)
class FiniteModelSampler:
    """q = q0 + sum_j X_j V_j with a finitely supported law on X."""

    q0: np.ndarray
    profiles: Tuple[np.ndarray, ...]
    law: Tuple[Tuple[float, Tuple[float, ...]], ...]

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "profiles",
                           tuple(np.asarray(v, dtype=float) for v in self.profiles))
        law = tuple((float(w), tuple(float(x) for x in xs)) for w, xs in self.law)
        if any(w <= 0 for w, _ in law):
            raise ValueError("law weights must be positive")
        if abs(sum(w for w, _ in law) - 1.0) > 1e-12:
            raise ValueError("law weights must sum to 1")
        if any(len(xs) != len(self.profiles) for _, xs in law):
            raise ValueError("law atoms must match the number of profiles")
        object.__setattr__(self, "law", law)

    @property
    def d(self) -> int:
        return len(self.profiles)

    def field_for(self, xs: Sequence[float]) -> np.ndarray:
        out = self.q0.copy()
        for x, v in zip(xs, self.profiles):
            out = out + x * v
        return out

    def support(self) -> Tuple[Tuple[float, np.ndarray], ...]:
        return tuple((w, self.field_for(xs)) for w, xs in self.law)

    def mean_field(self) -> np.ndarray:
        return sum(w * f for w, f in self.support())

    def moment_field(self, k: int) -> np.ndarray:
        return sum(w * f**k for w, f in self.support())

    def mixed_moment(self, alpha: Sequence[int]) -> float:
        total = 0.0
        for w, xs in self.law:
            term = w
            for x, a in zip(xs, alpha):
                term *= x**a
            total += term
        return total


CoefficientSampler = Union[AtomSampler, FiniteModelSampler]


class AveragedGreen:
    """Convex combination of member Green operators (weak operator mean)."""

    def __init__(self, members: Sequence[Tuple[float, DiscreteGreen]]):
        if not members:
            raise ValueError("empty average")
        self.members = tuple(members)
        self.grid = self.members[0][1].grid
        self.kind = self.members[0][1].kind
        self._dense: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.members[0][1].n

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = None
        for w, g in self.members:
            term = w * g.apply(v)
            out = term if out is None else out + term
        return out

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = sum(w * g.dense() for w, g in self.members)
        return self._dense


def averaged_green(sampler: CoefficientSampler, grid: Grid,
                   kind: str = "potential", mode: str = "exact",
                   seed: int = 0, samples: int = 0) -> AveragedGreen:
    """Average of member Green operators: exact enumeration by default.

    Monte Carlo mode (seeded, reproducible) draws atoms with replacement and
    exists only for stress tests.
    """
    if mode == "exact":
        members = [(w, assemble_green(grid, f, kind)) for w, f in sampler.support()]
    elif mode == "mc":
        if samples < 1:
            raise ValueError("mc mode needs samples >= 1")
        rng = np.random.default_rng(seed)
        support = sampler.support()
        weights = np.array([w for w, _ in support])
        picks = rng.choice(len(support), size=samples, p=weights / weights.sum())
        counts: Dict[int, int] = {}
        for p in picks:
            counts[int(p)] = counts.get(int(p), 0) + 1
        members = [(c / samples, assemble_green(grid, support[i][1], kind))
                   for i, c in sorted(counts.items())]
    else:
        raise ValueError(f"unknown averaging mode {mode!r}")
    return AveragedGreen(members)


# ---------------------------------------------------------------------------
# Order and rigidity checks
# ---------------------------------------------------------------------------


def jensen_green_check(sampler: CoefficientSampler, grid: Grid) -> Tuple[float, float]:
    """(lambda_min, lambda_max) of Ebar - G_{mean potential}; min >= -1e-10."""
    ebar = averaged_green(sampler, grid, "potential").dense()
    gbar = assemble_green(grid, sampler.mean_field(), "potential").dense()
    diff = ebar - gbar
    eigs = np.linalg.eigvalsh(0.5 * (diff + diff.T))
    return float(eigs[0]), float(eigs[-1])


def second_order_identity_residual(sampler: CoefficientSampler, grid: Grid) -> float:
    """Residual of the exact matrix identity behind the Green Jensen gap.

    || (Ebar - G_qbar) - sum_i w_i G_qbar K_i G_{q_i} K_i G_qbar ||_2 with
    K_i the diagonal deviation of atom i from the mean.
    """
    qbar_field = sampler.mean_field()
    gbar = assemble_green(grid, qbar_field, "potential").dense()
    ebar = None
    second = None
    for w, f in sampler.support():
        gi = assemble_green(grid, f, "potential").dense()
        ebar = w * gi if ebar is None else ebar + w * gi
        k = grid.flatten_interior(f - qbar_field)
        m = gbar * k[None, :]          # G_qbar K_i
        term = w * (m @ gi @ m.T)
        second = term if second is None else second + term
    resid = (ebar - gbar) - second
    return float(np.linalg.norm(resid, 2))


@dataclass(frozen=True)
class RigidityReport:
    residual: float
    proportional: Optional[bool] = None
    harmonic_combination: Optional[bool] = None


def rigidity_residual(q: np.ndarray, q1: np.ndarray, q2: np.ndarray, tau: float,
                      grid: Grid, kind: str = "potential",
                      tol: float = 1e-9) -> RigidityReport:
    """Operator-norm residual of G_q = tau G_{q1} + (1-tau) G_{q2}.

    In conductivity mode the report also says whether the pair is proportional
    and whether the inverse fields satisfy the convex compatibility relation,
    the only way the residual can vanish.
    """
    g = assemble_green(grid, q, kind).dense()
    g1 = assemble_green(grid, q1, kind).dense()
    g2 = assemble_green(grid, q2, kind).dense()
    diff = g - tau * g1 - (1.0 - tau) * g2
    residual = float(np.linalg.norm(0.5 * (diff + diff.T), 2))
    if kind != "conductivity":
        return RigidityReport(residual)
    ratio = q2 / q1
    proportional = bool(np.ptp(ratio) <= tol * np.max(np.abs(ratio)))
    harm = 1.0 / q - (tau / q1 + (1.0 - tau) / q2)
    harmonic = bool(np.max(np.abs(harm)) <= tol * np.max(1.0 / np.abs(q)))
    return RigidityReport(residual, proportional, harmonic)
