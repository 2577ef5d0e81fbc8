"""Radial machinery on the unit ball.

The potential family here is exactly solvable: its Dirichlet-to-Neumann
eigenvalues are rational numbers, affine in the square of the family index,
which is what makes the averaged-boundary-data counterexamples exact.  An
independent shooting oracle integrates the radial ODE in the log-radial
variable and never sees those formulas.

DN eigenvalue conventions: for boundary data equal to a degree-l spherical
harmonic the DN map acts by the scalar mu_l = R_l'(1)/R_l(1), where R_l is
the regular radial solution.  Everything in this module is diagonal in that
basis; spherical harmonics never materialize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad, solve_ivp

from .exact import RatLike, rat

DEFAULT_LAMBDA = Fraction(16)

_SHOOT_EPS = 1e-6
_SHOOT_RTOL = 1e-11
_SHOOT_ATOL = 1e-12


class DomainError(ValueError):
    pass


class ShootingError(RuntimeError):
    """Raised when the radial ODE integration fails; carries solver diagnostics."""


@dataclass(frozen=True)
class QNFamily:
    """Radial potential family member, parameters (lambda, N, dimension)."""

    lam: Fraction
    N: int
    n: int = 3

    def __post_init__(self):
        object.__setattr__(self, "lam", rat(self.lam))
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        if self.n < 2:
            raise ValueError("dimension must be >= 2")
        if self.lam <= 2 * self.N:
            raise DomainError(f"need lambda > 2N, got lambda={self.lam}, N={self.N}")

    @property
    def d(self) -> Fraction:
        return (self.lam - 2 * self.N) / (self.lam + 2 * self.N)

    @property
    def beta(self) -> Fraction:
        return self.d * Fraction(1 - 2 * self.N, 1 + 2 * self.N)


@dataclass(frozen=True)
class RadialPotential:
    """A radial potential on [0, 1] with smoothness metadata."""

    fn: Callable[[float], float]
    label: str = ""
    smooth_order: int = 10**9

    def __call__(self, r):
        return self.fn(r)


def qn_eval(fam: QNFamily, r):
    """Exact family formula; rational in r^2, exact on Fraction input."""
    if r < 0 or r > 1:
        raise DomainError(f"r={r} outside [0, 1]")
    d = fam.d if isinstance(r, Fraction) else float(fam.d)
    rho = r ** (2 * fam.N)
    num = 8 * fam.N**2 * d * r ** (2 * fam.N - 2) if fam.N > 1 else 8 * d
    return num / (1 - d * rho) ** 2


def qn_potential(fam: QNFamily) -> RadialPotential:
    return RadialPotential(lambda r: float(qn_eval(fam, r)),
                           label=f"Q_{fam.N}(lambda={fam.lam})")


def mean_potential(law: Sequence[Tuple[RatLike, QNFamily]]) -> RadialPotential:
    """Pointwise weighted mean of family atoms (floats; no exact shortcut)."""
    atoms = [(float(rat(w)), fam) for w, fam in law]
    return RadialPotential(
        lambda r: sum(w * float(qn_eval(fam, r)) for w, fam in atoms),
        label="mean(" + ", ".join(f"Q_{f.N}" for _, f in atoms) + ")")


def dn_eig_exact(fam: QNFamily, ell: int) -> Fraction:
    """Exact rational DN eigenvalue; affine in N^2 for fixed (lambda, ell, n)."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    return ell + Fraction(fam.lam**2 - 4 * fam.N**2,
                          2 * (fam.lam + 2 * ell + fam.n - 2))


def conductivity_dn_exact(fam: QNFamily, ell: int) -> Fraction:
    """Conductivity DN eigenvalue kappa_l = mu_l - mu_0 (n = 3 explicit case)."""
    if fam.n != 3:
        raise DomainError("explicit conductivity eigenvalues are stated for n=3")
    return dn_eig_exact(fam, ell) - dn_eig_exact(fam, 0)


def radial_exact_solution(fam: QNFamily, ell: int, r):
    """Regular (unnormalized) radial solution r^l (1-c r^2N)/(1-d r^2N)."""
    nu = Fraction(2 * ell + fam.n - 2, 2)
    c = fam.d * (nu - fam.N) / (nu + fam.N)
    if isinstance(r, Fraction):
        d = fam.d
    else:
        c, d = float(c), float(fam.d)
    if r == 0:
        return (1 - c) / (1 - d) if ell == 0 else 0 * c
    rho = r ** (2 * fam.N)
    return r**ell * (1 - c * rho) / (1 - d * rho)


def wn_eval(fam: QNFamily, r):
    """Positive radial null solution normalized to 1 on the boundary."""
    d, b = fam.d, fam.beta
    if not isinstance(r, Fraction):
        d, b = float(d), float(b)
    rho = r ** (2 * fam.N)
    return ((1 - d) / (1 - b)) * (1 - b * rho) / (1 - d * rho)


def gamma_n(fam: QNFamily, r):
    return wn_eval(fam, r) ** 2


def _gamma_n_log_deriv_t(fam: QNFamily, r: float) -> float:
    """r * d/dr of log gamma_N, i.e. the log-radial derivative."""
    d, b = float(fam.d), float(fam.beta)
    rho = r ** (2 * fam.N)
    return 4 * fam.N * rho * (d / (1 - d * rho) - b / (1 - b * rho))


# ---------------------------------------------------------------------------
# Shooting oracle: log-radial Riccati integration
# ---------------------------------------------------------------------------
#
# In t = log r the regular solution satisfies R_tt = (2-n) R_t + (l(l+n-2)
# + r^2 q(r)) R, so phi = R_t / R obeys a Riccati equation with the fixed
# point phi = l when q = 0.  Integrating phi removes both the coordinate
# singularity and the r^l dynamic range; log R is carried alongside so the
# solution itself can be reconstructed.


def _potential_fn(q) -> Callable[[float], float]:
    if isinstance(q, QNFamily):
        return qn_potential(q).fn
    if isinstance(q, RadialPotential):
        return q.fn
    if callable(q):
        return q
    raise TypeError(f"not a potential: {q!r}")


def _shoot(q, ell: int, n: int, eps: float, rtol: float,
           dense: bool = False):
    qf = _potential_fn(q)
    ll = ell * (ell + n - 2)
    q0 = float(qf(0.0))
    c2 = q0 / (2 * (2 * ell + n))
    e2 = eps * eps
    phi0 = (ell + (ell + 2) * c2 * e2) / (1 + c2 * e2)
    t0 = math.log(eps)

    def rhs(t, y):
        r = math.exp(t)
        phi = y[0]
        dphi = (2 - n) * phi - phi * phi + ll + r * r * qf(r)
        return (dphi, phi)

    sol = solve_ivp(rhs, (t0, 0.0), (phi0, 0.0), method="DOP853",
                    rtol=rtol, atol=_SHOOT_ATOL, dense_output=dense)
    if not sol.success:
        raise ShootingError(f"radial ODE integration failed: {sol.message} "
                            f"(ell={ell}, n={n})")
    return sol


def dn_eig_numeric(q, ell: int, n: int, *, eps: float = _SHOOT_EPS,
                   rtol: float = _SHOOT_RTOL) -> float:
    """DN eigenvalue R'(1)/R(1) from the Frobenius-seeded shooting solve."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    return float(_shoot(q, ell, n, eps, rtol).y[0, -1])


def radial_solution_numeric(q, ell: int, n: int, *, eps: float = _SHOOT_EPS,
                            rtol: float = _SHOOT_RTOL) -> Callable[[float], float]:
    """Shooting solution as a callable on (eps, 1], normalized to R(1) = 1."""
    sol = _shoot(q, ell, n, eps, rtol, dense=True)
    psi1 = float(sol.y[1, -1])

    def R(r: float) -> float:
        t = math.log(r)
        if t < sol.t[0]:
            raise DomainError(f"r={r} below the integration seed radius")
        return math.exp(float(sol.sol(t)[1]) - psi1)

    return R


def conductivity_dn_numeric(fam: QNFamily, ell: int, *, eps: float = _SHOOT_EPS,
                            rtol: float = _SHOOT_RTOL) -> float:
    """Shooting value of kappa_l for gamma_N, via the conductivity-mode ODE."""
    return _conductivity_shoot(fam, ell, eps, rtol).y[0, -1]


def _conductivity_shoot(fam: QNFamily, ell: int, eps: float, rtol: float,
                        dense: bool = False):
    n = fam.n
    ll = ell * (ell + n - 2)

    def rhs(t, y):
        r = math.exp(t)
        eta = y[0]
        deta = (2 - n - _gamma_n_log_deriv_t(fam, r)) * eta + ll - eta * eta
        return (deta, eta)

    sol = solve_ivp(rhs, (math.log(eps), 0.0), (float(ell), 0.0), method="DOP853",
                    rtol=rtol, atol=_SHOOT_ATOL, dense_output=dense)
    if not sol.success:
        raise ShootingError(f"conductivity ODE integration failed: {sol.message}")
    return sol


def conductivity_solution_numeric(fam: QNFamily, ell: int, *,
                                  eps: float = _SHOOT_EPS,
                                  rtol: float = _SHOOT_RTOL) -> Callable[[float], float]:
    sol = _conductivity_shoot(fam, ell, eps, rtol, dense=True)
    psi1 = float(sol.y[1, -1])

    def U(r: float) -> float:
        return math.exp(float(sol.sol(math.log(r))[1]) - psi1)

    return U


def liouville_consistency_check(fam: QNFamily, ell: int,
                                grid: Optional[Sequence[float]] = None) -> float:
    """Sup deviation between the conductivity solution and w_N^{-1} * (potential
    solution), both normalized at r = 1."""
    if grid is None:
        grid = np.linspace(0.05, 1.0, 96)
    U = conductivity_solution_numeric(fam, ell)
    R = radial_solution_numeric(qn_potential(fam), ell, fam.n)
    w1 = float(wn_eval(fam, 1.0))
    dev = 0.0
    for r in grid:
        v = R(float(r)) / float(wn_eval(fam, float(r))) * w1
        dev = max(dev, abs(U(float(r)) - v))
    return dev


# ---------------------------------------------------------------------------
# Eigenvalue tables and identity checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DNEigenvalueTable:
    """Per-degree DN eigenvalues with a provenance tag."""

    entries: Dict[int, Union[Fraction, float]]
    provenance: str  # "exact-formula" | "ode-oracle"

    def __getitem__(self, ell: int):
        return self.entries[ell]

    @property
    def ell_max(self) -> int:
        return max(self.entries)


def dn_table_exact(fam: QNFamily, ell_max: int) -> DNEigenvalueTable:
    return DNEigenvalueTable({l: dn_eig_exact(fam, l) for l in range(ell_max + 1)},
                             "exact-formula")


def dn_table_numeric(q, ell_max: int, n: int) -> DNEigenvalueTable:
    return DNEigenvalueTable({l: dn_eig_numeric(q, l, n) for l in range(ell_max + 1)},
                             "ode-oracle")


def verify_affine_identity(n0: int, combo: Sequence[Tuple[RatLike, int]],
                           lam: RatLike = DEFAULT_LAMBDA, n: int = 3,
                           ell_max: int = 50,
                           mode: str = "schrodinger") -> Fraction:
    """Max exact deviation |mu(N0) - sum p_j mu(N_j)| over ell <= ell_max.

    Zero exactly when N0^2 equals the weighted mean of the N_j^2.
    """
    lam = rat(lam)
    weights = [rat(w) for w, _ in combo]
    if any(w <= 0 for w in weights) or sum(weights) != 1:
        raise ValueError("weights must be positive and sum to 1")
    fams = [QNFamily(lam, nj, n) for _, nj in combo]
    fam0 = QNFamily(lam, n0, n)
    if mode == "schrodinger":
        eig = dn_eig_exact
    elif mode == "conductivity":
        eig = conductivity_dn_exact
    else:
        raise ValueError(f"unknown mode {mode!r}")
    dev = Fraction(0)
    for ell in range(ell_max + 1):
        lhs = eig(fam0, ell)
        rhs = sum(w * eig(f, ell) for w, f in zip(weights, fams))
        dev = max(dev, abs(lhs - rhs))
    return dev


@dataclass(frozen=True)
class BarycentricTuple:
    n0: int
    weights: Tuple[Fraction, ...]
    nodes: Tuple[int, ...]
    lam: Fraction


def find_barycentric_tuples(n_max: int, j: int = 2,
                            lam_policy: Optional[Callable[[int], RatLike]] = None
                            ) -> List[BarycentricTuple]:
    """Enumerate exact affine DN identities: N0^2 a true convex combination.

    For j = 2 the weight is forced; for j >= 3 the two-sided uniform-mass
    solution is returned (mass split between the nodes below and above N0^2
    so the barycenter lands exactly).
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    if lam_policy is None:
        lam_policy = lambda top: 2 * top + 2
    out: List[BarycentricTuple] = []
    from itertools import combinations
    for nodes in combinations(range(1, n_max + 1), j):
        squares = [nj * nj for nj in nodes]
        for n0 in range(1, n_max + 1):
            if n0 in nodes:
                continue
            s0 = n0 * n0
            if not (min(squares) < s0 < max(squares)):
                continue
            if j == 2:
                p = Fraction(squares[1] - s0, squares[1] - squares[0])
                weights = (p, 1 - p)
            else:
                lo = [s for s in squares if s < s0]
                hi = [s for s in squares if s > s0]
                if not lo or not hi:
                    continue
                alo = Fraction(sum(lo), len(lo)) - s0
                ahi = Fraction(sum(hi), len(hi)) - s0
                mhi = -alo / (ahi - alo)
                mlo = 1 - mhi
                weights = tuple(
                    (mlo / len(lo)) if s < s0 else (mhi / len(hi)) for s in squares)
            if any(not (0 < w < 1) for w in weights):
                continue
            lam = rat(lam_policy(max(n_max, n0, *nodes)))
            out.append(BarycentricTuple(n0, tuple(weights), nodes, lam))
    return out


def alessandrini_check(q1, q2, ell: int, n: int) -> float:
    """Residual of the boundary-interior pairing identity for one harmonic degree.

    Left side: difference of shooting DN eigenvalues.  Right side: the
    weighted interior integral of (q1 - q2) against the two normalized radial
    solutions.
    """
    f1, f2 = _potential_fn(q1), _potential_fn(q2)
    lhs = dn_eig_numeric(q1, ell, n) - dn_eig_numeric(q2, ell, n)
    R1 = radial_solution_numeric(q1, ell, n)
    R2 = radial_solution_numeric(q2, ell, n)

    def integrand(r: float) -> float:
        return (f1(r) - f2(r)) * R1(r) * R2(r) * r ** (n - 1)

    lo = _SHOOT_EPS * 1.01
    rhs, _ = quad(integrand, lo, 1.0, epsabs=1e-12, epsrel=1e-11, limit=200)
    return abs(lhs - rhs)


def jensen_dn_check(law: Sequence[Tuple[RatLike, Union[QNFamily, RadialPotential]]],
                    ell_max: int, n: int = 3, tol: float = 1e-7) -> List[float]:
    """Margins mu_l(mean potential) - E mu_l; all must be >= -tol."""
    weights = [rat(w) for w, _ in law]
    if any(w <= 0 for w in weights) or sum(weights) != 1:
        raise ValueError("weights must form a probability vector")
    atoms = [a for _, a in law]
    wf = [float(w) for w in weights]
    qbar = RadialPotential(
        lambda r: sum(w * float(_potential_fn(a)(r)) for w, a in zip(wf, atoms)),
        label="mean potential")
    margins = []
    for ell in range(ell_max + 1):
        e_mu = 0.0
        for w, a in zip(weights, atoms):
            mu = (float(dn_eig_exact(a, ell)) if isinstance(a, QNFamily)
                  else dn_eig_numeric(a, ell, n))
            e_mu += float(w) * mu
        margin = dn_eig_numeric(qbar, ell, n) - e_mu
        if margin < -tol:
            raise AssertionError(
                f"Jensen margin {margin} below -{tol} at ell={ell}")
        margins.append(margin)
    return margins
