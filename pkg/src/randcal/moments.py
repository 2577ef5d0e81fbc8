"""Finite moment hierarchies for averaged DN data: the negative result.

Two finitely supported laws on the family index are built so that all moments
of S = N^2 agree through a prescribed order M; every boundary moment of the
DN bilinear form of order <= M then agrees exactly, while the mean potentials
differ at the origin.  In the other direction, the exact joint law of finitely
many DN eigenvalues separates laws that all moments up to M cannot.

Everything on the happy path is exact rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .exact import GaussianRational, RatLike, rat
from .radial import DNEigenvalueTable, QNFamily, dn_eig_exact, qn_eval

Key = Tuple[int, int]  # (ell, m) harmonic index


@dataclass(frozen=True)
class BoundaryVector:
    """Finitely supported boundary data in the (ell, m) eigenbasis."""

    coeffs: Mapping[Key, GaussianRational]

    def __post_init__(self):
        canon = {}
        for k, v in self.coeffs.items():
            if not isinstance(v, GaussianRational):
                v = GaussianRational.of(v)
            if not v.is_zero():
                canon[(int(k[0]), int(k[1]))] = v
        object.__setattr__(self, "coeffs", canon)

    @staticmethod
    def basis(ell: int, m: int = 0) -> "BoundaryVector":
        return BoundaryVector({(ell, m): GaussianRational.of(1)})

    @property
    def ell_max(self) -> int:
        return max((ell for ell, _ in self.coeffs), default=0)

    def __add__(self, other: "BoundaryVector") -> "BoundaryVector":
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out[k] + v if k in out else v
        return BoundaryVector(out)


def dn_form_entry(table: DNEigenvalueTable, f: BoundaryVector, g: BoundaryVector,
                  conjugate_g: bool = False):
    """<Lambda f, g> for a diagonal DN map; exact when the table is exact."""
    total = None
    for key, fv in f.coeffs.items():
        gv = g.coeffs.get(key)
        if gv is None:
            continue
        ell = key[0]
        if ell not in table.entries:
            raise KeyError(f"eigenvalue table does not cover ell={ell}")
        if conjugate_g:
            gv = gv.conjugate()
        term = fv * gv * rat(table.entries[ell])
        total = term if total is None else total + term
    return GaussianRational.of(0) if total is None else total


@dataclass(frozen=True)
class AffineDNDecomposition:
    """Diagonal forms alpha, beta with mu_l(N) = alpha_l - N^2 * beta_l."""

    lam: Fraction
    n: int = 3

    def alpha(self, ell: int) -> Fraction:
        return ell + Fraction(self.lam**2, 2 * (self.lam + 2 * ell + self.n - 2))

    def beta(self, ell: int) -> Fraction:
        return Fraction(2, self.lam + 2 * ell + self.n - 2)

    def pair_form(self, f: BoundaryVector, g: BoundaryVector,
                  conjugate: bool = False) -> Tuple[GaussianRational, GaussianRational]:
        """(alpha(f,g), beta(f,g)) so that <Lambda_{Q_N} f, g> = alpha - S*beta."""
        a = GaussianRational.of(0)
        b = GaussianRational.of(0)
        for key, fv in f.coeffs.items():
            gv = g.coeffs.get(key)
            if gv is None:
                continue
            prod = fv * gv
            if conjugate:
                prod = prod.conjugate()
            a = a + prod * self.alpha(key[0])
            b = b + prod * self.beta(key[0])
        return a, b


@dataclass(frozen=True)
class MomentMatchedLaws:
    """Two laws on the node set whose S = N^2 moments agree through order M."""

    order: int
    nodes: Tuple[int, ...]
    kernel: Tuple[Fraction, ...]
    law_a: Dict[int, Fraction]
    law_b: Dict[int, Fraction]

    def s_moment(self, which: str, r: int) -> Fraction:
        law = self.law_a if which == "a" else self.law_b
        return sum(p * Fraction(node**2) ** r for node, p in law.items())


def build_moment_matched_laws(m_order: int,
                              nodes: Optional[Sequence[int]] = None) -> MomentMatchedLaws:
    """Split the signed kernel of the order-M Vandermonde system in S = N^2.

    The kernel of the (M+1) x (M+2) system is one-dimensional with all
    components nonzero; its components are the signed cofactors of the square
    Vandermonde minors, computed here exactly.
    """
    if m_order < 1:
        raise ValueError("moment order must be >= 1")
    if nodes is None:
        nodes = tuple(range(1, m_order + 3))
    nodes = tuple(int(v) for v in nodes)
    if len(nodes) != m_order + 2:
        raise ValueError(f"need exactly {m_order + 2} nodes, got {len(nodes)}")
    if len(set(nodes)) != len(nodes) or any(v < 1 for v in nodes):
        raise ValueError("nodes must be distinct positive integers")
    nodes = tuple(sorted(nodes))
    squares = [Fraction(v * v) for v in nodes]

    kernel: List[Fraction] = []
    for j in range(len(nodes)):
        others = squares[:j] + squares[j + 1:]
        minor = Fraction(1)
        for a, b in combinations(others, 2):
            minor *= (b - a)
        kernel.append(minor if j % 2 == 0 else -minor)
    # internal assertion: distinct nodes force every cofactor nonzero
    assert all(c != 0 for c in kernel), "vanishing kernel component"
    assert sum(kernel) == 0, "zeroth moment of the kernel must vanish"

    mass = sum(c for c in kernel if c > 0)
    law_a = {node: c / mass for node, c in zip(nodes, kernel) if c > 0}
    law_b = {node: -c / mass for node, c in zip(nodes, kernel) if c < 0}
    return MomentMatchedLaws(m_order, nodes, tuple(kernel), law_a, law_b)


def dn_moment_product(laws: MomentMatchedLaws,
                      pairs: Sequence[Tuple[BoundaryVector, BoundaryVector]],
                      lam: RatLike, n: int = 3,
                      conjugated: Iterable[int] = ()) -> Tuple[GaussianRational, GaussianRational]:
    """Exact expectations of the product of DN matrix coefficients under both laws.

    Each factor is affine in S, so the product is a degree <= r polynomial in
    S and the two expectations coincide whenever r <= M.  Indices listed in
    ``conjugated`` get the sesquilinear (conjugated) factor.
    """
    if not pairs:
        raise ValueError("need at least one boundary pair")
    dec = AffineDNDecomposition(rat(lam), n)
    conj = set(conjugated)
    forms = [dec.pair_form(f, g, conjugate=(j in conj))
             for j, (f, g) in enumerate(pairs)]

    def expect(law: Dict[int, Fraction]) -> GaussianRational:
        total = GaussianRational.of(0)
        for node, p in law.items():
            s = Fraction(node * node)
            prod = GaussianRational.of(1)
            for a, b in forms:
                prod = prod * (a - b * s)
            total = total + prod * p
        return total

    return expect(laws.law_a), expect(laws.law_b)


def dn_covariance(law: Sequence[Tuple[RatLike, QNFamily]],
                  f: BoundaryVector, g: BoundaryVector,
                  h: BoundaryVector, k: BoundaryVector) -> GaussianRational:
    """Covariance of the two DN matrix coefficients by exact enumeration."""
    weights = [rat(w) for w, _ in law]
    if any(w <= 0 for w in weights) or sum(weights) != 1:
        raise ValueError("law weights must form a probability vector")
    xs, ys = [], []
    for _, fam in law:
        table = DNEigenvalueTable(
            {ell: dn_eig_exact(fam, ell)
             for ell in range(max(f.ell_max, g.ell_max, h.ell_max, k.ell_max) + 1)},
            "exact-formula")
        xs.append(dn_form_entry(table, f, g))
        ys.append(dn_form_entry(table, h, k))
    ex = sum((w * x for w, x in zip(weights, xs)), GaussianRational.of(0))
    ey = sum((w * y for w, y in zip(weights, ys)), GaussianRational.of(0))
    acc = GaussianRational.of(0)
    for w, x, y in zip(weights, xs, ys):
        acc = acc + (x - ex) * (y - ey) * w
    return acc


def mean_potential_gap(laws: MomentMatchedLaws, lam: RatLike, r: RatLike) -> Fraction:
    """|E q_A(r) - E q_B(r)| evaluated exactly through the family formulas."""
    lam = rat(lam)
    r = rat(r)
    gap = Fraction(0)
    for node in laws.nodes:
        pa = laws.law_a.get(node, Fraction(0))
        pb = laws.law_b.get(node, Fraction(0))
        if pa == pb:
            continue
        gap += (pa - pb) * qn_eval(QNFamily(lam, node), r)
    return abs(gap)


# ---------------------------------------------------------------------------
# Full-law fingerprints (finite-truncation demonstration)
# ---------------------------------------------------------------------------

Fingerprint = Dict[Tuple[Fraction, ...], Fraction]


def law_fingerprint(law: Sequence[Tuple[RatLike, QNFamily]], truncation: int) -> Fingerprint:
    """Exact joint law of the DN eigenvalue vector (mu_0, ..., mu_L)."""
    out: Fingerprint = {}
    for w, fam in law:
        w = rat(w)
        key = tuple(dn_eig_exact(fam, ell) for ell in range(truncation + 1))
        out[key] = out.get(key, Fraction(0)) + w
    return out


def fingerprint_tv_distance(a: Fingerprint, b: Fingerprint) -> Fraction:
    keys = set(a) | set(b)
    return sum((abs(a.get(k, Fraction(0)) - b.get(k, Fraction(0))) for k in keys),
               Fraction(0)) / 2


def random_boundary_vector(rng, ell_max: int = 8, support: int = 3,
                           complex_entries: bool = False) -> BoundaryVector:
    """Sparse boundary vector with small rational entries (test plumbing)."""
    coeffs = {}
    for _ in range(support):
        ell = int(rng.integers(0, ell_max + 1))
        m = int(rng.integers(-ell, ell + 1)) if ell > 0 else 0
        re = Fraction(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
        im = Fraction(int(rng.integers(-5, 6)), int(rng.integers(1, 4))) \
            if complex_entries else Fraction(0)
        if re == 0 and im == 0:
            re = Fraction(1)
        coeffs[(ell, m)] = GaussianRational.of(re, im)
    return BoundaryVector(coeffs)
