"""Exact one-dimensional Kohn-Nirenberg symbol calculus over Gaussian rationals.

A symbol is a finite sum of terms

    coeff * (jet monomial in the coefficient function u) * xi^m,

graded by the signed integer power m of the frequency variable.  Jet
monomials are formal: u, u', u'', ... carry no spatial argument, and the
order-0 variable u may appear with a negative exponent (conductivity symbols
need 1/u and 1/u^2 on the undifferentiated coefficient).  All arithmetic is
exact; composition and the parametrix recursion never touch floats.

Grading convention: the homogeneity degree of a term is its xi power, and a
cutoff is an inclusive lower bound on the retained degree.  ``cutoff=None``
marks a complete symbol (all lower components vanish identically), which is
the case for differential-operator symbols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .exact import GaussianRational, I, ONE, RatLike, rat, rat_str

NEG_INF = None  # sentinel meaning "complete symbol", kept for readability


@dataclass(frozen=True)
class JetMonomial:
    """u^base_power times a multiset of derivative factors d^k u (k >= 1)."""

    base_power: int = 0
    factors: Tuple[int, ...] = ()

    def __post_init__(self):
        if any(k < 1 for k in self.factors):
            raise ValueError("derivative factors must have order >= 1")
        object.__setattr__(self, "factors", tuple(sorted(self.factors)))

    @property
    def degree(self) -> int:
        """Number of jet factors; the undifferentiated u counts base_power times."""
        return max(self.base_power, 0) + len(self.factors)

    @property
    def max_order(self) -> int:
        return max(self.factors, default=0)

    def is_trivial(self) -> bool:
        return self.base_power == 0 and not self.factors

    def __mul__(self, other: "JetMonomial") -> "JetMonomial":
        return JetMonomial(self.base_power + other.base_power,
                           self.factors + other.factors)

    def d_dx(self) -> List[Tuple[int, "JetMonomial"]]:
        """Leibniz derivative: list of (integer multiplier, monomial)."""
        out: List[Tuple[int, JetMonomial]] = []
        if self.base_power != 0:
            out.append((self.base_power,
                        JetMonomial(self.base_power - 1, self.factors + (1,))))
        seen = set()
        for i, k in enumerate(self.factors):
            if k in seen:
                continue
            seen.add(k)
            mult = self.factors.count(k)
            bumped = list(self.factors)
            bumped[i] = k + 1
            out.append((mult, JetMonomial(self.base_power, tuple(bumped))))
        return out

    def __str__(self) -> str:
        parts: List[str] = []
        if self.base_power != 0:
            parts.append("u" if self.base_power == 1 else f"u^{self.base_power}")
        seen = set()
        for k in self.factors:
            if k in seen:
                continue
            seen.add(k)
            mult = self.factors.count(k)
            name = "u" + "'" * k if k <= 4 else f"u^({k})"
            parts.append(name if mult == 1 else f"({name})^{mult}")
        return "*".join(parts) if parts else "1"


JET_ONE = JetMonomial()


def jet(order: int = 0, power: int = 1) -> JetMonomial:
    """Monomial for a single jet variable: u^power (order 0) or (d^k u)^power."""
    if order == 0:
        return JetMonomial(base_power=power)
    if power < 0:
        raise ValueError("negative powers are allowed only on the order-0 variable")
    return JetMonomial(0, (order,) * power)


TermKey = Tuple[JetMonomial, int]


class Symbol:
    """Canonical map (jet, xi_power) -> GaussianRational with a cutoff tag."""

    __slots__ = ("terms", "cutoff")

    def __init__(self, terms: Mapping[TermKey, GaussianRational] | None = None,
                 cutoff: Optional[int] = None):
        canon: Dict[TermKey, GaussianRational] = {}
        for (jm, m), c in (terms or {}).items():
            if not isinstance(c, GaussianRational):
                c = GaussianRational.of(c)
            if c.is_zero():
                continue
            if cutoff is not None and m < cutoff:
                continue
            key = (jm, m)
            acc = canon.get(key)
            canon[key] = c if acc is None else acc + c
        self.terms = {k: v for k, v in canon.items() if not v.is_zero()}
        self.cutoff = cutoff

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero() -> "Symbol":
        return Symbol({})

    @staticmethod
    def one() -> "Symbol":
        return Symbol({(JET_ONE, 0): ONE})

    @staticmethod
    def term(coeff: GaussianRational | RatLike, jm: JetMonomial = JET_ONE,
             xi_power: int = 0) -> "Symbol":
        c = coeff if isinstance(coeff, GaussianRational) else GaussianRational.of(coeff)
        return Symbol({(jm, xi_power): c})

    @staticmethod
    def xi(power: int, coeff: GaussianRational | RatLike = 1) -> "Symbol":
        return Symbol.term(coeff, JET_ONE, power)

    # -- structure ---------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def top_degree(self) -> Optional[int]:
        return max((m for _, m in self.terms), default=None)

    def component(self, degree: int) -> Dict[JetMonomial, GaussianRational]:
        return {jm: c for (jm, m), c in self.terms.items() if m == degree}

    def degrees(self) -> List[int]:
        return sorted({m for _, m in self.terms}, reverse=True)

    def truncate(self, cutoff: Optional[int]) -> "Symbol":
        if cutoff is None:
            return Symbol(self.terms, self.cutoff)
        eff = cutoff if self.cutoff is None else max(cutoff, self.cutoff)
        return Symbol({k: v for k, v in self.terms.items() if k[1] >= eff}, eff)

    # -- linear algebra ----------------------------------------------------

    def __add__(self, other: "Symbol") -> "Symbol":
        cut = _max_cut(self.cutoff, other.cutoff)
        merged = dict(self.terms)
        for k, v in other.terms.items():
            merged[k] = merged[k] + v if k in merged else v
        return Symbol(merged, cut)

    def __neg__(self) -> "Symbol":
        return Symbol({k: -v for k, v in self.terms.items()}, self.cutoff)

    def __sub__(self, other: "Symbol") -> "Symbol":
        return self + (-other)

    def scale(self, c: GaussianRational | RatLike) -> "Symbol":
        c = c if isinstance(c, GaussianRational) else GaussianRational.of(c)
        return Symbol({k: v * c for k, v in self.terms.items()}, self.cutoff)

    def __eq__(self, other) -> bool:
        return isinstance(other, Symbol) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __str__(self) -> str:
        return pretty(self)

    __repr__ = __str__


def _max_cut(a: Optional[int], b: Optional[int]) -> Optional[int]:
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


def _falling(m: int, a: int) -> int:
    out = 1
    for i in range(a):
        out *= m - i
    return out


def _dx_chain(coeff: GaussianRational, jm: JetMonomial,
              upto: int) -> List[List[Tuple[GaussianRational, JetMonomial]]]:
    """Successive D_x = (1/i) d/dx applications: chain[a] represents D_x^a."""
    chain = [[(coeff, jm)]]
    for _ in range(upto):
        nxt: Dict[JetMonomial, GaussianRational] = {}
        for c, j in chain[-1]:
            for mult, dj in j.d_dx():
                add = c * mult * (-I)  # (1/i) = -i
                nxt[dj] = nxt[dj] + add if dj in nxt else add
        chain.append([(c, j) for j, c in nxt.items() if not c.is_zero()])
        if not chain[-1]:
            break
    return chain


def _compose_raw(a: Symbol, b: Symbol, floor: Optional[int]) -> Dict[TermKey, GaussianRational]:
    """Kohn-Nirenberg sum over grades >= floor, from the stored terms as-is."""
    out: Dict[TermKey, GaussianRational] = {}
    for (jb, mb), cb in b.terms.items():
        # worst-case alpha needed against the highest a-grade
        tops = [ma for (_, ma) in a.terms]
        if not tops:
            return out
        if floor is None:
            amax = None
        else:
            amax = max(tops) + mb - floor
            if amax < 0:
                continue
        chain = None
        for (ja, ma), ca in a.terms.items():
            alpha = 0
            while True:
                if floor is not None and ma - alpha + mb < floor:
                    break
                if ma >= 0 and alpha > ma:
                    break
                if alpha >= 1 and jb.is_trivial():
                    break
                if floor is None and not (ma >= 0 or jb.is_trivial()):
                    raise ValueError(
                        "composition does not terminate; a finite cutoff is required")
                if chain is None or len(chain) <= alpha:
                    chain = _dx_chain(cb, jb, amax if amax is not None else alpha + 1)
                if alpha >= len(chain) or not chain[alpha]:
                    break
                fall = _falling(ma, alpha)
                if fall != 0:
                    w = ca * Fraction(fall, _factorial(alpha))
                    for cdx, jdx in chain[alpha]:
                        key = (ja * jdx, ma - alpha + mb)
                        add = w * cdx
                        out[key] = out[key] + add if key in out else add
                alpha += 1
    return out


def _factorial(n: int) -> int:
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def compose(a: Symbol, b: Symbol, cutoff: Optional[int] = None) -> Symbol:
    """Symbol of the composed operator, truncated below ``cutoff``.

    The result's cutoff records the deepest grade that is reliable given the
    operands' own cutoffs: a term of ``a`` below ``a.cutoff`` could have
    contributed at grade ``a.cutoff - 1 + top(b)`` and symmetrically, so the
    output is clamped there even if a deeper cutoff was requested.
    """
    bounds = []
    ta, tb = a.top_degree, b.top_degree
    if a.cutoff is not None and tb is not None:
        bounds.append(a.cutoff + tb)
    if b.cutoff is not None and ta is not None:
        bounds.append(b.cutoff + ta)
    if cutoff is not None:
        bounds.append(cutoff)
    eff: Optional[int] = max(bounds) if bounds else None
    return Symbol(_compose_raw(a, b, eff), eff)


class DegeneratePrincipalSymbol(ValueError):
    pass


def parametrix(p: Symbol, cutoff: int) -> Symbol:
    """Order-by-order right inverse of a differential-operator symbol.

    ``p`` must be a complete symbol whose top component is a single invertible
    term c * u^k * xi^m with m >= 1; the recursion solves p # r = 1 grade by
    grade down to ``cutoff``.
    """
    if p.cutoff is not None:
        raise ValueError("parametrix needs a complete (differential) symbol")
    m = p.top_degree
    if m is None or m < 1:
        raise DegeneratePrincipalSymbol("principal symbol has non-positive order")
    top = p.component(m)
    if len(top) != 1:
        raise DegeneratePrincipalSymbol(
            f"leading component at xi^{m} is not a single monomial: {sorted(map(str, top))}")
    (jm_top, c_top), = top.items()
    if jm_top.factors:
        raise DegeneratePrincipalSymbol(
            f"leading jet {jm_top} carries derivative factors")
    if c_top.is_zero():
        raise DegeneratePrincipalSymbol("degenerate principal symbol")
    if cutoff > -m:
        return Symbol({}, cutoff)

    inv_coeff = ONE / c_top
    inv_jet = JetMonomial(-jm_top.base_power)

    def mul_by_inverse(terms: Dict[TermKey, GaussianRational]) -> Dict[TermKey, GaussianRational]:
        return {(inv_jet * jm, mm - m): inv_coeff * c
                for (jm, mm), c in terms.items()}

    r_terms: Dict[TermKey, GaussianRational] = dict(
        mul_by_inverse({(JET_ONE, 0): ONE}))
    depth = -cutoff - m
    for g in range(1, depth + 1):
        partial = Symbol(r_terms)
        s_g = {jm: c for (jm, mm), c in _compose_raw(p, partial, -g).items() if mm == -g}
        if not s_g:
            continue
        correction = mul_by_inverse({(jm, -g): -c for jm, c in s_g.items()})
        for k, v in correction.items():
            r_terms[k] = r_terms[k] + v if k in r_terms else v
    return Symbol(r_terms, cutoff)


SCHRODINGER_1D = Symbol({(JET_ONE, 2): ONE, (jet(0), 0): ONE})


class TriangularityError(AssertionError):
    def __init__(self, message: str, monomial: JetMonomial):
        super().__init__(f"{message}: {monomial}")
        self.monomial = monomial


@dataclass(frozen=True)
class TriangularityReport:
    k: int
    leading: Tuple[JetMonomial, GaussianRational]
    companions: Tuple[Tuple[JetMonomial, GaussianRational], ...]

    @property
    def companion_degrees(self) -> Tuple[int, ...]:
        return tuple(jm.degree for jm, _ in self.companions)

    @property
    def companion_orders(self) -> Tuple[int, ...]:
        return tuple(jm.max_order for jm, _ in self.companions)


def triangularity_report(k: int) -> TriangularityReport:
    """Check the triangular structure of the grade -(2k+2) parametrix component.

    The unique degree-k monomial must be (-1)^k u^k with unit coefficient;
    every companion has at most k-1 jet factors and derivative order at most
    2k-2.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    r = parametrix(SCHRODINGER_1D, cutoff=-2 * k - 2)
    comp = r.component(-2 * k - 2)
    sign = 1 if k % 2 == 0 else -1
    expected = GaussianRational.of(sign)
    leading = None
    companions = []
    for jm, c in comp.items():
        if jm.degree >= k:
            if leading is not None or jm != JetMonomial(k):
                raise TriangularityError(
                    f"extra degree->={k} monomial at xi^{-2 * k - 2}", jm)
            if c != expected:
                raise TriangularityError(
                    f"leading coefficient {c} differs from {expected}", jm)
            leading = (jm, c)
        else:
            if jm.max_order > 2 * k - 2:
                raise TriangularityError(
                    f"derivative order {jm.max_order} exceeds {2 * k - 2}", jm)
            companions.append((jm, c))
    if leading is None:
        raise TriangularityError(f"missing leading monomial u^{k}", JetMonomial(k))
    companions.sort(key=lambda t: (t[0].degree, t[0].factors, t[0].base_power))
    return TriangularityReport(k, leading, tuple(companions))


# ---------------------------------------------------------------------------
# Averaging against finitely supported jet laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentSymbolLaw:
    """Finitely supported law on jet values: atoms of (weight, {order: value})."""

    atoms: Tuple[Tuple[Fraction, Mapping[int, Fraction]], ...]

    def __post_init__(self):
        atoms = tuple((rat(w), {int(k): rat(v) for k, v in ev.items()})
                      for w, ev in self.atoms)
        if any(w <= 0 for w, _ in atoms):
            raise ValueError("atom weights must be positive")
        if sum(w for w, _ in atoms) != 1:
            raise ValueError("atom weights must sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @staticmethod
    def of(*atoms: Tuple[RatLike, Mapping[int, RatLike]]) -> "MomentSymbolLaw":
        return MomentSymbolLaw(tuple((rat(w), {k: rat(v) for k, v in ev.items()})
                                     for w, ev in atoms))

    def mix(self, other: "MomentSymbolLaw", t: RatLike) -> "MomentSymbolLaw":
        t = rat(t)
        return MomentSymbolLaw(
            tuple((w * t, ev) for w, ev in self.atoms)
            + tuple((w * (1 - t), ev) for w, ev in other.atoms))

    def expect_jet(self, jm: JetMonomial) -> Fraction:
        total = Fraction(0)
        for w, ev in self.atoms:
            val = Fraction(1)
            if jm.base_power != 0:
                if 0 not in ev:
                    raise KeyError("law atom is missing jet order 0")
                val *= Fraction(ev[0]) ** jm.base_power
            for k in jm.factors:
                if k not in ev:
                    raise KeyError(f"law atom is missing jet order {k}")
                val *= ev[k]
            total += w * val
        return total


def average_symbol(s: Symbol, law: MomentSymbolLaw) -> Dict[int, GaussianRational]:
    """Expected coefficient per homogeneity degree under a finitely supported law."""
    out: Dict[int, GaussianRational] = {}
    for (jm, m), c in s.terms.items():
        add = c * law.expect_jet(jm)
        out[m] = out[m] + add if m in out else add
    return {m: v for m, v in sorted(out.items(), reverse=True) if not v.is_zero()}


# ---------------------------------------------------------------------------
# Serialization and pretty printing
# ---------------------------------------------------------------------------


def symbol_to_obj(s: Symbol) -> List[dict]:
    items = sorted(s.terms.items(),
                   key=lambda kv: (-kv[0][1], kv[0][0].base_power, kv[0][0].factors))
    return [{"re": rat_str(c.re), "im": rat_str(c.im),
             "base_power": jm.base_power, "jet": list(jm.factors), "xi_power": m}
            for (jm, m), c in items]


def symbol_from_obj(obj: Iterable[Mapping], cutoff: Optional[int] = None) -> Symbol:
    terms: Dict[TermKey, GaussianRational] = {}
    for t in obj:
        key = (JetMonomial(int(t["base_power"]), tuple(int(k) for k in t["jet"])),
               int(t["xi_power"]))
        c = GaussianRational.of(rat(t["re"]), rat(t["im"]))
        terms[key] = terms[key] + c if key in terms else c
    return Symbol(terms, cutoff)


def symbol_to_json(s: Symbol) -> str:
    return json.dumps(symbol_to_obj(s), indent=2)


def pretty(s: Symbol) -> str:
    if not s.terms:
        return "0"
    chunks = []
    for m in s.degrees():
        comp = sorted(s.component(m).items(),
                      key=lambda kv: (-kv[0].degree, kv[0].factors, kv[0].base_power))
        inner = []
        for jm, c in comp:
            cs = str(c)
            inner.append(cs if jm.is_trivial() else
                         (str(jm) if cs == "1" else f"{cs}*{jm}"))
        body = " + ".join(inner)
        if m == 0:
            chunks.append(f"({body})" if len(inner) > 1 else body)
        else:
            chunks.append(f"({body})*xi^{m}")
    return " + ".join(chunks)
