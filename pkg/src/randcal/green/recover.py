"""Recovery pipelines driven by probe-estimated interior symbols.

The averaged potential Green's operator exposes the mean at symbol order -4
and the variance at order -6 of the re-centered difference; the two-atom
closure turns the order -8 coefficient into the third moment after the
degree <= 2 jet contributions (taken from the exact symbol expansion, not
hard-coded) are subtracted.  Conductivity averaging exposes E(1/gamma) at
the leading order and a weighted log-gradient covariance matrix at order -4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..symcalc import (
    SCHRODINGER_1D,
    JetMonomial,
    MomentSymbolLaw,
    Symbol,
    average_symbol,
    parametrix,
)
from .grids import Grid, constant_field
from .operators import (
    AtomSampler,
    AveragedGreen,
    CoefficientSampler,
    DiscreteGreen,
    FiniteModelSampler,
    assemble_green,
    averaged_green,
)
from .probes import ProbeConfig, ProbeError, fit_inverse_powers, probe_symbol


class OperatorDifference:
    """Lazy difference of two solve-backed operators."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def apply(self, v):
        return self.a.apply(v) - self.b.apply(v)


@dataclass(frozen=True)
class RecoveryConfig:
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    mean_powers: Tuple[int, ...] = (4, 6)
    var_powers: Tuple[int, ...] = (4, 6, 8)
    field_stride: int = 1        # stride of the field-probing sweep
    smooth_passes: int = 2       # local averaging passes on probed fields
    theta: Tuple[float, ...] = (1.0,)

    def margin_nodes(self, grid: Grid) -> int:
        return int(math.ceil(self.probe.radius_for(grid) / grid.h)) + 2


def _admissible_range(grid: Grid, axis: int, margin: int) -> range:
    return range(1 + margin, grid.shape[axis] + 1 - margin)


def _smooth_field(values: np.ndarray, passes: int) -> np.ndarray:
    """A few sweeps of a short local average; kills probe jitter, keeps
    smooth structure (the probed coefficients vary on the window scale)."""
    out = values.astype(float).copy()
    for _ in range(passes):
        if out.ndim == 1:
            pad = np.pad(out, 1, mode="edge")
            out = 0.25 * pad[:-2] + 0.5 * pad[1:-1] + 0.25 * pad[2:]
        else:
            pad = np.pad(out, 1, mode="edge")
            out = 0.5 * pad[1:-1, 1:-1] + 0.125 * (
                pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:])
    return out


def _probe_fit(op, grid: Grid, idx, cfg: RecoveryConfig,
               powers: Sequence[int]) -> Dict[int, float]:
    samples = probe_symbol_detailed(
        op, grid, idx, cfg.theta, cfg.probe.kappas(grid),
        cfg.probe.radius_for(grid), cfg.probe.plateau_fraction,
        cfg.probe.smooth_order, cfg.probe.highpass_fraction,
        cfg.probe.read_radius)
    return fit_inverse_powers(samples, powers, cfg.probe.condition_threshold)


def _field_from_probes(grid: Grid, values_at: Dict[int, float],
                       cfg: RecoveryConfig) -> np.ndarray:
    """1D: interpolate probe values onto the closed lattice, edge-extended."""
    idxs = np.array(sorted(values_at), dtype=float)
    vals = np.array([values_at[int(i)] for i in idxs])
    full = np.interp(np.arange(grid.shape[0] + 2, dtype=float), idxs, vals)
    return _smooth_field(full, cfg.smooth_passes)


@dataclass
class MeanVarianceResult:
    qbar_field: np.ndarray               # recovered mean on the closed lattice
    probe_indices: Tuple[int, ...]       # closed-lattice probe indices
    qbar_at_probes: Dict[int, float]
    var_at_probes: Dict[int, float]
    c8_at_probes: Dict[int, float]       # order -8 fit of Ebar - G_{qbar hat}
    var_field: np.ndarray


def recover_mean_variance(ebar: AveragedGreen, grid: Grid,
                          probe_indices: Optional[Sequence[int]] = None,
                          config: Optional[RecoveryConfig] = None) -> MeanVarianceResult:
    """Two-stage mean/variance recovery from the averaged potential operator.

    Stage 1 probes Ebar - G_0 and fits c4/xi^4 + c6/xi^6: the mean is -c4.
    Stage 2 assembles G from the recovered mean field, probes the re-centered
    difference, and fits the variance at order -6 (the order -8 coefficient
    is kept for the two-atom pipeline).
    """
    if grid.dim != 1:
        raise ValueError("mean/variance recovery is implemented on 1d grids")
    cfg = config or RecoveryConfig()
    margin = cfg.margin_nodes(grid)
    sweep = list(_admissible_range(grid, 0, margin))[::cfg.field_stride]
    if probe_indices is None:
        probe_indices = sweep[:: max(1, len(sweep) // 8)]
    probe_indices = tuple(int(i) for i in probe_indices)
    for i in probe_indices:
        if i not in sweep:
            raise ProbeError(f"probe index {i} outside the admissible sweep")

    g0 = assemble_green(grid, constant_field(grid, 0.0), "potential")
    d1 = OperatorDifference(ebar, g0)
    qbar_sweep: Dict[int, float] = {}
    for i in sweep:
        fit = _probe_fit(d1, grid, (i,), cfg, cfg.mean_powers)
        qbar_sweep[i] = -fit[cfg.mean_powers[0]]
    qbar_field = np.maximum(_field_from_probes(grid, qbar_sweep, cfg), 0.0)

    g_qbar = assemble_green(grid, qbar_field, "potential")
    d2 = OperatorDifference(ebar, g_qbar)
    var_at: Dict[int, float] = {}
    c8_at: Dict[int, float] = {}
    var_sweep: Dict[int, float] = {}
    for i in sweep:
        fit = _probe_fit(d2, grid, (i,), cfg, cfg.var_powers)
        var_sweep[i] = fit[6]
        if i in probe_indices:
            var_at[i] = fit[6]
            c8_at[i] = fit.get(8, 0.0)
    var_field = np.maximum(_field_from_probes(grid, var_sweep, cfg), 0.0)
    qbar_at = {i: qbar_sweep[i] for i in probe_indices}
    return MeanVarianceResult(qbar_field, probe_indices, qbar_at, var_at,
                              c8_at, var_field)


# ---------------------------------------------------------------------------
# Two-atom closure
# ---------------------------------------------------------------------------


class MomentConsistencyError(ValueError):
    pass


def two_atom_recover(m1, m2, m3, tau: float,
                     tol_v: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise two-atom reconstruction from the first three moments.

    Branches: degenerate (V = 0, both atoms the mean), symmetric (tau = 1/2,
    unordered pair m1 +- sqrt(V)), and the generic labeled branch with the
    signed difference c3 / ((1 - 2 tau) V).
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    m3 = np.asarray(m3, dtype=float) if m3 is not None else None
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie strictly between 0 and 1")
    v = m2 - m1 * m1
    tol = np.maximum(1e-10, 1e-6 * m1 * m1) if tol_v is None else tol_v
    if np.any(v < -tol):
        raise MomentConsistencyError(
            f"negative variance field (min {float(np.min(v)):.3e}) "
            "is inconsistent with a point law")
    degenerate = v <= tol
    vpos = np.where(degenerate, 1.0, v)
    if abs(tau - 0.5) < 1e-14:
        root = np.sqrt(np.where(degenerate, 0.0, vpos))
        q1 = m1 + root
        q2 = m1 - root
    else:
        if m3 is None:
            raise ValueError("third moment required when tau != 1/2")
        c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1**3
        delta = np.where(degenerate, 0.0, c3 / ((1.0 - 2.0 * tau) * vpos))
        q1 = m1 + (1.0 - tau) * delta
        q2 = m1 - tau * delta
    return q1, q2


def _fd_derivative(values: np.ndarray, order: int, h: float) -> np.ndarray:
    """Centered finite differences, 4th-order stencils, edges extended."""
    stencils = {
        1: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, 1),
        2: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, 2),
        3: (np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0])[::-1] / 8.0, 3),
        4: (np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0, 4),
    }
    coeff, p = stencils[order]
    half = (len(coeff) - 1) // 2
    pad = np.pad(values.astype(float), half, mode="edge")
    out = np.convolve(pad, coeff[::-1], mode="valid") / h**p
    return out


def _two_atom_expected_jet(jm: JetMonomial, m1_jets: Mapping[int, np.ndarray],
                           w_jets: Mapping[int, np.ndarray],
                           tau: float) -> np.ndarray:
    """E of a degree <= 2 jet monomial under a two-atom law, from the closure.

    With w = sqrt(V / (tau (1-tau))) the cross term of a quadratic monomial is
    tau (1-tau) (d^a w)(d^b w), branch-independent by construction.
    """
    orders: List[int] = [0] * max(jm.base_power, 0) + list(jm.factors)
    if jm.base_power < 0:
        raise ValueError("negative jet powers do not occur in potential symbols")
    if len(orders) == 1:
        return m1_jets[orders[0]]
    if len(orders) == 2:
        a, b = orders
        ts = tau * (1.0 - tau)
        return m1_jets[a] * m1_jets[b] + ts * w_jets[a] * w_jets[b]
    raise ValueError(f"closure only covers degree <= 2, got {jm}")


def third_moment_from_order8(c8: np.ndarray, m1_field: np.ndarray,
                             var_field: np.ndarray, tau: float,
                             h: float) -> np.ndarray:
    """Invert the order -8 averaged-symbol coefficient for the third moment.

    The jet structure of the -8 component is taken from the exact parametrix
    expansion; every degree <= 2 monomial is evaluated through the two-atom
    closure on the recovered mean and variance jets, and the remaining
    degree-3 leading monomial is solved for.
    """
    comp = parametrix(SCHRODINGER_1D, -8).component(-8)
    ts = tau * (1.0 - tau)
    w_field = np.sqrt(np.maximum(var_field, 0.0) / ts)
    max_order = max((jm.max_order for jm in comp), default=0)
    m1_jets = {0: m1_field}
    w_jets = {0: w_field}
    for k in range(1, max_order + 1):
        m1_jets[k] = _fd_derivative(m1_field, k, h)
        w_jets[k] = _fd_derivative(w_field, k, h)

    lead_coeff = None
    known = np.zeros_like(m1_field)
    for jm, c in comp.items():
        if not c.is_real():
            raise AssertionError(f"unexpected complex coefficient at order -8: {c}")
        cf = float(c.re)
        if jm == JetMonomial(3):
            lead_coeff = cf
            continue
        expected = _two_atom_expected_jet(jm, m1_jets, w_jets, tau)
        plain = np.ones_like(m1_field)
        for o in [0] * max(jm.base_power, 0) + list(jm.factors):
            plain = plain * m1_jets[o]
        known = known + cf * (expected - plain)
    if lead_coeff is None:
        raise AssertionError("missing leading u^3 monomial at order -8")
    return (np.asarray(c8, dtype=float) - known) / lead_coeff + m1_field**3


@dataclass
class TwoAtomResult:
    probe_indices: Tuple[int, ...]
    q1_at_probes: np.ndarray
    q2_at_probes: np.ndarray
    m1_at_probes: np.ndarray
    m2_at_probes: np.ndarray
    m3_at_probes: np.ndarray
    mean_variance: MeanVarianceResult


def two_atom_pipeline(sampler: AtomSampler, grid: Grid, tau: float,
                      probe_indices: Optional[Sequence[int]] = None,
                      config: Optional[RecoveryConfig] = None) -> TwoAtomResult:
    """Full two-atom recovery from the averaged operator alone."""
    if len(sampler.atoms) != 2:
        raise ValueError("two-atom pipeline needs a two-atom sampler")
    cfg = config or RecoveryConfig()
    ebar = averaged_green(sampler, grid, "potential")
    mv = recover_mean_variance(ebar, grid, probe_indices, cfg)
    idxs = np.array(mv.probe_indices, dtype=int)
    m1 = mv.qbar_field
    var = mv.var_field
    c8_field = np.zeros(grid.shape[0] + 2)
    c8_field[idxs] = np.array([mv.c8_at_probes[int(i)] for i in idxs])

    m3_field = third_moment_from_order8(c8_field, m1, var, tau, grid.h)
    m1p = m1[idxs]
    m2p = var[idxs] + m1p**2
    m3p = m3_field[idxs]
    q1, q2 = two_atom_recover(m1p, m2p, m3p if abs(tau - 0.5) >= 1e-14 else None,
                              tau)
    return TwoAtomResult(tuple(int(i) for i in idxs), q1, q2, m1p, m2p, m3p, mv)


# ---------------------------------------------------------------------------
# Finite-dimensional model
# ---------------------------------------------------------------------------


class RankDeficiencyError(RuntimeError):
    def __init__(self, message: str, monomials: Sequence[Tuple[int, ...]]):
        super().__init__(message)
        self.monomials = tuple(monomials)


@dataclass(frozen=True)
class MomentFields:
    """Pointwise moment fields m_k = E q^k with a provenance tag."""

    fields: Mapping[int, np.ndarray]
    provenance: str = "exact"  # "exact" | "probe-estimated"

    def __getitem__(self, k: int) -> np.ndarray:
        return self.fields[k]

    @property
    def k_max(self) -> int:
        return max(self.fields)


def exact_moment_fields(sampler: CoefficientSampler, k_max: int) -> MomentFields:
    return MomentFields({k: sampler.moment_field(k) for k in range(1, k_max + 1)},
                        "exact")


def _multi_indices(d: int, k: int) -> List[Tuple[int, ...]]:
    out = []
    for combo in combinations_with_replacement(range(d), k):
        alpha = [0] * d
        for j in combo:
            alpha[j] += 1
        out.append(tuple(alpha))
    return sorted(set(out), reverse=True)


def _multinomial(k: int, alpha: Sequence[int]) -> int:
    out = math.factorial(k)
    for a in alpha:
        out //= math.factorial(a)
    return out


def finite_model_recover(moments: MomentFields, q0: np.ndarray,
                         profiles: Sequence[np.ndarray],
                         region: np.ndarray, k_max: int,
                         sv_threshold: float = 1e-8) -> Dict[Tuple[int, ...], float]:
    """Mixed moments E[X^alpha], |alpha| <= k_max, from pointwise moment fields.

    Degree-k moments are obtained by subtracting the binomial expansion of all
    lower-degree terms and solving the linear system in the profile monomials
    V^alpha on the sample region, which must keep them independent.
    """
    q0 = np.asarray(q0, dtype=float)
    profiles = [np.asarray(v, dtype=float) for v in profiles]
    region = np.asarray(region, dtype=bool)
    d = len(profiles)
    pts_q0 = q0[region]
    pts_v = [v[region] for v in profiles]
    recovered: Dict[Tuple[int, ...], float] = {tuple([0] * d): 1.0}

    for k in range(1, k_max + 1):
        alphas = _multi_indices(d, k)
        cols = []
        for alpha in alphas:
            col = np.ones_like(pts_q0)
            for v, a in zip(pts_v, alpha):
                if a:
                    col = col * v**a
            cols.append(col)
        basis = np.stack(cols, axis=1)
        norms = np.linalg.norm(basis, axis=0)
        if np.any(norms == 0):
            zero = [a for a, nn in zip(alphas, norms) if nn == 0]
            raise RankDeficiencyError(
                f"profile monomials vanish on the region at degree {k}: {zero}", zero)
        scaled = basis / norms
        svals = np.linalg.svd(scaled, compute_uv=False)
        if svals[-1] < sv_threshold:
            _, _, vt = np.linalg.svd(scaled)
            null = np.abs(vt[-1])
            bad = [a for a, w in zip(alphas, null) if w > 0.3 * null.max()]
            raise RankDeficiencyError(
                f"profile monomials dependent on the region at degree {k} "
                f"(sigma_min={svals[-1]:.3e}): {bad}", bad)

        target = moments[k][region].astype(float).copy()
        for ell in range(k):
            binom = math.comb(k, ell)
            for alpha in _multi_indices(d, ell):
                coeff = binom * _multinomial(ell, alpha) * recovered[alpha]
                col = pts_q0 ** (k - ell)
                for v, a in zip(pts_v, alpha):
                    if a:
                        col = col * v**a
                target -= coeff * col
        design = basis * np.array([_multinomial(k, a) for a in alphas])[None, :]
        theta, *_ = np.linalg.lstsq(design, target, rcond=None)
        for alpha, val in zip(alphas, theta):
            recovered[alpha] = float(val)

    recovered.pop(tuple([0] * d))
    return recovered


# ---------------------------------------------------------------------------
# Conductivity invariant
# ---------------------------------------------------------------------------


@dataclass
class ConductivityInvariantResult:
    m_field: np.ndarray                                   # recovered E(1/gamma)
    probe_indices: Tuple[Tuple[int, int], ...]
    v_samples: Dict[Tuple[int, int], Dict[Tuple[float, float], float]]
    c_matrices: Dict[Tuple[int, int], np.ndarray]


def _interp_2d(grid: Grid, pts0: np.ndarray, pts1: np.ndarray,
               values: np.ndarray, cfg: RecoveryConfig) -> np.ndarray:
    from scipy.interpolate import RectBivariateSpline

    kx = min(3, len(pts0) - 1)
    ky = min(3, len(pts1) - 1)
    spline = RectBivariateSpline(pts0, pts1, values, kx=kx, ky=ky)
    n0, n1 = grid.closed_shape
    full = spline(np.arange(n0, dtype=float), np.arange(n1, dtype=float))
    return _smooth_field(full, cfg.smooth_passes)


def conductivity_invariant_recover(sampler: AtomSampler, grid: Grid,
                                   probe_indices: Sequence[Tuple[int, int]],
                                   thetas: Sequence[Tuple[float, float]],
                                   config: Optional[RecoveryConfig] = None
                                   ) -> ConductivityInvariantResult:
    """Recover m = E(1/gamma) and the log-gradient covariance matrix C_a.

    m comes from the leading probe coefficient of the averaged operator; the
    order -4 coefficient of the difference against the harmonic-mean operator
    gives tr C - theta^T C theta per direction, and at least three directions
    determine the symmetric matrix (the angular mean fixes the trace).
    """
    if grid.dim != 2:
        raise ValueError("the invariant is trivial in 1d; need a 2d grid")
    thetas = [tuple(t) for t in thetas]
    if len(thetas) < 3:
        raise ValueError("need >= 3 distinct directions in 2d")
    cfg = config or RecoveryConfig(theta=(1.0, 0.0))
    margin = cfg.margin_nodes(grid)
    stride = max(1, cfg.field_stride)
    sweep0 = np.array(list(_admissible_range(grid, 0, margin))[::stride])
    sweep1 = np.array(list(_admissible_range(grid, 1, margin))[::stride])

    ebar = averaged_green(sampler, grid, "conductivity")
    mvals = np.empty((len(sweep0), len(sweep1)))
    for a, i in enumerate(sweep0):
        for b, j in enumerate(sweep1):
            fit = _probe_fit(ebar, grid, (int(i), int(j)), cfg, (2, 4))
            mvals[a, b] = fit[2]
    m_field = _interp_2d(grid, sweep0.astype(float), sweep1.astype(float),
                         mvals, cfg)
    m_field = np.clip(m_field, 1e-8, None)

    r_h = assemble_green(grid, 1.0 / m_field, "conductivity")
    diff = OperatorDifference(ebar, r_h)

    v_samples: Dict[Tuple[int, int], Dict[Tuple[float, float], float]] = {}
    c_matrices: Dict[Tuple[int, int], np.ndarray] = {}
    for idx in probe_indices:
        idx = (int(idx[0]), int(idx[1]))
        per_theta: Dict[Tuple[float, float], float] = {}
        rows, rhs = [], []
        for theta in thetas:
            tnorm = math.hypot(*theta)
            tc, ts = theta[0] / tnorm, theta[1] / tnorm
            dir_cfg = replace(cfg, theta=(tc, ts))
            fit = _probe_fit(diff, grid, idx, dir_cfg, (2, 4, 6))
            v_est = -fit[4]
            per_theta[theta] = v_est
            rows.append([ts * ts, tc * tc, -2.0 * tc * ts])
            rhs.append(v_est)
        sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
        c11, c22, c12 = sol
        c_matrices[idx] = np.array([[c11, c12], [c12, c22]])
        v_samples[idx] = per_theta
    return ConductivityInvariantResult(m_field, tuple(v_samples), v_samples,
                                       c_matrices)


def two_atom_conductivity_covariance(grid: Grid, gamma1: np.ndarray,
                                     gamma2: np.ndarray, tau: float,
                                     idx: Tuple[int, int]) -> np.ndarray:
    """Closed-form C_a for a two-atom conductivity law at one lattice point."""
    a1 = 1.0 / np.asarray(gamma1, dtype=float)
    a2 = 1.0 / np.asarray(gamma2, dtype=float)
    m = tau * a1 + (1.0 - tau) * a2
    logr = np.log(a1 / a2)
    h = grid.h
    i, j = idx
    grad = np.array([
        (logr[i + 1, j] - logr[i - 1, j]) / (2 * h),
        (logr[i, j + 1] - logr[i, j - 1]) / (2 * h),
    ])
    scale = tau * (1.0 - tau) * a1[i, j] * a2[i, j] / m[i, j]
    return scale * np.outer(grad, grad)


# ---------------------------------------------------------------------------
# Obstruction exhibit: equal (m1, m2) fields, different E (q')^2
# ---------------------------------------------------------------------------


def obstruction_exhibit() -> Dict[str, Dict[int, object]]:
    """Two jet laws with identical pointwise moments but different E (q')^2.

    Their averaged parametrix symbols agree at every order above -8 and
    differ exactly at -8, which is where derivative correlations first enter.
    """
    def law(slope: int) -> MomentSymbolLaw:
        atoms = []
        for u in (1, 3):
            for up in (slope, -slope):
                atoms.append((0.25, {0: u, 1: up, 2: 0, 3: 0, 4: 0}))
        return MomentSymbolLaw.of(*[(f"1/4", ev) for _, ev in atoms])

    r = parametrix(SCHRODINGER_1D, -8)
    avg1 = average_symbol(r, law(1))
    avg2 = average_symbol(r, law(2))
    return {"law_a": avg1, "law_b": avg2}
