"""Theorem-level constants and KL right-hand sides for finite models.

All quantities are exact functions of the oracle tables. Predictive targets
use the bound for the model truncated one step earlier: the expected
predictive estimator at time t equals the expected updated estimator at
t-1 extended by the proposal kernel, so the KL divergences coincide.
Marginal targets inherit the joint bound (marginalisation cannot increase
KL).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateCatalogueError, NoApplicableBoundError, SMCError
from .model import FiniteModel
from .oracle import OracleTables, build_oracle, time_grid

ASSUMPTIONS = ("bounded_potentials", "beta")


def sis_constant(oracle: OracleTables) -> float:
    """sigma^2_S: variance of g_{1:t}/Z under the proposal path law."""
    Z = oracle.normalizer
    q = oracle.proposal
    pos = q > 0
    ratio = oracle.gamma[pos] / q[pos] / Z
    return max(0.0, math.fsum(q[pos] * ratio**2) - 1.0)


def sis_constant_two_pass(oracle: OracleTables) -> float:
    """Same quantity via mean-then-centred-second-moment (independent check)."""
    q = oracle.proposal
    pos = q > 0
    v = oracle.gamma[pos] / q[pos] / oracle.normalizer
    mean = math.fsum(q[pos] * v)
    return math.fsum(q[pos] * (v - mean) ** 2)


def sir_constant(oracle: OracleTables) -> float:
    """sigma^2_R = Z^{-1} sum_s G_{0,s} pi(G_{s,t+1}) - t."""
    t = oracle.horizon
    terms = []
    for s in range(1, t + 1):
        terms.append(oracle.G(0, s) * float(oracle.smoothing_marginal(s) @ oracle.G(s, t + 1)))
    return math.fsum(terms) / oracle.normalizer - t


def _c_values(oracle: OracleTables, taus) -> np.ndarray:
    """C_l(tau, y) for every enumerated path y."""
    out = np.ones(len(oracle.paths))
    for a, b in zip(taus[:-1], taus[1:]):
        out *= oracle.G(a, b)[oracle.paths[:, a - 1]]
    return out


def sir_Q(oracle: OracleTables, N: int) -> float:
    """Exact finite-N Q_R^N, the pi-average of the conditional SIR expected normalizer over Z."""
    if N < 1:
        raise SMCError("need N >= 1")
    t = oracle.horizon
    joint = oracle.joint
    terms = []
    for ell in range(1, t + 2):
        for taus in time_grid(ell, t + 1, t):
            terms.append(float(N - 1) ** (t + 1 - ell) * oracle.G(0, taus[0])
                         * math.fsum(joint * _c_values(oracle, taus)))
    return math.fsum(terms) / (float(N) ** t * oracle.normalizer)


def beta_constant(oracle: OracleTables) -> float:
    """max_x G_{0,t'} G_{t',t'+s'}(x) / G_{0,t'+s'} over the model horizon."""
    t = oracle.horizon
    best = 1.0 if t == 0 else 0.0
    for a in range(1, t + 1):
        for b in range(a + 1, t + 2):
            denom = oracle.G(0, b)
            num = oracle.G(0, a) * float(np.max(oracle.G(a, b)))
            if denom <= 0:
                return math.inf
            best = max(best, num / denom)
    return best


@dataclass(frozen=True)
class MixingConstants:
    gamma: float
    delta: float
    gamma_finite: bool
    delta_finite: bool


def mixing_constants(model: FiniteModel, m: int = 1) -> MixingConstants:
    """Smallest gamma and delta for the strong mixing condition with lag m.

    gamma bounds ratios of the m-step kernels M_{t+1}...M_{t+m} for every t
    with t + m <= horizon (1 when no such product exists); delta is
    (max_s sup g_s / inf g_s)^m.
    """
    if m < 1:
        raise SMCError("mixing lag m must be >= 1")
    T = model.horizon
    gamma = 1.0
    for t in range(1, T - m + 1):
        K = np.eye(model.state_count)
        for u in range(t, t + m):
            K = K @ model.transitions[u - 1]
        for z in range(model.state_count):
            col = K[:, z]
            hi, lo = col.max(), col.min()
            if hi > 0 and lo <= 0:
                gamma = math.inf
            elif hi > 0:
                gamma = max(gamma, float(hi / lo))
    ratio = 1.0
    for g in model.potentials:
        hi, lo = float(g.max()), float(g.min())
        if lo <= 0:
            ratio = math.inf
            break
        ratio = max(ratio, hi / lo)
    delta = ratio**m
    return MixingConstants(gamma, delta, math.isfinite(gamma), math.isfinite(delta))


def potential_sup_product(model: FiniteModel) -> float:
    return math.prod(float(g.max()) for g in model.potentials)


def minorization_eps(t: int, N: int, beta: float, zeta: float, kappa: float) -> float:
    """(1 - 1/N)(1 - kappa)^(t-1) / (1 + 2 beta/(zeta N))^t."""
    if N < 2:
        raise SMCError("minorization constant needs N >= 2")
    if kappa >= 1:
        raise DegenerateCatalogueError("degenerate catalogue: kappa >= 1")
    if not math.isfinite(beta):
        return 0.0
    return (1 - 1 / N) * (1 - kappa) ** (t - 1) / (1 + 2 * beta / (zeta * N)) ** t


def particle_budget_eps(C: float, zeta: float, beta: float, B: float) -> float:
    """Uniform-in-t lower bound exp(-2 beta/(zeta C) - B) valid for N >= C t + B."""
    if C <= 0:
        raise SMCError("need C > 0")
    return math.exp(-2 * beta / (zeta * C) - B)


# ---------------------------------------------------------------- KL bounds

def _bound_terms(oracle: OracleTables, algorithm: str, N: int, assumptions: set, zeta: float) -> dict:
    t = oracle.horizon
    Z = oracle.normalizer
    out = {}
    if algorithm == "sis":
        out["sis"] = math.log1p(sis_constant(oracle) / N)
        return out
    gbar = potential_sup_product(oracle.model)
    if algorithm == "sir":
        out["sir_exact"] = math.log(sir_Q(oracle, N))
        if "bounded_potentials" in assumptions and math.isfinite(gbar):
            out["sir_bounded"] = math.log1p((1 - (1 - 1 / N) ** t) * (gbar / Z - 1))
        if "beta" in assumptions:
            beta = beta_constant(oracle)
            if math.isfinite(beta):
                out["sir_beta"] = t * math.log1p((beta - 1) / N)
        return out
    if algorithm == "alpha":
        zn = zeta * N
        if "bounded_potentials" in assumptions and math.isfinite(gbar) and zn >= 1:
            out["alpha_bounded"] = math.log1p(gbar / Z * ((1 + 1 / zn) ** t - 1))
        if "beta" in assumptions:
            beta = beta_constant(oracle)
            if math.isfinite(beta):
                out["alpha_beta"] = t * math.log1p(beta / zn)
        return out
    raise SMCError(f"unknown algorithm {algorithm!r}")


def kl_bound_terms(oracle: OracleTables, algorithm: str, N: int, assumptions: Iterable[str] = (),
                   zeta: float = 1.0, target_kind: str = "updated_joint") -> dict:
    """Every applicable right-hand side, keyed by name."""
    assumptions = set(assumptions)
    unknown = assumptions - set(ASSUMPTIONS)
    if unknown:
        raise SMCError(f"unknown assumptions {sorted(unknown)}")
    if N < 1:
        raise SMCError("need N >= 1")
    if target_kind.startswith("predictive"):
        t = oracle.horizon
        if t == 1:
            return {"predictive_t1": 0.0}
        oracle = build_oracle(oracle.model.truncated(t - 1))
    elif not target_kind.startswith("updated"):
        raise SMCError(f"unknown target kind {target_kind!r}")
    return _bound_terms(oracle, algorithm, N, assumptions, zeta)


def kl_bound(oracle: OracleTables, algorithm: str, N: int, assumptions: Iterable[str] = (),
             zeta: float = 1.0, target_kind: str = "updated_joint") -> float:
    """Tightest applicable KL(pi, expected estimator) right-hand side."""
    terms = kl_bound_terms(oracle, algorithm, N, assumptions, zeta, target_kind)
    if not terms:
        raise NoApplicableBoundError(f"no applicable bound for {algorithm} with assumptions {sorted(set(assumptions))}")
    return min(terms.values())


@dataclass
class BoundReport:
    sis_sigma2: float
    sir_sigma2: float
    sir_Q: float
    beta: float
    gamma_mixing: float
    delta_mixing: float
    zeta: float
    kappa: Optional[float]
    kappa_prime: Optional[float]
    eps_minorization: Optional[float]
    beta_horizon_restricted: bool = True
    rhs: dict = field(default_factory=dict)
    assumptions: dict = field(default_factory=dict)


def bound_report(oracle: OracleTables, N: int, zeta: float = 1.0, catalogue=None,
                 m: int = 1, declared: Iterable[str] = ASSUMPTIONS) -> BoundReport:
    """Collect every constant and right-hand side for one (model, N) cell."""
    from .resampling import AlphaMatrix, kappa as kappa_fn

    mix = mixing_constants(oracle.model, m)
    beta = beta_constant(oracle)
    kap = kap_p = eps = None
    if N >= 2:
        catalogue = catalogue or [AlphaMatrix.uniform(N)]
        kap = kappa_fn(catalogue)
        kap_p = max(kap, 1.0 / N)
        if kap < 1:
            eps = minorization_eps(oracle.horizon, N, beta, zeta, kap)
    declared = set(declared)
    rhs = {}
    for alg in ("sis", "sir", "alpha"):
        for name, v in kl_bound_terms(oracle, alg, N, declared, zeta).items():
            rhs[name] = v
    gbar_finite = math.isfinite(potential_sup_product(oracle.model))
    assumptions = {
        "bounded_potentials": gbar_finite,
        "beta": math.isfinite(beta),
        "mixing": mix.gamma_finite and mix.delta_finite,
    }
    return BoundReport(sis_constant(oracle), sir_constant(oracle), sir_Q(oracle, N), beta,
                       mix.gamma, mix.delta, zeta, kap, kap_p, eps, True, rhs, assumptions)
