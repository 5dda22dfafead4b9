"""Resampling matrices, adaptive selection policies and multinomial resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError, SingleParticleError, SMCError
from .weights import INF, as_order, normalize, p_ess

STOCH_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AlphaMatrix:
    """Row-stochastic N x N resampling matrix.

    ``kind`` is ``"identity"``, ``"uniform"`` or ``"custom"``; the first two
    let the engines skip ancestor draws or share one categorical per step.
    """

    entries: np.ndarray
    kind: str = "custom"
    doubly_stochastic: bool = field(init=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise SMCError(f"alpha matrix must be square, got shape {a.shape}")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise SMCError("alpha matrix has negative or non-finite entries")
        if np.max(np.abs(a.sum(axis=1) - 1.0)) > STOCH_TOL:
            raise SMCError("alpha matrix rows must sum to 1")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        ds = bool(np.max(np.abs(a.sum(axis=0) - 1.0)) <= STOCH_TOL)
        object.__setattr__(self, "doubly_stochastic", ds)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    @classmethod
    def identity(cls, n: int) -> "AlphaMatrix":
        return cls(np.eye(n), kind="identity")

    @classmethod
    def uniform(cls, n: int) -> "AlphaMatrix":
        return cls(np.full((n, n), 1.0 / n), kind="uniform")

    def same_as(self, other: "AlphaMatrix") -> bool:
        return self.entries.shape == other.entries.shape and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class AlphaPolicy:
    """Rule choosing the resampling matrix at each step.

    kinds: ``identity`` (SIS), ``uniform`` (SIR), ``apf`` (uniform matrix when
    the ``ess_order``-ESS of the incremental weights is strictly below
    ``zeta * N``, identity otherwise) and ``fixed`` (one matrix per step, or a
    single matrix reused at every step).
    """

    kind: str
    n: int
    ess_order: object = INF
    zeta: float = 0.5
    matrices: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "uniform", "apf", "fixed"):
            raise SMCError(f"unknown policy kind {self.kind!r}")
        if self.n < 1:
            raise SMCError("policy needs N >= 1")
        object.__setattr__(self, "ess_order", as_order(self.ess_order))
        if not 0 < self.zeta <= 1:
            raise SMCError(f"zeta must lie in (0, 1], got {self.zeta}")
        mats = tuple(m if isinstance(m, AlphaMatrix) else AlphaMatrix(m) for m in self.matrices)
        if self.kind == "fixed":
            if not mats:
                raise SMCError("fixed policy needs at least one matrix")
            if any(m.size != self.n for m in mats):
                raise SMCError("fixed policy matrices must be N x N")
        object.__setattr__(self, "matrices", mats)
        ident = AlphaMatrix.identity(self.n)
        unif = AlphaMatrix.uniform(self.n)
        object.__setattr__(self, "_identity", ident)
        object.__setattr__(self, "_uniform", unif)

    @property
    def catalogue(self) -> tuple:
        if self.kind == "identity":
            return (self._identity,)
        if self.kind == "uniform":
            return (self._uniform,)
        if self.kind == "apf":
            return (self._identity, self._uniform)
        return self.matrices

    @property
    def label(self) -> str:
        if self.kind == "apf":
            return f"apf(p={self.ess_order},zeta={self.zeta:g})"
        return self.kind

    @property
    def permutation_invariant(self) -> bool:
        """True when every catalogue matrix commutes with all permutations (aI + b11')."""
        for m in self.catalogue:
            a = m.entries
            n = a.shape[0]
            if n == 1:
                continue
            diag = np.diag(a)
            off = a[~np.eye(n, dtype=bool)]
            if not (np.all(diag == diag[0]) and np.all(off == off[0])):
                return False
        return True


def identity_policy(n: int) -> AlphaPolicy:
    return AlphaPolicy("identity", n)


def uniform_policy(n: int) -> AlphaPolicy:
    return AlphaPolicy("uniform", n)


def apf_policy(n: int, zeta: float = 0.5, ess_order=INF) -> AlphaPolicy:
    return AlphaPolicy("apf", n, ess_order=ess_order, zeta=zeta)


def select_alpha(policy: AlphaPolicy, w, step: int) -> AlphaMatrix:
    """Matrix used for the resampling step that follows generation ``step``.

    For the APF kind, ``w`` should be the incremental weights W * g; the
    decision is ``p_ess(w) < zeta * N`` (ties keep the identity).
    """
    w = normalize(w)
    if w.size != policy.n:
        raise SMCError(f"weight length {w.size} != policy N {policy.n}")
    if policy.kind == "identity":
        return policy._identity
    if policy.kind == "uniform":
        return policy._uniform
    if policy.kind == "apf":
        if p_ess(w, policy.ess_order) < policy.zeta * policy.n:
            return policy._uniform
        return policy._identity
    mats = policy.matrices
    if len(mats) == 1:
        return mats[0]
    if step >= len(mats):
        raise SMCError(f"fixed policy has no matrix for step {step}")
    return mats[step]


def kappa(catalogue) -> float:
    """max over catalogue members and n != n' of sum_k alpha[k, n] alpha[k, n']."""
    catalogue = list(catalogue)
    if not catalogue:
        raise SMCError("empty catalogue")
    n = catalogue[0].size
    if any(m.size != n for m in catalogue):
        raise SMCError("catalogue matrices differ in size")
    if n < 2:
        raise SingleParticleError("undefined for single particle")
    best = 0.0
    off = ~np.eye(n, dtype=bool)
    for m in catalogue:
        overlap = m.entries.T @ m.entries
        best = max(best, float(overlap[off].max()))
    return best


def kappa_prime(catalogue, n: int) -> float:
    return max(kappa(catalogue), 1.0 / n)


def categorical_from_uniforms(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws; zero-weight indices are never returned."""
    c = np.cumsum(w)
    c /= c[-1]
    return np.searchsorted(c, u, side="right")


def multinomial_resample(w, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. ancestor indices from the probability vector ``w``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DegenerateWeightsError("degenerate weights: invalid probability vector")
    total = math.fsum(w)
    if not abs(total - 1.0) <= 1e-9:
        raise DegenerateWeightsError(f"degenerate weights: probabilities sum to {total}")
    return categorical_from_uniforms(w, rng.random(count))


def alpha_resampling_kernel(alpha: AlphaMatrix, inc: np.ndarray):
    """Propagated weights ``W' = alpha @ inc`` and the row-normalised kernel.

    Returns ``(W', R)`` where ``R[n, k] = alpha[n, k] inc[k] / W'[n]`` (0/0 = 0).
    Shared by the samplers and the exact enumeration engine.
    """
    a = alpha.entries
    w_new = a @ inc
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a * inc[None, :] / w_new[:, None]
    r[w_new <= 0] = 0.0
    return w_new, r
