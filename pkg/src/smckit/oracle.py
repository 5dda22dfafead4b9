"""Exact computations on finite models.

Time indices in this module follow the 1-based convention of the
Feynman-Kac functionals: ``Z[s]`` for ``s = 0..T`` with ``Z[0] = 1``, and
``G(s, u)`` for ``0 <= s <= u <= T + 1``. Potentials and transitions are
looked up in the 0-based model (``g_s = model.potentials[s - 1]``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import EnumerationTooLargeError, SMCError, SupportMismatchError
from .model import FiniteModel, check_model

PATH_GUARD = 10**6


@dataclass(eq=False)
class OracleTables:
    model: FiniteModel
    paths: np.ndarray            # (S^T, T) all state sequences, lexicographic
    proposal: np.ndarray         # mu_{1,T}(path)
    gamma: np.ndarray            # proposal * g_{1:T}
    gamma_hat: np.ndarray        # proposal * g_{1:T-1}
    Z: np.ndarray                # Z[0..T], Z[0] = 1
    G_table: np.ndarray          # G_table[s, u, x], nan where undefined
    filters: list                # filters[s] = pi_s, s = 1..T (index 0 unused)
    predictives: list            # predictives[s] = eta_s, s = 1..T
    backward: list               # backward[s][x_{s+1}, x_s], s = 1..T-1
    _path_index: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self) -> int:
        return self.paths.shape[1]

    @property
    def state_count(self) -> int:
        return self.model.state_count

    @property
    def normalizer(self) -> float:
        return float(self.Z[-1])

    def Zhat(self, s: int) -> float:
        return float(self.Z[s - 1])

    def G(self, s: int, u: int, x=None):
        row = self.G_table[s, u]
        if s == 0:
            return float(row[0])
        return row if x is None else row[x]

    @property
    def joint(self) -> np.ndarray:
        return self.gamma / self.Z[-1]

    @property
    def predictive_joint_probs(self) -> np.ndarray:
        return self.gamma_hat / self.gamma_hat.sum()

    def path_tuples(self) -> list:
        return [tuple(int(v) for v in p) for p in self.paths]

    def index_of(self, path) -> int:
        if not self._path_index:
            self._path_index.update({p: k for k, p in enumerate(self.path_tuples())})
        return self._path_index[tuple(path)]

    def smoothing_marginal(self, s: int) -> np.ndarray:
        """Marginal of the joint target at 1-based time ``s``."""
        return np.bincount(self.paths[:, s - 1], weights=self.joint, minlength=self.state_count)

    def target(self, kind: str) -> dict:
        """Probability table for a target kind (keys: path tuples or states)."""
        T = self.horizon
        if kind == "updated_joint":
            return _table(self.path_tuples(), self.joint)
        if kind == "predictive_joint":
            return _table(self.path_tuples(), self.predictive_joint_probs)
        if kind == "updated_marginal":
            return _table(range(self.state_count), self.filters[T])
        if kind == "predictive_marginal":
            return _table(range(self.state_count), self.predictives[T])
        raise SMCError(f"unknown target kind {kind!r}")

    def proposal_table(self, kind: str) -> dict:
        if kind.endswith("joint"):
            return _table(self.path_tuples(), self.proposal)
        law = self.model.initial
        for m in self.model.transitions:
            law = law @ m
        return _table(range(self.state_count), law)


def _table(keys, probs) -> dict:
    return {k: float(p) for k, p in zip(keys, probs) if p > 0}


def enumerate_paths(S: int, T: int) -> np.ndarray:
    if S**T > PATH_GUARD:
        raise EnumerationTooLargeError(f"enumeration too large: S^T = {S**T} > {PATH_GUARD}")
    return np.array(list(itertools.product(range(S), repeat=T)), dtype=np.int64).reshape(-1, T)


def build_oracle(model: FiniteModel) -> OracleTables:
    """Enumerate every path and tabulate targets, normalizers and G functionals."""
    if not isinstance(model, FiniteModel):
        raise SMCError("exact oracle requires a FiniteModel")
    check_model(model)
    S, T = model.state_count, model.horizon
    paths = enumerate_paths(S, T)
    proposal = model.initial[paths[:, 0]].copy()
    for s in range(1, T):
        proposal *= model.transitions[s - 1][paths[:, s - 1], paths[:, s]]
    pot = np.ones(len(paths))
    for s in range(T - 1):
        pot *= model.potentials[s][paths[:, s]]
    gamma_hat = proposal * pot
    gamma = gamma_hat * model.potentials[T - 1][paths[:, T - 1]]

    G = np.full((T + 2, T + 2, S), np.nan)
    for s in range(1, T + 2):
        G[s, s] = 1.0
    for u in range(2, T + 2):
        G[u - 1, u] = model.potentials[u - 2]
        for s in range(u - 2, 0, -1):
            G[s, u] = model.potentials[s - 1] * (model.transitions[s - 1] @ G[s + 1, u])
    G[0, 0] = 1.0
    for u in range(1, T + 2):
        G[0, u] = float(model.initial @ G[1, u])

    # forward recursion for normalizers and filters
    Z = np.ones(T + 1)
    filters: list = [None]
    predictives: list = [None]
    eta = model.initial.copy()
    for s in range(1, T + 1):
        if s > 1:
            eta = filters[s - 1] @ model.transitions[s - 2]
        predictives.append(eta)
        unnorm = eta * model.potentials[s - 1]
        mass = unnorm.sum()
        Z[s] = Z[s - 1] * mass
        filters.append(unnorm / mass)
    path_z = math.fsum(gamma)
    if abs(path_z - Z[T]) > 1e-12 * max(1.0, abs(Z[T])):
        raise SMCError(f"normalizer mismatch: path sum {path_z} vs recursion {Z[T]}")
    Z[T] = path_z
    backward: list = [None]
    for s in range(1, T):
        b = filters[s][:, None] * model.transitions[s - 1]      # [x_s, x_{s+1}]
        col = b.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            bk = np.where(col[None, :] > 0, b / col[None, :], 0.0).T
        backward.append(bk)
    return OracleTables(model, paths, proposal, gamma, gamma_hat, Z, G, filters, predictives, backward)


# ----------------------------------------------------------------- divergences

def _aligned(p, q) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        keys = list(dict.fromkeys(list(p.keys()) + list(q.keys())))
        return (np.array([p.get(k, 0.0) for k in keys], dtype=float),
                np.array([q.get(k, 0.0) for k in keys], dtype=float))
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatchError("support mismatch: tables have different index sets")
    return p, q


def kl_div(p, q) -> float:
    """KL(p || q) = sum p log(p / q), with 0 log 0 = 0."""
    p, q = _aligned(p, q)
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise SupportMismatchError("support mismatch: p not absolutely continuous w.r.t. q")
    return max(0.0, math.fsum(p[pos] * np.log(p[pos] / q[pos])))


def tv_dist(p, q) -> float:
    p, q = _aligned(p, q)
    return 0.5 * math.fsum(np.abs(p - q))


def chi2_div(p, q) -> float:
    """chi^2(p || q) = sum (p - q)^2 / q."""
    p, q = _aligned(p, q)
    if np.any((q <= 0) & (p > 0)):
        raise SupportMismatchError("support mismatch: p not absolutely continuous w.r.t. q")
    pos = q > 0
    return math.fsum((p[pos] - q[pos]) ** 2 / q[pos])


@dataclass(frozen=True)
class DivergenceReport:
    kl: float
    tv: float
    chi2: float


def divergences(p, q) -> DivergenceReport:
    return DivergenceReport(kl_div(p, q), tv_dist(p, q), chi2_div(p, q))


# ------------------------------------------------------------ time grids

@dataclass(frozen=True)
class GapTimeGrid:
    ell: int
    taus: tuple
    c_value: Optional[float] = None


def time_grid(ell: int, s: int, t: int) -> Iterator[tuple]:
    """Strictly increasing tuples t-s+1 < tau_1 < ... < tau_ell = t+1."""
    if ell < 1:
        return
    inner = range(t - s + 2, t + 1)
    for combo in itertools.combinations(inner, ell - 1):
        yield combo + (t + 1,)


def c_value(oracle: OracleTables, taus: Sequence[int], y: Sequence[int]) -> float:
    """C_l(tau, y) = prod_m G_{tau_m, tau_{m+1}}(y_{tau_m})."""
    v = 1.0
    for a, b in zip(taus[:-1], taus[1:]):
        v *= oracle.G(a, b)[y[a - 1]]
    return float(v)


def csmc_expected_normalizer_closed_form(oracle: OracleTables, frozen, N: int,
                                         zeta: Optional[float] = None) -> float:
    """Expected normalizer of the conditional process with frozen paths.

    With ``zeta`` absent this is the exact value for conditional SIR; with
    ``zeta`` given it is the upper bound for conditional alpha-SMC.
    """
    ys = [tuple(int(v) for v in y) for y in frozen]
    i = len(ys)
    if i < 1 or N < i:
        raise SMCError(f"need 1 <= i <= N, got i={i}, N={N}")
    t = oracle.horizon
    if any(len(y) != t for y in ys):
        raise SMCError(f"frozen paths must have length {t}")
    total = []
    for ell in range(1, t + 2):
        for taus in time_grid(ell, t + 1, t):
            term = oracle.G(0, taus[0])
            for a, b in zip(taus[:-1], taus[1:]):
                term *= sum(float(oracle.G(a, b)[y[a - 1]]) for y in ys)
            if zeta is None:
                term *= float(N - i) ** (t + 1 - ell)
            else:
                zn = zeta * N
                term *= zn ** (t + 1 - ell)
                if taus[0] > 1:
                    term *= (N - i) / zn
            total.append(term)
    s = math.fsum(total)
    if zeta is None:
        return s / float(N) ** t
    return s / (N * (zeta * N) ** (t - 1))
