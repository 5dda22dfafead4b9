"""Exact laws of the particle processes on finite models, by enumeration.

The engine propagates a probability distribution over particle
configurations, one generation at a time. A configuration is a tuple of
``N`` records ``(path, w)`` where ``w`` is the normalised weight carried
into the generation (1 for algorithms without carried weights), plus the
positions of the frozen trajectories for conditional processes.

When the process law is invariant under relabelling particles, free records
are kept sorted so that configurations differing only by a permutation
merge. Exchangeable free particles are enumerated as multisets with
multinomial coefficients instead of ordered tuples. Alongside each
configuration the engine carries ``E[prod of normalizer factors ; config]``,
which yields the exact expected normalizer without a separate pass.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .conditional import initial_slot_law, slot_law
from .engines import run_alpha_smc, run_sir, run_sis, split_target
from .errors import EnumerationTooLargeError, NoReplicationsError, SMCError
from .model import FiniteModel, check_model
from .oracle import OracleTables, tv_dist
from .resampling import AlphaPolicy, alpha_resampling_kernel, select_alpha
from .weights import INF, p_ess

WORK_GUARD = 10**7
ROUND_DIGITS = 15
ESS_SLACK = 1e-12


@dataclass(frozen=True)
class Algorithm:
    """Algorithm descriptor: ``sis``, ``sir`` or ``alpha`` with a policy."""

    name: str
    policy: Optional[AlphaPolicy] = None
    zeta: float = 1.0

    def __post_init__(self):
        if self.name not in ("sis", "sir", "alpha"):
            raise SMCError(f"unknown algorithm {self.name!r}")
        if self.name == "alpha" and self.policy is None:
            raise SMCError("alpha algorithm needs a policy")

    @property
    def label(self) -> str:
        return self.name if self.policy is None else f"alpha[{self.policy.label}]"

    def run(self, model, N, rng):
        if self.name == "sis":
            return run_sis(model, N, rng)
        if self.name == "sir":
            return run_sir(model, N, rng)
        return run_alpha_smc(model, N, self.policy, self.zeta, rng)


def as_algorithm(algorithm, zeta: float = 1.0) -> Algorithm:
    if isinstance(algorithm, Algorithm):
        return algorithm
    if isinstance(algorithm, AlphaPolicy):
        return Algorithm("alpha", algorithm, zeta)
    return Algorithm(str(algorithm))


@dataclass
class ExpectedEstimate:
    """Expected estimator table with its provenance.

    ``stderr`` is populated in Monte Carlo mode. ``degenerate_mass`` is the
    probability of runs whose estimator has zero mass (0/0 = 0), which
    contribute nothing to ``measure``.
    """

    measure: dict
    mode: str
    target_kind: str
    algorithm: str
    replications: Optional[int] = None
    stderr: Optional[dict] = None
    degenerate_mass: float = 0.0
    assumption_ok: Optional[bool] = None
    ess_min_inf: Optional[float] = None
    ess_min_2: Optional[float] = None


# -------------------------------------------------------------- combinatorics

def _multinomial(counts) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def spend(self, k: int):
        self.used += k
        if self.used > self.limit:
            raise EnumerationTooLargeError(
                f"enumeration too large ({self.used} outcomes > {self.limit}); use monte-carlo mode")


def _round(w: float) -> float:
    return round(float(w), ROUND_DIGITS)


def _joint(fixed: tuple, dists: list, exchangeable: bool, budget: _Budget):
    """Combine per-position outcome lists into configurations.

    ``fixed`` records come first and keep their order; ``dists`` are the
    outcome lists ``[(prob, record)]`` of the remaining positions.
    """
    out = []
    if not dists:
        return [(1.0, fixed)]
    same = exchangeable and all(d is dists[0] for d in dists)
    if same:
        outcomes = sorted(dists[0], key=lambda pr: pr[1])
        m = len(dists)
        n_combos = math.comb(len(outcomes) + m - 1, m)
        budget.spend(n_combos)
        for combo in itertools.combinations_with_replacement(range(len(outcomes)), m):
            counts = [combo.count(k) for k in sorted(set(combo))]
            p = float(_multinomial(counts))
            for k in combo:
                p *= outcomes[k][0]
            out.append((p, fixed + tuple(outcomes[k][1] for k in combo)))
        return out
    budget.spend(math.prod(len(d) for d in dists))
    for combo in itertools.product(*dists):
        p = math.prod(c[0] for c in combo)
        recs = tuple(c[1] for c in combo)
        if exchangeable:
            recs = tuple(sorted(recs))
        out.append((p, fixed + recs))
    return out


def _extend(model: FiniteModel, s: int, records: tuple, probs: np.ndarray, w_new: float) -> list:
    """Outcome list for a free particle picking ancestor k w.p. probs[k], then moving."""
    acc: dict = defaultdict(float)
    M = model.transitions[s - 1]
    for k, pk in enumerate(probs):
        if pk <= 0:
            continue
        path = records[k][0]
        row = M[path[-1]]
        for x in np.flatnonzero(row > 0):
            acc[(path + (int(x),), w_new)] += pk * row[x]
    return [(p, r) for r, p in acc.items()]


# ------------------------------------------------------------------ laws

class _Law:
    """Transition structure of one particle process."""

    exchangeable = True
    frozen = ()

    def __init__(self, model: FiniteModel, N: int):
        self.model = model
        self.N = N
        self.assumption_ok = True
        self.ess_min_inf = math.inf
        self.ess_min_2 = math.inf

    @property
    def i(self) -> int:
        return len(self.frozen)

    def initial(self, budget):
        mu = self.model.initial
        outs = [(float(mu[x]), ((int(x),), self.w0)) for x in np.flatnonzero(mu > 0)]
        return [(p, (recs, ())) for p, recs in _joint((), [outs] * self.N, True, budget)]

    w0 = 1.0

    def g(self, s, records):
        return self.model.potentials[s][[r[0][-1] for r in records]]

    # subclasses: step(config, s, budget) -> (factor, [(p, config)]); weights(config, kind)


class _SISLaw(_Law):
    def step(self, config, s, budget):
        records, slots = config
        M = self.model.transitions[s - 1]
        dists = []
        for path, w in records:
            row = M[path[-1]]
            dists.append([(float(row[x]), (path + (int(x),), 1.0)) for x in np.flatnonzero(row > 0)])
        return 1.0, [(p, (recs, slots)) for p, recs in _joint((), dists, True, budget)]

    def _path_products(self, records, upto):
        out = np.ones(len(records))
        for n, (path, _) in enumerate(records):
            for s in range(upto):
                out[n] *= self.model.potentials[s][path[s]]
        return out

    def final(self, config):
        records = config[0]
        T = self.model.horizon
        upd = self._path_products(records, T)
        pred = self._path_products(records, T - 1)
        return float(upd.mean()), upd, pred


class _SIRLaw(_Law):
    def step(self, config, s, budget):
        records, slots = config
        g = self.g(s - 1, records)
        total = g.sum()
        if not total > 0:
            return 0.0, []
        free = _extend(self.model, s, records, g / total, 1.0)
        fixed = self._frozen_records(s)
        dists = [free] * (self.N - self.i)
        return float(total / self.N), [(p, (recs, slots)) for p, recs in _joint(fixed, dists, True, budget)]

    def _frozen_records(self, s):
        return ()

    def final(self, config):
        records = config[0]
        g = self.g(self.model.horizon - 1, records)
        return float(g.mean()), g, np.ones(len(records))


class _CSMCLaw(_SIRLaw):
    """Conditional SIR: frozen paths at positions 0..i-1 (lineage positions are irrelevant to the law)."""

    def __init__(self, model, N, frozen):
        super().__init__(model, N)
        self.frozen = tuple(tuple(int(v) for v in y) for y in frozen)

    def _frozen_records(self, s):
        return tuple((y[: s + 1], 1.0) for y in self.frozen)

    def initial(self, budget):
        mu = self.model.initial
        outs = [(float(mu[x]), ((int(x),), 1.0)) for x in np.flatnonzero(mu > 0)]
        fixed = self._frozen_records(0)
        return [(p, (recs, ())) for p, recs in _joint(fixed, [outs] * (self.N - self.i), True, budget)]


class _AlphaLaw(_Law):
    def __init__(self, model, N, policy: AlphaPolicy, zeta: float):
        super().__init__(model, N)
        if policy.n != N:
            raise SMCError(f"policy built for N={policy.n}, requested N={N}")
        self.policy = policy
        self.zeta = zeta
        self.exchangeable = policy.permutation_invariant

    @property
    def w0(self):
        return _round(1.0 / self.N)

    def _resample(self, records, s):
        w = np.array([r[1] for r in records])
        inc = w * self.g(s - 1, records)
        if not np.any(inc > 0):
            return None
        alpha = select_alpha(self.policy, inc, s - 1)
        W, R = alpha_resampling_kernel(alpha, inc)
        total = W.sum()
        self._record(alpha, W)
        return alpha, W, R, total

    def _record(self, alpha, W):
        e_inf, e_2 = p_ess(W, INF), p_ess(W, 2.0)
        self.ess_min_inf = min(self.ess_min_inf, e_inf)
        self.ess_min_2 = min(self.ess_min_2, e_2)
        if not alpha.doubly_stochastic or e_inf < self.zeta * self.N * (1 - ESS_SLACK):
            self.assumption_ok = False

    def _free_dists(self, records, s, W, R, total, positions):
        cache = {}
        dists = []
        for n in positions:
            if W[n] <= 0:
                return None
            key = (R[n].tobytes(), _round(W[n] / total))
            if key not in cache:
                cache[key] = _extend(self.model, s, records, R[n], key[1])
            dists.append(cache[key])
        return dists

    def step(self, config, s, budget):
        records, slots = config
        res = self._resample(records, s)
        if res is None:
            return 0.0, []
        alpha, W, R, total = res
        dists = self._free_dists(records, s, W, R, total, range(self.N))
        if dists is None:
            return 0.0, []
        return float(total), [(p, (recs, slots)) for p, recs in _joint((), dists, self.exchangeable, budget)]

    def final(self, config):
        records = config[0]
        w = np.array([r[1] for r in records])
        upd = w * self.g(self.model.horizon - 1, records)
        return float(upd.sum()), upd, w


class _CAlphaLaw(_AlphaLaw):
    def __init__(self, model, N, frozen, policy, zeta):
        super().__init__(model, N, policy, zeta)
        self.frozen = tuple(tuple(int(v) for v in y) for y in frozen)
        if self.i not in (1, 2) or self.i > N:
            raise SMCError("conditional alpha-SMC supports one or two frozen paths with i <= N")

    def _assemble(self, f, frozen_recs, free_outcomes, budget):
        """Place frozen records at slots ``f`` and combine free positions."""
        if self.exchangeable:
            return [(p, (recs, tuple(range(self.i))))
                    for p, recs in _joint(tuple(frozen_recs), free_outcomes, True, budget)]
        free_pos = [n for n in range(self.N) if n not in f]
        out = []
        for p, recs in _joint((), free_outcomes, False, budget):
            full = [None] * self.N
            for j, n in enumerate(f):
                full[n] = frozen_recs[j]
            for n, r in zip(free_pos, recs):
                full[n] = r
            out.append((p, (tuple(full), tuple(f))))
        return out

    def initial(self, budget):
        mu = self.model.initial
        outs = [(float(mu[x]), ((int(x),), self.w0)) for x in np.flatnonzero(mu > 0)]
        tuples, probs = initial_slot_law(self.N, self.i)
        frozen_recs = [((y[0],), self.w0) for y in self.frozen]
        result = []
        for f, pf in zip(tuples, probs):
            for p, cfg in self._assemble(f, frozen_recs, [outs] * (self.N - self.i), budget):
                result.append((pf * p, cfg))
        return result

    def step(self, config, s, budget):
        records, slots = config
        res = self._resample(records, s)
        if res is None:
            return 0.0, []
        alpha, W, R, total = res
        tuples, probs = slot_law(alpha, slots, self.i)
        result = []
        for f, pf in zip(tuples, probs):
            if pf <= 0:
                continue
            free_pos = [n for n in range(self.N) if n not in f]
            dists = self._free_dists(records, s, W, R, total, free_pos)
            if dists is None:
                continue
            frozen_recs = [(y[: s + 1], _round(W[n] / total)) for y, n in zip(self.frozen, f)]
            for p, cfg in self._assemble(f, frozen_recs, dists, budget):
                result.append((pf * p, cfg))
        return float(total), result


# ------------------------------------------------------------ propagation

@dataclass
class _FinalLaw:
    configs: dict        # config -> (prob, zacc)
    law: _Law
    lost_mass: float = 0.0


def _propagate(law: _Law, budget_limit: int) -> _FinalLaw:
    budget = _Budget(budget_limit)
    dist: dict = defaultdict(lambda: [0.0, 0.0])
    for p, cfg in law.initial(budget):
        d = dist[cfg]
        d[0] += p
        d[1] += p
    lost = 0.0
    for s in range(1, law.model.horizon):
        new: dict = defaultdict(lambda: [0.0, 0.0])
        for cfg, (p, z) in dist.items():
            factor, outs = law.step(cfg, s, budget)
            if not outs:
                lost += p
            for q, c2 in outs:
                d = new[c2]
                d[0] += p * q
                d[1] += z * q * factor
        dist = new
    return _FinalLaw({c: tuple(v) for c, v in dist.items()}, law, lost)


def _guarded_model(model) -> FiniteModel:
    if not isinstance(model, FiniteModel):
        raise SMCError("exact mode requires a FiniteModel; use monte-carlo mode")
    check_model(model)
    return model


def _unconditional_law(model, algorithm: Algorithm, N: int) -> _Law:
    if N < 1:
        raise SMCError("need N >= 1")
    if algorithm.name == "sis":
        return _SISLaw(model, N)
    if algorithm.name == "sir":
        return _SIRLaw(model, N)
    return _AlphaLaw(model, N, algorithm.policy, algorithm.zeta)


def exact_final_law(model, algorithm, N: int, limit: int = WORK_GUARD) -> dict:
    """Law of the multiset of final-generation paths (weights marginalised)."""
    law = _unconditional_law(_guarded_model(model), as_algorithm(algorithm), N)
    fl = _propagate(law, limit)
    out: dict = defaultdict(float)
    for (records, _), (p, _) in fl.configs.items():
        out[tuple(sorted(r[0] for r in records))] += p
    return dict(out)


def exact_expected_normalizer(model, algorithm, N: int, limit: int = WORK_GUARD) -> float:
    law = _unconditional_law(_guarded_model(model), as_algorithm(algorithm), N)
    fl = _propagate(law, limit)
    return math.fsum(z * law.final(cfg)[0] for cfg, (p, z) in fl.configs.items())


def expected_estimator_exact(model, algorithm, N: int, target_kind: str,
                             limit: int = WORK_GUARD) -> ExpectedEstimate:
    """Exact mean of the weighted empirical measure over all algorithm randomness."""
    time_kind, space = split_target(target_kind)
    algorithm = as_algorithm(algorithm)
    law = _unconditional_law(_guarded_model(model), algorithm, N)
    fl = _propagate(law, limit)
    acc: dict = defaultdict(list)
    degenerate = fl.lost_mass
    for cfg, (p, _) in fl.configs.items():
        _, upd, pred = law.final(cfg)
        w = upd if time_kind == "updated" else pred
        total = w.sum()
        if not total > 0:
            degenerate += p
            continue
        for rec, wn in zip(cfg[0], w):
            if wn > 0:
                atom = rec[0] if space == "joint" else rec[0][-1]
                acc[atom].append(p * wn / total)
    table = {a: math.fsum(v) for a, v in acc.items()}
    alpha = algorithm.name == "alpha"
    return ExpectedEstimate(
        table, "exact", target_kind, algorithm.label, degenerate_mass=degenerate,
        assumption_ok=law.assumption_ok if alpha else True,
        ess_min_inf=law.ess_min_inf if alpha and math.isfinite(law.ess_min_inf) else None,
        ess_min_2=law.ess_min_2 if alpha and math.isfinite(law.ess_min_2) else None,
    )


def expected_estimator_mc(model, algorithm, N: int, target_kind: str, replications: int,
                          rng) -> ExpectedEstimate:
    """Average of ``replications`` independent estimator tables, with standard errors.

    ``rng`` is a Generator shared by all replications, or a callable mapping
    the replication index to its own Generator.
    """
    if replications < 1:
        raise NoReplicationsError("no replications")
    algorithm = as_algorithm(algorithm)
    sums: dict = defaultdict(float)
    sq: dict = defaultdict(float)
    degenerate = 0
    ok = True
    e_inf = e_2 = math.inf
    stream = rng if callable(rng) else (lambda r: rng)
    for r in range(replications):
        out = algorithm.run(model, N, stream(r))
        if out.degenerate:
            degenerate += 1
            continue
        ok = ok and out.assumption_ok
        e_inf = min(e_inf, out.min_ess(INF))
        e_2 = min(e_2, out.min_ess(2.0))
        for atom, w in out.measure(target_kind).table().items():
            sums[atom] += w
            sq[atom] += w * w
    R = replications
    table = {a: v / R for a, v in sums.items()}
    stderr = {}
    for a, m in table.items():
        var = max(sq[a] / R - m * m, 0.0)
        stderr[a] = math.sqrt(var / R) if R > 1 else math.nan
    alpha = algorithm.name == "alpha"
    return ExpectedEstimate(table, "mc", target_kind, algorithm.label, R, stderr, degenerate / R,
                            ok if alpha else True,
                            e_inf if alpha else None, e_2 if alpha else None)


# ----------------------------------------------------------- conditional

@dataclass(frozen=True)
class ConditionalAlgorithm:
    """``csmc`` (fixed lineages) or ``calpha`` (sampled slots) descriptor."""

    name: str
    policy: Optional[AlphaPolicy] = None
    zeta: float = 1.0

    def __post_init__(self):
        if self.name not in ("csmc", "calpha"):
            raise SMCError(f"unknown conditional algorithm {self.name!r}")
        if self.name == "calpha" and self.policy is None:
            raise SMCError("calpha needs a policy")


def _conditional_law(model, frozen, N, algorithm) -> _Law:
    if isinstance(algorithm, str):
        algorithm = ConditionalAlgorithm(algorithm)
    if len(frozen) > N:
        raise SMCError(f"too many frozen paths: {len(frozen)} > N={N}")
    if algorithm.name == "csmc":
        return _CSMCLaw(model, N, frozen)
    return _CAlphaLaw(model, N, frozen, algorithm.policy, algorithm.zeta)


def conditional_normalizer_exact(model, frozen, N: int, algorithm="csmc",
                                 limit: int = WORK_GUARD) -> tuple[float, bool]:
    """Expected normalizer of a conditional process and whether the alpha
    assumptions (double stochasticity, infinity-ESS >= zeta N) held on every
    reachable configuration."""
    law = _conditional_law(_guarded_model(model), frozen, N, algorithm)
    fl = _propagate(law, limit)
    value = math.fsum(z * law.final(cfg)[0] for cfg, (p, z) in fl.configs.items())
    return value, law.assumption_ok


def csmc_expected_normalizer_bruteforce(model, frozen, N: int, algorithm="csmc",
                                        limit: int = WORK_GUARD) -> float:
    """Exact expected normalizer of a conditional process, by enumeration."""
    return conditional_normalizer_exact(model, frozen, N, algorithm, limit)[0]


def conditional_selection_law(model, frozen, N: int, algorithm="csmc", limit: int = WORK_GUARD) -> dict:
    """Law of the path selected at the end of a conditional run."""
    law = _conditional_law(_guarded_model(model), frozen, N, algorithm)
    fl = _propagate(law, limit)
    acc: dict = defaultdict(list)
    for cfg, (p, _) in fl.configs.items():
        _, upd, _ = law.final(cfg)
        total = upd.sum()
        for rec, wn in zip(cfg[0], upd):
            if wn > 0:
                acc[rec[0]].append(p * wn / total)
    return {a: math.fsum(v) for a, v in acc.items()}


def icsmc_kernel_matrix(oracle: OracleTables, model_theta, N: int, variant="icsmc",
                        limit: int = WORK_GUARD) -> np.ndarray:
    """Exact transition matrix of the iterated conditional kernel over all paths.

    ``variant`` is ``"icsmc"`` or a :class:`ConditionalAlgorithm` with name
    ``calpha``. Rows follow ``oracle.path_tuples()``.
    """
    if variant == "icsmc":
        variant = ConditionalAlgorithm("csmc")
    paths = oracle.path_tuples()
    P = np.zeros((len(paths), len(paths)))
    for a, y in enumerate(paths):
        if N == 1:
            P[a, a] = 1.0
            continue
        if oracle.gamma[a] <= 0:
            # outside the target support: the chain is never started here
            P[a, a] = 1.0
            continue
        for z, p in conditional_selection_law(model_theta, [y], N, variant, limit).items():
            P[a, oracle.index_of(z)] = p
    return P


def pg_transition_matrix(param_model, oracles: Sequence[OracleTables], N: int) -> np.ndarray:
    """Exact PG operator on (theta, path) pairs; index = theta * |paths| + path."""
    from .conditional import param_posterior

    kernels = [icsmc_kernel_matrix(o, m, N) for o, m in zip(oracles, param_model.models)]
    paths = oracles[0].path_tuples()
    n_paths = len(paths)
    n_theta = len(param_model.models)
    P = np.zeros((n_theta * n_paths, n_theta * n_paths))
    for b, y in enumerate(paths):
        try:
            post = param_posterior(param_model, y)
        except SMCError:
            for th in range(n_theta):
                P[th * n_paths + b, th * n_paths + b] = 1.0
            continue
        for th in range(n_theta):
            row = th * n_paths + b
            for th2 in range(n_theta):
                P[row, th2 * n_paths:(th2 + 1) * n_paths] += post[th2] * kernels[th2][b]
    return P


def joint_param_path_target(param_model, oracles: Sequence[OracleTables]) -> np.ndarray:
    """pi(theta, y) proportional to prior(theta) * gamma_theta(y)."""
    v = np.concatenate([p * o.gamma for p, o in zip(param_model.prior, oracles)])
    return v / v.sum()


def kernel_tv_decay(P: np.ndarray, pi, k_max: int) -> list:
    """max over rows of TV(delta_y P^k, pi) for k = 1..k_max."""
    pi = np.asarray(pi, dtype=float)
    out = []
    Pk = np.eye(P.shape[0])
    for _ in range(k_max):
        Pk = Pk @ P
        out.append(max(tv_dist(row, pi) for row in Pk))
    return out


def final_law_tv(a: dict, b: dict) -> float:
    return tv_dist(a, b)
