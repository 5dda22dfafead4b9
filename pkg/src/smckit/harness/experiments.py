"""Experiment drivers: one function per experiment kind, each yielding rows.

Every experiment is split into independent cells. Cells run serially or in
a process pool and are reassembled in their declared order, so the output
never depends on completion order. Random streams derive from
``SeedSequence(seed, spawn_key=(a, N, r, c))`` with ``a`` the algorithm or
variant index, ``r`` the replication and ``c`` the chain.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Callable

import numpy as np

from ..bounds import beta_constant, kl_bound, minorization_eps
from ..conditional import pg_step, run_chain
from ..errors import EnumerationTooLargeError, NoApplicableBoundError, SMCError, SupportMismatchError
from ..exact import (
    Algorithm,
    ConditionalAlgorithm,
    conditional_normalizer_exact,
    expected_estimator_exact,
    expected_estimator_mc,
    icsmc_kernel_matrix,
    joint_param_path_target,
    kernel_tv_decay,
    pg_transition_matrix,
)
from ..oracle import build_oracle, chi2_div, csmc_expected_normalizer_closed_form, kl_div, tv_dist
from ..resampling import AlphaPolicy, kappa
from ..weights import INF, ess_property_violations, p_ess
from .config import ExperimentConfig
from .csvio import ResultRow


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def make_policy(cfg: ExperimentConfig, N: int) -> AlphaPolicy:
    return AlphaPolicy(cfg.policy, N, ess_order=cfg.ess_order, zeta=cfg.zeta, matrices=cfg.fixed_matrices)


def _algorithm(cfg: ExperimentConfig, name: str, N: int) -> Algorithm:
    if name == "alpha":
        return Algorithm("alpha", make_policy(cfg, N), cfg.zeta)
    return Algorithm(name)


def _policy_label(cfg: ExperimentConfig, name: str, N: int) -> str:
    if name in ("alpha", "calpha", "icalpha"):
        return make_policy(cfg, N).label
    return "none"


def _safe(fn, *args):
    try:
        return fn(*args)
    except SupportMismatchError:
        return None


# ------------------------------------------------------------------ cells

def _kl_cell(cfg: ExperimentConfig, a_idx: int, name: str, N: int, target: str) -> list[ResultRow]:
    model = cfg.model
    oracle = build_oracle(model)
    alg = _algorithm(cfg, name, N)
    est = None
    mode = "exact"
    if cfg.mode in ("auto", "exact"):
        try:
            est = expected_estimator_exact(model, alg, N, target, limit=cfg.exact_limit)
        except EnumerationTooLargeError:
            if cfg.mode == "exact":
                raise
    if est is None:
        mode = "mc"
        est = expected_estimator_mc(model, alg, N, target, cfg.replications,
                                    lambda r: substream(cfg.seed, a_idx, N, r, 0))
    pi = oracle.target(target)
    try:
        bound = kl_bound(oracle, name, N, cfg.assumptions, cfg.zeta, target)
    except NoApplicableBoundError:
        bound = None
    tag = cfg.kind if cfg.kind == "kl_vs_n" and target == "updated_joint" else f"{cfg.kind}[{target}]"
    return [ResultRow(tag, cfg.model_id, name, _policy_label(cfg, name, N), N, mode,
                      kl=_safe(kl_div, pi, est.measure), kl_bound=bound,
                      tv=tv_dist(pi, est.measure), chi2=_safe(chi2_div, pi, est.measure),
                      ess_min_inf=est.ess_min_inf, ess_min_2=est.ess_min_2,
                      assumption_ok=est.assumption_ok, seed=cfg.seed)]


def _random_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    shape = rng.integers(4)
    if shape == 0:
        w = rng.dirichlet(np.full(n, rng.uniform(0.05, 5.0)))
    elif shape == 1:
        w = np.exp(rng.normal(0.0, rng.uniform(0.1, 6.0), size=n))
    elif shape == 2:
        w = rng.uniform(size=n) * (rng.uniform(size=n) < rng.uniform(0.2, 1.0))
    else:
        w = rng.exponential(size=n)
    if not np.any(w > 0):
        w[rng.integers(n)] = 1.0
    return w


def ess_suite_vectors(seed: int, n: int, count: int) -> list:
    rng = substream(seed, 0, n, 0, 0)
    return [_random_weights(rng, n) for _ in range(count)]


def _ess_cell(cfg: ExperimentConfig, n: int) -> list[ResultRow]:
    vectors = ess_suite_vectors(cfg.seed, n, cfg.ess_vectors)
    ok = True
    e_inf = e_2 = math.inf
    for w in vectors:
        if ess_property_violations(w):
            ok = False
        e_inf = min(e_inf, p_ess(w, INF))
        e_2 = min(e_2, p_ess(w, 2.0))
    return [ResultRow(f"ess_suite[vectors={cfg.ess_vectors}]", cfg.model_id, "none", "none", n, "exact",
                      ess_min_inf=e_inf, ess_min_2=e_2, assumption_ok=ok, seed=cfg.seed)]


def _frozen_sets(oracle, i: int):
    paths = oracle.path_tuples()
    if i == 1:
        return [((p,), oracle.joint[k]) for k, p in enumerate(paths)]
    out = []
    for a, p in enumerate(paths):
        for b, q in enumerate(paths):
            out.append(((p, q), oracle.joint[a] * oracle.joint[b]))
    return out


def _normalizer_cell(cfg: ExperimentConfig, name: str, N: int, i: int) -> list[ResultRow]:
    if i > N:
        return []
    model = cfg.model
    oracle = build_oracle(model)
    if name == "csmc":
        alg, zeta = ConditionalAlgorithm("csmc"), None
    else:
        alg, zeta = ConditionalAlgorithm("calpha", make_policy(cfg, N), cfg.zeta), cfg.zeta
    brute, closed = [], []
    ok = True
    for frozen, weight in _frozen_sets(oracle, i):
        if weight <= 0:
            continue
        v, flag = conditional_normalizer_exact(model, list(frozen), N, alg, cfg.exact_limit)
        ok = ok and flag
        brute.append(weight * v)
        closed.append(weight * csmc_expected_normalizer_closed_form(oracle, list(frozen), N, zeta))
    Z = oracle.normalizer
    q_brute = math.fsum(brute) / Z
    q_closed = math.fsum(closed) / Z
    return [ResultRow(f"normalizer_check[i={i}]", cfg.model_id, name, _policy_label(cfg, name, N), N, "exact",
                      kl=math.log(q_brute), kl_bound=math.log(q_closed), assumption_ok=ok, seed=cfg.seed)]


def _kernel(cfg: ExperimentConfig, oracle, variant: str, N: int):
    model = oracle.model
    beta = beta_constant(oracle)
    if variant == "icsmc":
        P = icsmc_kernel_matrix(oracle, model, N, limit=cfg.exact_limit)
        return P, minorization_eps(oracle.horizon, N, beta, 1.0, 1.0 / N), True
    pol = make_policy(cfg, N)
    alg = ConditionalAlgorithm("calpha", pol, cfg.zeta)
    P = icsmc_kernel_matrix(oracle, model, N, alg, limit=cfg.exact_limit)
    kap = kappa(pol.catalogue)
    eps = minorization_eps(oracle.horizon, N, beta, cfg.zeta, kap) if kap < 1 else None
    ds = all(m.doubly_stochastic for m in pol.catalogue)
    return P, eps, ds and math.isfinite(beta)


def _minorization_cell(cfg: ExperimentConfig, v_idx: int, variant: str, N: int) -> list[ResultRow]:
    oracle = build_oracle(cfg.model)
    P, eps, ok = _kernel(cfg, oracle, variant, N)
    pi = oracle.joint
    tv = max(tv_dist(row, pi) for row in P)
    chi2 = max(chi2_div(row, pi) for row in P)
    return [ResultRow("icsmc_minorization", cfg.model_id, variant, _policy_label(cfg, variant, N), N, "exact",
                      tv=tv, chi2=chi2, assumption_ok=ok, eps_minorization=eps, seed=cfg.seed)]


def _tv_decay_cell(cfg: ExperimentConfig, v_idx: int, variant: str, N: int) -> list[ResultRow]:
    oracle = build_oracle(cfg.model)
    P, eps, ok = _kernel(cfg, oracle, variant, N)
    decay = kernel_tv_decay(P, oracle.joint, cfg.k_max)
    return [ResultRow(f"tv_decay[k={k}]", cfg.model_id, variant, _policy_label(cfg, variant, N), N, "exact",
                      tv=tv, assumption_ok=ok, eps_minorization=eps, seed=cfg.seed)
            for k, tv in enumerate(decay, 1)]


def _pg_exact_cell(cfg: ExperimentConfig, N: int) -> list[ResultRow]:
    pm = cfg.param_model
    oracles = [build_oracle(m) for m in pm.models]
    P = pg_transition_matrix(pm, oracles, N)
    target = joint_param_path_target(pm, oracles)
    invariance = float(np.max(np.abs(target @ P - target)))
    tv = kernel_tv_decay(P, target, cfg.k_max)[-1] if cfg.k_max > 0 else None
    return [ResultRow(f"pg_ergodicity[k={cfg.k_max}]", cfg.model_id, "pg", "none", N, "exact",
                      tv=tv, assumption_ok=invariance <= 1e-10, seed=cfg.seed)]


def pg_theta_marginal(pm) -> np.ndarray:
    oracles = [build_oracle(m) for m in pm.models]
    t = joint_param_path_target(pm, oracles).reshape(len(pm.models), -1)
    return t.sum(axis=1)


def pg_initial_state(pm) -> tuple:
    oracle = build_oracle(pm.models[0])
    k = int(np.argmax(oracle.gamma))
    return 0, oracle.path_tuples()[k]


def _pg_chain_cell(cfg: ExperimentConfig, N: int, c: int) -> list[ResultRow]:
    pm = cfg.param_model
    rng = substream(cfg.seed, 0, N, 0, c)

    def step(state, rng):
        return pg_step(pm, state[0], state[1], N, rng)

    states = run_chain(step, pg_initial_state(pm), cfg.steps, rng)
    thetas = np.array([s[0] for s in states[1:]], dtype=np.int64)
    emp = np.bincount(thetas, minlength=len(pm.models)) / max(len(thetas), 1)
    tv = tv_dist(emp, pg_theta_marginal(pm))
    return [ResultRow(f"pg_ergodicity[steps={cfg.steps},chain={c}]", cfg.model_id, "pg", "none", N, "mc",
                      tv=tv, seed=cfg.seed)]


# ------------------------------------------------------------- orchestration

def build_cells(cfg: ExperimentConfig) -> list[tuple[Callable, tuple]]:
    kind = cfg.kind
    cells: list = []
    if kind in ("kl_vs_n", "bound_check"):
        if kind == "bound_check" and not cfg.assumptions:
            cfg = replace(cfg, assumptions=("bounded_potentials", "beta"))
        algs = [a for a in cfg.algorithms if a in ("sis", "sir", "alpha")]
        for target in cfg.targets:
            for a_idx, name in enumerate(algs):
                for N in cfg.N_list:
                    cells.append((_kl_cell, (cfg, a_idx, name, N, target)))
    elif kind == "ess_suite":
        for n in range(cfg.ess_N_min, cfg.ess_N_max + 1):
            cells.append((_ess_cell, (cfg, n)))
    elif kind == "normalizer_check":
        algs = [a for a in cfg.algorithms if a in ("csmc", "calpha")] or ["csmc", "calpha"]
        for i in cfg.frozen_counts:
            for name in algs:
                for N in cfg.N_list:
                    cells.append((_normalizer_cell, (cfg, name, N, i)))
    elif kind in ("icsmc_minorization", "tv_decay"):
        fn = _minorization_cell if kind == "icsmc_minorization" else _tv_decay_cell
        for v_idx, variant in enumerate(cfg.variants):
            for N in cfg.N_list:
                cells.append((fn, (cfg, v_idx, variant, N)))
    elif kind == "pg_ergodicity":
        for N in cfg.N_list:
            cells.append((_pg_exact_cell, (cfg, N)))
            for c in range(cfg.chain_count):
                cells.append((_pg_chain_cell, (cfg, N, c)))
    else:  # pragma: no cover - parse_config rejects unknown kinds
        raise SMCError(f"unknown experiment kind {kind!r}")
    return cells


def _timed(fn, args, timing: bool):
    start = time.perf_counter()
    rows = fn(*args)
    if timing:
        ms = (time.perf_counter() - start) * 1000.0
        for r in rows:
            r.runtime_ms = ms
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Run every cell and return rows in deterministic cell order."""
    cells = build_cells(cfg)
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_timed, fn, args, cfg.timing) for fn, args in cells]
            results = [f.result() for f in futures]
    else:
        results = [_timed(fn, args, cfg.timing) for fn, args in cells]
    return [row for rows in results for row in rows]
