"""SIS, SIR and alpha-SMC samplers and their weighted empirical estimators.

RNG consumption order for every step: one ``rng.random(N)`` batch for the
ancestors (skipped when the resampling matrix is the identity), then the
proposal draws made by ``model.sample_transition``. The initial generation
uses only ``model.sample_initial``. SIS and alpha-SMC with the identity
policy therefore consume identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateWeightsError, NoValidSampleError, SMCError
from .model import FeynmanKacModel, check_model
from .resampling import (
    AlphaMatrix,
    AlphaPolicy,
    alpha_resampling_kernel,
    categorical_from_uniforms,
    select_alpha,
)
from .weights import INF, p_ess

TARGET_KINDS = ("updated_joint", "updated_marginal", "predictive_joint", "predictive_marginal")
ESS_ORDERS = (1.0, 2.0, INF)
# relative slack when comparing an ESS against zeta * N
ESS_SLACK = 1e-12


def split_target(kind: str) -> tuple[str, str]:
    if kind not in TARGET_KINDS:
        raise SMCError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")
    a, b = kind.split("_")
    return a, b


def _atom(x):
    return x.item() if isinstance(x, np.generic) else x


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms; weights are normalised and nonnegative."""

    weights: np.ndarray
    atoms: tuple

    def table(self) -> dict:
        """Aggregate equal atoms into a probability table."""
        out: dict = {}
        for w, a in zip(self.weights, self.atoms):
            if w > 0:
                out[a] = out.get(a, 0.0) + float(w)
        return out


@dataclass
class ParticleSystem:
    """All generations of a run.

    ``particles[s]`` holds the states of generation ``s``;
    ``weights[s]`` the weights carried into generation ``s`` before its
    potential is applied (``W_s``); ``updated_weights[s]`` the weights after
    it; ``ancestors[s-1]`` the ancestor indices of generation ``s``.
    """

    particles: list
    weights: list
    updated_weights: list
    ancestors: list
    alphas: list = field(default_factory=list)
    slots: Optional[list] = None
    selection: Optional[int] = None
    normalizer: Optional[float] = None
    degenerate: bool = False

    @property
    def size(self) -> int:
        return len(self.particles[0])

    @property
    def generations(self) -> int:
        return len(self.particles)

    def lineages(self) -> np.ndarray:
        """Array ``b`` of shape (T, N) with ``b[s, k]`` the ancestor of ``k`` at ``s``."""
        T, N = self.generations, self.size
        b = np.empty((T, N), dtype=np.int64)
        b[-1] = np.arange(N)
        for s in range(T - 1, 0, -1):
            b[s - 1] = self.ancestors[s - 1][b[s]]
        return b

    def lineage(self, k: int) -> np.ndarray:
        return self.lineages()[:, k]

    def paths(self) -> list:
        b = self.lineages()
        cols = [self.particles[s][b[s]] for s in range(self.generations)]
        return [tuple(_atom(c[k]) for c in cols) for k in range(self.size)]

    def path(self, k: int) -> tuple:
        b = self.lineage(k)
        return tuple(_atom(self.particles[s][b[s]]) for s in range(self.generations))


@dataclass
class SMCOutput:
    system: ParticleSystem
    normalizer: float
    predictive_normalizer: float
    ess_trace: list
    assumption_flags: list
    algorithm: str = ""
    degenerate: bool = False

    def measure(self, kind: str) -> EmpiricalMeasure:
        time_kind, space = split_target(kind)
        if self.degenerate:
            raise DegenerateWeightsError("degenerate weights: estimators undefined for this run")
        sys = self.system
        w = sys.updated_weights[-1] if time_kind == "updated" else sys.weights[-1]
        total = w.sum()
        if not total > 0:
            raise DegenerateWeightsError("degenerate weights: estimator has zero mass")
        w = w / total
        if space == "joint":
            atoms = tuple(sys.paths())
        else:
            atoms = tuple(_atom(x) for x in sys.particles[-1])
        return EmpiricalMeasure(w, atoms)

    @property
    def updated_joint(self):
        return self.measure("updated_joint")

    @property
    def updated_marginal(self):
        return self.measure("updated_marginal")

    @property
    def predictive_joint(self):
        return self.measure("predictive_joint")

    @property
    def predictive_marginal(self):
        return self.measure("predictive_marginal")

    def min_ess(self, p) -> float:
        vals = [e[p] for e in self.ess_trace if e is not None]
        return min(vals) if vals else math.nan

    @property
    def assumption_ok(self) -> bool:
        return all(f["inf_ess"] is not False and f["doubly_stochastic"] for f in self.assumption_flags)


def _ess_entry(w: np.ndarray):
    if not np.any(w > 0):
        return None
    return {p: p_ess(w, p) for p in ESS_ORDERS}


def _check_n(N: int):
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise SMCError(f"need N >= 1, got {N}")


def _propagate(model, s, x_prev, a, rng):
    return model.sample_transition(s, x_prev[a], rng)


def run_sis(model: FeynmanKacModel, N: int, rng: np.random.Generator) -> SMCOutput:
    """Sequential importance sampling: independent paths, product-potential weights."""
    _check_n(N)
    check_model(model)
    T = model.horizon
    ident = np.arange(N)
    x = model.sample_initial(N, rng)
    particles, ancestors = [x], []
    with np.errstate(divide="ignore"):
        log_v = np.log(model.potential(0, x))
    log_prev = np.zeros(N)
    pre, post = [np.ones(N)], [_scaled(log_v)]
    for s in range(1, T):
        x = model.sample_transition(s, x, rng)
        particles.append(x)
        ancestors.append(ident)
        log_prev = log_v
        with np.errstate(divide="ignore"):
            log_v = log_v + np.log(model.potential(s, x))
        pre.append(_scaled(log_prev))
        post.append(_scaled(log_v))
    system = ParticleSystem(particles, pre, post, ancestors)
    z = _log_mean_exp(log_v)
    z_hat = _log_mean_exp(log_prev) if T > 1 else 1.0
    system.normalizer = z
    degenerate = not np.any(post[-1] > 0)
    system.degenerate = degenerate
    flags = [{"inf_ess": None, "doubly_stochastic": True} for _ in range(T)]
    return SMCOutput(system, z, z_hat, [_ess_entry(w) for w in post], flags, "sis", degenerate)


def _scaled(log_w: np.ndarray) -> np.ndarray:
    m = np.max(log_w)
    if not np.isfinite(m):
        return np.zeros_like(log_w)
    return np.exp(log_w - m)


def _log_mean_exp(log_w: np.ndarray) -> float:
    m = np.max(log_w)
    if not np.isfinite(m):
        return 0.0
    return float(math.exp(m) * np.mean(np.exp(log_w - m)))


def run_sir(model: FeynmanKacModel, N: int, rng: np.random.Generator) -> SMCOutput:
    """Multinomial resampling at every step with one-step potential weights."""
    _check_n(N)
    check_model(model)
    T = model.horizon
    x = model.sample_initial(N, rng)
    g = np.asarray(model.potential(0, x), dtype=float)
    particles, ancestors = [x], []
    pre, post = [np.ones(N)], [g]
    log_z = 0.0
    log_z_prev = 0.0
    degenerate = False
    for s in range(1, T):
        total = g.sum()
        if not total > 0:
            degenerate = True
            break
        log_z += math.log(total / N)
        a = categorical_from_uniforms(g / total, rng.random(N))
        x = model.sample_transition(s, x[a], rng)
        g = np.asarray(model.potential(s, x), dtype=float)
        particles.append(x)
        ancestors.append(a)
        pre.append(np.ones(N))
        post.append(g)
    if degenerate:
        z = 0.0
        z_hat = 0.0
    else:
        log_z_prev = log_z
        total = g.sum()
        z = math.exp(log_z) * total / N if total > 0 else 0.0
        z_hat = math.exp(log_z_prev)
        degenerate = not total > 0
    system = ParticleSystem(particles, pre, post, ancestors, normalizer=z, degenerate=degenerate)
    flags = [{"inf_ess": True, "doubly_stochastic": True} for _ in particles]
    return SMCOutput(system, z, z_hat, [_ess_entry(w) for w in post], flags, "sir", degenerate)


def draw_alpha_ancestors(alpha: AlphaMatrix, r: np.ndarray, u: Optional[np.ndarray]) -> np.ndarray:
    """Ancestor per row of ``r`` from uniforms ``u`` (identity needs no uniforms)."""
    n = r.shape[0]
    if alpha.is_identity:
        return np.arange(n)
    if alpha.kind == "uniform":
        return categorical_from_uniforms(r[0], u)
    c = np.cumsum(r, axis=1)
    c /= c[:, -1:]
    return (c <= u[:, None]).sum(axis=1)


def run_alpha_smc(model: FeynmanKacModel, N: int, policy: AlphaPolicy, zeta: float,
                  rng: np.random.Generator) -> SMCOutput:
    """alpha-SMC: resampling through a matrix chosen by ``policy`` at each step.

    ``zeta`` is the threshold used for the per-step assumption record
    (infinity-ESS of ``W_s`` at least ``zeta * N``); the APF decision itself
    uses the policy's own ``zeta``.
    """
    _check_n(N)
    check_model(model)
    if policy.n != N:
        raise SMCError(f"policy built for N={policy.n}, run requested N={N}")
    T = model.horizon
    x = model.sample_initial(N, rng)
    W = np.ones(N)
    g = np.asarray(model.potential(0, x), dtype=float)
    particles, ancestors, alphas = [x], [], []
    pre, post = [W], [W * g]
    flags = [{"inf_ess": True, "doubly_stochastic": True}]
    degenerate = False
    for s in range(1, T):
        inc = W * g
        if not np.any(inc > 0):
            degenerate = True
            break
        alpha = select_alpha(policy, inc, s - 1)
        W_new, R = alpha_resampling_kernel(alpha, inc)
        if np.any(W_new <= 0):
            degenerate = True
            break
        if alpha.doubly_stochastic:
            _check_conservation(W_new, inc)
        u = None if alpha.is_identity else rng.random(N)
        a = draw_alpha_ancestors(alpha, R, u)
        x = model.sample_transition(s, x[a], rng)
        W = W_new
        g = np.asarray(model.potential(s, x), dtype=float)
        particles.append(x)
        ancestors.append(a)
        alphas.append(alpha)
        pre.append(W)
        post.append(W * g)
        flags.append({
            "inf_ess": p_ess(W, INF) >= zeta * N * (1 - ESS_SLACK),
            "doubly_stochastic": alpha.doubly_stochastic,
        })
    if degenerate:
        z = z_hat = 0.0
    else:
        z = float(np.sum(W * g) / N)
        z_hat = float(np.sum(W) / N)
        degenerate = not z > 0
    system = ParticleSystem(particles, pre, post, ancestors, alphas, normalizer=z, degenerate=degenerate)
    return SMCOutput(system, z, z_hat, [_ess_entry(w) for w in post], flags,
                     f"alpha[{policy.label}]", degenerate)


def _check_conservation(w_new: np.ndarray, inc: np.ndarray):
    # doubly stochastic alpha preserves total mass: Zhat_s = Z_{s-1}
    a, b = w_new.sum(), inc.sum()
    if abs(a - b) > 1e-9 * max(abs(b), 1e-300):
        raise SMCError(f"normalizer identity violated: {a} != {b}")


def sample_path(output: SMCOutput, which: str, rng: np.random.Generator):
    """Draw one atom (path or terminal state) from the chosen empirical measure."""
    if output.degenerate:
        raise NoValidSampleError("no valid sample: degenerate output")
    try:
        m = output.measure(which)
    except DegenerateWeightsError as exc:
        raise NoValidSampleError(f"no valid sample: {exc}") from exc
    k = int(categorical_from_uniforms(m.weights, rng.random(1))[0])
    return m.atoms[k]
