"""Conditional SMC processes, iterated-conditional kernels and particle Gibbs.

Frozen trajectories occupy fixed slots (cSMC, default slot 0 for one path and
slot ``j`` for path ``j``) or sampled distinct slots ``F_s`` (conditional
alpha-SMC). Per step the RNG is consumed as: slot draw (alpha variant only),
ancestor uniforms for the free particles, then proposals for the free
particles. The final selection index is drawn last.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .engines import ParticleSystem, draw_alpha_ancestors
from .errors import (
    DegenerateCatalogueError,
    LineageError,
    NoValidSampleError,
    PosteriorDegenerateError,
    SMCError,
)
from .model import FeynmanKacModel, FiniteModel, ParamPosteriorModel, check_model
from .resampling import AlphaMatrix, AlphaPolicy, alpha_resampling_kernel, categorical_from_uniforms, select_alpha


@dataclass(frozen=True)
class FrozenPath:
    """A conditioned trajectory, optionally with its fixed lineage (cSMC)."""

    trajectory: tuple
    lineage: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        if self.lineage is not None:
            object.__setattr__(self, "lineage", tuple(int(k) for k in self.lineage))


def _as_frozen(frozen, T: int, N: int) -> list[FrozenPath]:
    out = []
    for j, f in enumerate(frozen):
        if not isinstance(f, FrozenPath):
            f = FrozenPath(tuple(f))
        if f.lineage is None:
            f = FrozenPath(f.trajectory, (j,) * T)
        out.append(f)
    i = len(out)
    if i < 1:
        raise SMCError("need at least one frozen path")
    if i > N:
        raise LineageError(f"too many frozen paths: {i} > N={N}")
    for f in out:
        if len(f.trajectory) != T or len(f.lineage) != T:
            raise SMCError(f"frozen trajectory and lineage must have length {T}")
        if any(not 0 <= k < N for k in f.lineage):
            raise LineageError(f"lineage index out of range [0, {N})")
    for s in range(T):
        ks = [f.lineage[s] for f in out]
        if len(set(ks)) != len(ks):
            raise LineageError(f"lineages not distinct at step {s}")
    return out


@lru_cache(maxsize=None)
def distinct_tuples(n: int, i: int) -> tuple:
    """All ordered i-tuples of distinct indices in [0, n)."""
    return tuple(itertools.permutations(range(n), i))


def initial_slot_law(n: int, i: int) -> tuple[tuple, np.ndarray]:
    tuples = distinct_tuples(n, i)
    return tuples, np.full(len(tuples), 1.0 / len(tuples))


def slot_law(alpha: AlphaMatrix, prev: tuple, i: int) -> tuple[tuple, np.ndarray]:
    """Law of F_s given F_{s-1}: proportional to D(f) prod_j alpha[f_j, prev_j]."""
    n = alpha.size
    tuples = distinct_tuples(n, i)
    a = alpha.entries
    cols = [a[:, p] for p in prev]
    probs = np.array([math.prod(cols[j][f[j]] for j in range(i)) for f in tuples])
    total = probs.sum()
    if not (total > 0 and math.isfinite(1.0 / total)):
        raise DegenerateCatalogueError("alpha catalogue degenerate for conditioning")
    return tuples, probs / total


def _place(n: int, slots: Sequence[int], frozen_vals, free_vals) -> np.ndarray:
    free_vals = np.asarray(free_vals)
    frozen_vals = np.asarray(frozen_vals)
    dtype = np.result_type(free_vals, frozen_vals) if free_vals.size else frozen_vals.dtype
    x = np.empty(n, dtype=dtype)
    mask = np.ones(n, dtype=bool)
    mask[list(slots)] = False
    x[list(slots)] = frozen_vals
    x[mask] = free_vals
    return x


def _free_mask(n: int, slots) -> np.ndarray:
    m = np.ones(n, dtype=bool)
    m[list(slots)] = False
    return m


def run_csmc(model: FeynmanKacModel, frozen, N: int, rng: np.random.Generator) -> ParticleSystem:
    """Conditional SIR process with fixed trajectories and lineages."""
    check_model(model)
    T = model.horizon
    paths = _as_frozen(frozen, T, N)
    i = len(paths)
    ys = [p.trajectory for p in paths]
    slots = [tuple(p.lineage[s] for p in paths) for s in range(T)]
    free0 = model.sample_initial(N - i, rng) if N > i else np.empty(0, dtype=np.int64)
    x = _place(N, slots[0], [y[0] for y in ys], free0)
    g = np.asarray(model.potential(0, x), dtype=float)
    particles, ancestors, pre, post = [x], [], [np.ones(N)], [g]
    log_z = 0.0
    for s in range(1, T):
        total = g.sum()
        if not total > 0:
            return ParticleSystem(particles, pre, post, ancestors, slots=slots[:s],
                                  normalizer=0.0, degenerate=True)
        log_z += math.log(total / N)
        free = _free_mask(N, slots[s])
        a = np.empty(N, dtype=np.int64)
        a[list(slots[s])] = slots[s - 1]
        if N > i:
            a[free] = categorical_from_uniforms(g / total, rng.random(N - i))
            moved = model.sample_transition(s, x[a[free]], rng)
        else:
            moved = np.empty(0, dtype=x.dtype)
        x = _place(N, slots[s], [y[s] for y in ys], moved)
        g = np.asarray(model.potential(s, x), dtype=float)
        particles.append(x)
        ancestors.append(a)
        pre.append(np.ones(N))
        post.append(g)
    total = g.sum()
    sys = ParticleSystem(particles, pre, post, ancestors, slots=slots,
                         normalizer=math.exp(log_z) * total / N)
    if total > 0:
        sys.selection = int(categorical_from_uniforms(g / total, rng.random(1))[0])
    else:
        sys.degenerate = True
    return sys


def run_calpha_smc(model: FeynmanKacModel, frozen_trajectories, N: int, policy: AlphaPolicy,
                   zeta: float, rng: np.random.Generator) -> ParticleSystem:
    """Conditional alpha-SMC: frozen values fixed, their slots F_s sampled.

    ``zeta`` is accepted for symmetry with the unconditional sampler; the
    policy's own threshold drives adaptive selection.
    """
    check_model(model)
    T = model.horizon
    ys = [tuple(y.trajectory if isinstance(y, FrozenPath) else y) for y in frozen_trajectories]
    i = len(ys)
    if i not in (1, 2):
        raise SMCError("conditional alpha-SMC supports one or two frozen trajectories")
    if i > N:
        raise LineageError(f"too many frozen paths: {i} > N={N}")
    if policy.n != N:
        raise SMCError(f"policy built for N={policy.n}, run requested N={N}")
    if any(len(y) != T for y in ys):
        raise SMCError(f"frozen trajectories must have length {T}")
    tuples, probs = initial_slot_law(N, i)
    f = tuples[int(categorical_from_uniforms(probs, rng.random(1))[0])]
    slots = [f]
    free0 = model.sample_initial(N - i, rng) if N > i else np.empty(0, dtype=np.int64)
    x = _place(N, f, [y[0] for y in ys], free0)
    W = np.ones(N)
    g = np.asarray(model.potential(0, x), dtype=float)
    particles, ancestors, alphas, pre, post = [x], [], [], [W], [W * g]
    degenerate = False
    for s in range(1, T):
        inc = W * g
        alpha = select_alpha(policy, inc, s - 1)
        W_new, R = alpha_resampling_kernel(alpha, inc)
        tuples, probs = slot_law(alpha, slots[-1], i)
        f = tuples[int(categorical_from_uniforms(probs, rng.random(1))[0])]
        free = _free_mask(N, f)
        if np.any(W_new[free] <= 0):
            degenerate = True
            break
        a = np.empty(N, dtype=np.int64)
        a[list(f)] = slots[-1]
        if N > i:
            if alpha.is_identity:
                a[free] = np.flatnonzero(free)
            else:
                u = rng.random(N - i)
                full_u = np.zeros(N)
                full_u[free] = u
                a[free] = draw_alpha_ancestors(alpha, R, full_u)[free]
            moved = model.sample_transition(s, x[a[free]], rng)
        else:
            moved = np.empty(0, dtype=x.dtype)
        x = _place(N, f, [y[s] for y in ys], moved)
        W = W_new
        g = np.asarray(model.potential(s, x), dtype=float)
        slots.append(f)
        particles.append(x)
        ancestors.append(a)
        alphas.append(alpha)
        pre.append(W)
        post.append(W * g)
    sys = ParticleSystem(particles, pre, post, ancestors, alphas, slots=slots)
    if degenerate:
        sys.degenerate = True
        return sys
    final = W * g
    sys.normalizer = float(final.sum() / N)
    if final.sum() > 0:
        sys.selection = int(categorical_from_uniforms(final / final.sum(), rng.random(1))[0])
    else:
        sys.degenerate = True
    return sys


def _selected_path(sys: ParticleSystem) -> tuple:
    if sys.degenerate or sys.selection is None:
        raise NoValidSampleError("no valid sample: degenerate conditional run")
    return sys.path(sys.selection)


def icsmc_step(model: FeynmanKacModel, y, N: int, rng: np.random.Generator) -> tuple:
    """One move of the iterated conditional SMC kernel from path ``y``."""
    if N == 1:
        return tuple(y)
    if isinstance(model, FiniteModel):
        return _fast_csmc_step(model, tuple(y), N, rng)
    return _selected_path(run_csmc(model, [FrozenPath(tuple(y))], N, rng))


def icalpha_step(model: FeynmanKacModel, y, N: int, policy: AlphaPolicy, zeta: float,
                 rng: np.random.Generator) -> tuple:
    """One move of the iterated conditional alpha-SMC kernel from path ``y``."""
    if N == 1:
        return tuple(y)
    return _selected_path(run_calpha_smc(model, [tuple(y)], N, policy, zeta, rng))


def _fast_csmc_step(model: FiniteModel, y: tuple, N: int, rng: np.random.Generator) -> tuple:
    # Same law and the same RNG consumption as run_csmc with one frozen path
    # in slot 0; avoids building the full ParticleSystem for long chains.
    T = model.horizon
    cdfs = model._cdfs
    x = np.empty(N, dtype=np.int64)
    x[0] = y[0]
    x[1:] = np.minimum(np.searchsorted(cdfs[0], rng.random(N - 1), side="right"), model.state_count - 1)
    hist = [x]
    anc = []
    for s in range(1, T):
        g = model.potentials[s - 1][x]
        a = np.empty(N, dtype=np.int64)
        a[0] = 0
        a[1:] = categorical_from_uniforms(g / g.sum(), rng.random(N - 1))
        u = rng.random(N - 1)
        nx = np.empty(N, dtype=np.int64)
        nx[0] = y[s]
        nx[1:] = (cdfs[s][x[a[1:]]] <= u[:, None]).sum(axis=1)
        x = nx
        hist.append(x)
        anc.append(a)
    g = model.potentials[T - 1][x]
    k = int(categorical_from_uniforms(g / g.sum(), rng.random(1))[0])
    out = [0] * T
    for s in range(T - 1, -1, -1):
        out[s] = int(hist[s][k])
        if s > 0:
            k = int(anc[s - 1][k])
    return tuple(out)


def path_density(model: FiniteModel, y: Sequence[int]) -> float:
    """Unnormalised target density gamma(y) = mu(y_1) prod M prod g."""
    v = model.initial[y[0]] * model.potentials[0][y[0]]
    for s in range(1, len(y)):
        v *= model.transitions[s - 1][y[s - 1], y[s]] * model.potentials[s][y[s]]
    return float(v)


def param_posterior(param_model: ParamPosteriorModel, y) -> np.ndarray:
    """Exact posterior over the grid given path ``y``: prior times gamma_theta(y)."""
    w = np.array([p * path_density(m, y) for p, m in zip(param_model.prior, param_model.models)])
    total = w.sum()
    if not total > 0:
        raise PosteriorDegenerateError("parameter posterior degenerate")
    return w / total


def pg_step(param_model: ParamPosteriorModel, theta: int, y, N: int, rng: np.random.Generator,
            adaptive: Optional[AlphaPolicy] = None, zeta: float = 1.0) -> tuple[int, tuple]:
    """Particle Gibbs move: exact parameter draw, then a conditional path update.

    ``theta`` is an index into the grid. The parameter draw uses one uniform.
    """
    post = param_posterior(param_model, y)
    new_theta = int(categorical_from_uniforms(post, rng.random(1))[0])
    model = param_model.model_for(new_theta)
    if adaptive is None:
        z = icsmc_step(model, y, N, rng)
    else:
        z = icalpha_step(model, y, N, adaptive, zeta, rng)
    return new_theta, z


def run_chain(kernel_step: Callable, initial, k_steps: int, rng: np.random.Generator) -> list:
    """Iterate ``state = kernel_step(state, rng)`` and record every state."""
    if k_steps < 0:
        raise SMCError("k_steps must be >= 0")
    states = [initial]
    state = initial
    for _ in range(k_steps):
        state = kernel_step(state, rng)
        states.append(state)
    return states
