"""Feynman-Kac models: proposal kernels, potentials and concrete finite models.

Time steps are 0-based throughout the code. A model with horizon ``T`` has
steps ``0..T-1``; ``potential(s, x)`` is the potential applied at step ``s``
and ``sample_transition(s, x, rng)`` moves particles from step ``s-1`` to
step ``s`` (so ``s >= 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import HorizonExceededError, InvalidModelError

ROW_TOL = 1e-12


class FeynmanKacModel:
    """Sampler-plus-density contract for a Feynman-Kac model.

    Subclasses provide the horizon, the initial proposal, the transition
    kernels and the potentials. Everything works on numpy arrays of particle
    states so that engines can vectorise over particles.
    """

    horizon: int

    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, s: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def initial_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transition_density(self, s: int, x_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def potential(self, s: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_finite(self) -> bool:
        return False


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _categorical_rows(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # index of the first cdf entry strictly above u
    return (cdf_rows <= u[:, None]).sum(axis=1)


@dataclass(frozen=True, eq=False)
class FiniteModel(FeynmanKacModel):
    """Finite-state model with states ``0..S-1``.

    ``transitions[s-1]`` is the row-stochastic matrix used to move from step
    ``s-1`` to step ``s``; ``potentials[s]`` is the potential vector at step
    ``s``. Construction never raises on invalid numbers; use
    :func:`validate_model` to inspect violations.
    """

    initial: np.ndarray
    transitions: tuple
    potentials: tuple
    _cdfs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "initial", _frozen(self.initial))
        object.__setattr__(self, "transitions", tuple(_frozen(m) for m in self.transitions))
        object.__setattr__(self, "potentials", tuple(_frozen(g) for g in self.potentials))
        cdfs = [np.cumsum(self.initial)]
        cdfs += [np.cumsum(m, axis=-1) for m in self.transitions]
        for c in cdfs:
            # normalise so the last entry is exactly 1 (guards against u >= sum)
            last = c[..., -1:]
            np.divide(c, np.where(last > 0, last, 1.0), out=c)
            c.setflags(write=False)
        object.__setattr__(self, "_cdfs", tuple(cdfs))

    @classmethod
    def shared(cls, initial, transition, potential, horizon: int) -> "FiniteModel":
        """Time-homogeneous shorthand: one transition and one potential vector."""
        return cls(initial, [transition] * (horizon - 1), [potential] * horizon)

    @property
    def state_count(self) -> int:
        return int(self.initial.shape[0])

    @property
    def horizon(self) -> int:
        return len(self.potentials)

    @property
    def is_finite(self) -> bool:
        return True

    def truncated(self, horizon: int) -> "FiniteModel":
        """The same model restricted to its first ``horizon`` steps."""
        if not 1 <= horizon <= self.horizon:
            raise HorizonExceededError(f"horizon exceeded: {horizon} > {self.horizon}")
        return FiniteModel(self.initial, self.transitions[: horizon - 1], self.potentials[:horizon])

    def sample_initial(self, n, rng):
        u = rng.random(n)
        return np.minimum(np.searchsorted(self._cdfs[0], u, side="right"), self.state_count - 1)

    def sample_transition(self, s, x, rng):
        x = np.asarray(x, dtype=np.int64)
        u = rng.random(x.shape[0])
        return _categorical_rows(self._cdfs[s][x], u)

    def initial_density(self, x):
        return self.initial[np.asarray(x, dtype=np.int64)]

    def transition_density(self, s, x_prev, x):
        return self.transitions[s - 1][np.asarray(x_prev, dtype=np.int64), np.asarray(x, dtype=np.int64)]

    def potential(self, s, x):
        return self.potentials[s][np.asarray(x, dtype=np.int64)]


@dataclass(frozen=True, eq=False)
class LinearGaussianModel(FeynmanKacModel):
    """Scalar AR(1) proposal with Gaussian observation potentials.

    ``x_0 ~ N(0, init_sd^2)``, ``x_s = phi * x_{s-1} + N(0, sd^2)`` and
    ``g_s(x) = exp(-(obs[s] - x)^2 / (2 obs_sd^2))``. Only Monte Carlo
    checks apply to this model.
    """

    observations: tuple
    phi: float = 0.9
    sd: float = 1.0
    init_sd: float = 1.0
    obs_sd: float = 1.0

    @property
    def horizon(self) -> int:
        return len(self.observations)

    def sample_initial(self, n, rng):
        return self.init_sd * rng.standard_normal(n)

    def sample_transition(self, s, x, rng):
        return self.phi * np.asarray(x, dtype=float) + self.sd * rng.standard_normal(len(x))

    def initial_density(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x / self.init_sd) ** 2) / (self.init_sd * math.sqrt(2 * math.pi))

    def transition_density(self, s, x_prev, x):
        z = (np.asarray(x, dtype=float) - self.phi * np.asarray(x_prev, dtype=float)) / self.sd
        return np.exp(-0.5 * z**2) / (self.sd * math.sqrt(2 * math.pi))

    def potential(self, s, x):
        z = (self.observations[s] - np.asarray(x, dtype=float)) / self.obs_sd
        return np.exp(-0.5 * z**2)


@dataclass(frozen=True, eq=False)
class ParamPosteriorModel:
    """A finite parameter grid with prior weights and one FiniteModel per value."""

    param_grid: tuple
    prior: np.ndarray
    models: tuple

    def __post_init__(self):
        object.__setattr__(self, "param_grid", tuple(self.param_grid))
        object.__setattr__(self, "prior", _frozen(self.prior))
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.param_grid) != len(self.models) or len(self.prior) != len(self.models):
            raise InvalidModelError("param grid, prior and models must have equal length")

    def model_for(self, index: int) -> FiniteModel:
        return self.models[index]

    def violations(self) -> list[str]:
        out = []
        if np.any(self.prior < 0):
            out.append("prior negative entries")
        if abs(math.fsum(self.prior) - 1.0) > ROW_TOL:
            out.append("prior not normalized")
        shapes = {(m.state_count, m.horizon) for m in self.models}
        if len(shapes) > 1:
            out.append("models do not share state count and horizon")
        for k, m in enumerate(self.models):
            out += [f"models[{k}]: {v}" for v in validate_model(m)]
        return out


def validate_model(model) -> list[str]:
    """Return the list of invariant violations; empty means valid."""
    if isinstance(model, ParamPosteriorModel):
        return model.violations()
    if isinstance(model, FiniteModel):
        return _finite_violations(model)
    out = []
    horizon = getattr(model, "horizon", 0)
    if not isinstance(horizon, int) or horizon < 1:
        return ["horizon not a positive integer"]
    # spot-check potentials on a deterministic batch of proposal draws
    rng = np.random.default_rng(0)
    x = model.sample_initial(64, rng)
    for s in range(horizon):
        if s > 0:
            x = model.sample_transition(s, x, rng)
        g = np.asarray(model.potential(s, x), dtype=float)
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            out.append(f"potentials[{s}] negative or non-finite entries")
    return out


def _finite_violations(model: FiniteModel) -> list[str]:
    out = []
    S = model.state_count
    mu = model.initial
    if mu.ndim != 1 or S < 1:
        return ["initial not a nonempty vector"]
    if np.any(mu < 0):
        out.append("initial negative entries")
    if abs(math.fsum(mu) - 1.0) > ROW_TOL:
        out.append("initial not normalized")
    if len(model.potentials) < 1:
        out.append("potentials empty")
        return out
    if len(model.transitions) != len(model.potentials) - 1:
        out.append("transitions count must equal horizon - 1")
    for s, m in enumerate(model.transitions):
        if m.shape != (S, S):
            out.append(f"transitions[{s}] shape {m.shape} != ({S}, {S})")
            continue
        if np.any(m < 0):
            out.append(f"transitions[{s}] negative entries")
        for r in range(S):
            if abs(math.fsum(m[r]) - 1.0) > ROW_TOL:
                out.append(f"transitions[{s}] row {r} not normalized")
    for s, g in enumerate(model.potentials):
        if g.shape != (S,):
            out.append(f"potentials[{s}] length {g.shape} != {S}")
        elif np.any(g < 0) or not np.all(np.isfinite(g)):
            out.append(f"potentials[{s}] negative or non-finite entries")
    if not out and _forward_mass(model) <= 0:
        out.append("target undefined")
    return out


def _forward_mass(model: FiniteModel) -> float:
    a = model.initial * model.potentials[0]
    for s in range(1, model.horizon):
        a = (a @ model.transitions[s - 1]) * model.potentials[s]
    return float(a.sum())


def check_model(model) -> None:
    """Raise :class:`InvalidModelError` listing violations, if any."""
    problems = validate_model(model)
    if problems:
        raise InvalidModelError("invalid model: " + "; ".join(problems))


def product_potential(model: FeynmanKacModel, path: Sequence) -> float:
    """g_{1:s}(path) = prod of potentials along ``path``; 1 for an empty path."""
    path = list(path)
    if len(path) > model.horizon:
        raise HorizonExceededError(f"horizon exceeded: path length {len(path)} > {model.horizon}")
    value = 1.0
    for s, x in enumerate(path):
        value *= float(np.asarray(model.potential(s, np.asarray([x])))[0])
    return value


def random_finite_model(rng: np.random.Generator, states: int, horizon: int,
                        positive: bool = True, low: float = 0.1) -> FiniteModel:
    """Random model with Dirichlet rows and uniform potentials (used in tests)."""
    mu = rng.dirichlet(np.ones(states))
    trans = [rng.dirichlet(np.ones(states), size=states) for _ in range(horizon - 1)]
    lo = low if positive else 0.0
    pots = [rng.uniform(lo, 2.0, size=states) for _ in range(horizon)]
    return FiniteModel(mu, trans, pots)


CANONICAL_TRANSITION = ((0.8, 0.2), (0.3, 0.7))
CANONICAL_POTENTIALS = ((1.0, 0.25), (0.5, 1.5), (2.0, 0.4))


def canonical_two_state(horizon: int = 3) -> FiniteModel:
    """The fixed two-state benchmark instance used by experiments and tests."""
    if not 1 <= horizon <= len(CANONICAL_POTENTIALS):
        raise HorizonExceededError(f"horizon exceeded: {horizon} > {len(CANONICAL_POTENTIALS)}")
    return FiniteModel((0.5, 0.5), [CANONICAL_TRANSITION] * (horizon - 1),
                       CANONICAL_POTENTIALS[:horizon])
