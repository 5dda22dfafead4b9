"""Experiment configuration: TOML text to a validated :class:`ExperimentConfig`.

Unknown keys are errors. Diagnostics carry the line number of the offending
key when it can be located in the source text.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from ..engines import TARGET_KINDS
from ..errors import ConfigError
from ..model import FiniteModel, ParamPosteriorModel, canonical_two_state, validate_model
from ..weights import as_order

EXPERIMENT_KINDS = {
    "kl_vs_n": "exact or Monte Carlo KL(pi, expected estimator) against N, with the KL bound",
    "bound_check": "KL against every declared bound for all four target kinds",
    "ess_suite": "p-ESS bounds, monotonicity, sandwich and p->1 limit on random weights",
    "normalizer_check": "conditional expected normalizer: enumeration versus closed form",
    "icsmc_minorization": "exact iterated-conditional kernels versus the minorization constant",
    "tv_decay": "max_y TV(delta_y P^k, pi) for k = 1..k_max",
    "pg_ergodicity": "particle Gibbs: exact operator and sampled chains on a parameter grid",
}

ALGORITHMS = ("sis", "sir", "alpha")
VARIANTS = ("icsmc", "icalpha")
POLICIES = ("identity", "uniform", "apf", "fixed")
MODES = ("auto", "exact", "mc")
PRESETS = ("canonical_two_state",)

_SCHEMA = {
    "": {"seed", "output", "timing", "experiment", "model", "smc", "chain", "param", "ess"},
    "experiment": {"kind", "model_id"},
    "model": {"preset", "states", "horizon", "initial", "transitions", "shared_transition",
              "potentials", "shared_potential"},
    "smc": {"algorithms", "algorithm", "policy", "zeta", "ess_order", "N_list", "replications",
            "targets", "target", "assumptions", "mode", "exact_limit", "fixed_matrices", "frozen_counts"},
    "chain": {"k_max", "chain_count", "steps", "variants"},
    "param": {"grid"},
    "param.grid": {"value", "prior", "potentials", "shared_potential", "transitions", "shared_transition"},
    "ess": {"vectors", "N_min", "N_max"},
}


@dataclass
class ExperimentConfig:
    kind: str
    model_id: str
    seed: int
    model: Optional[FiniteModel] = None
    param_model: Optional[ParamPosteriorModel] = None
    algorithms: tuple = ("sis", "sir")
    policy: str = "apf"
    zeta: float = 0.5
    ess_order: object = math.inf
    fixed_matrices: tuple = ()
    N_list: tuple = (1, 2, 3, 4)
    replications: int = 1000
    targets: tuple = ("updated_joint",)
    assumptions: tuple = ()
    mode: str = "auto"
    exact_limit: int = 2_000_000
    frozen_counts: tuple = (1,)
    k_max: int = 20
    chain_count: int = 1
    steps: int = 10_000
    variants: tuple = ("icsmc", "icalpha")
    ess_vectors: int = 1000
    ess_N_min: int = 2
    ess_N_max: int = 32
    output: Optional[str] = None
    timing: bool = False


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    """1-based line of ``key =`` inside ``[section]`` (best effort)."""
    current = ""
    pat = re.compile(r"^\s*(\"?)" + re.escape(key) + r"\1\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?", line)
        if m:
            current = m.group(1)
            continue
        if current == section and pat.match(line):
            return no
    return None


def _line_of_section(text: str, section: str) -> Optional[int]:
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(r"^\s*\[\[?\s*" + re.escape(section) + r"\s*\]\]?", line):
            return no
    return None


class _Diag:
    def __init__(self, text: str):
        self.text = text
        self.items: list[str] = []

    def add(self, section: str, key: Optional[str], msg: str):
        line = _line_of(self.text, section, key) if key else _line_of_section(self.text, section)
        where = f"line {line}: " if line else ""
        name = f"{section}.{key}" if section and key else (key or section or "config")
        self.items.append(f"{where}{name}: {msg}")


def _check_keys(diag: _Diag, table: dict, section: str):
    allowed = _SCHEMA[section]
    for key in table:
        if key not in allowed:
            diag.add(section, key, f"unknown key {key!r}")


def _num_list(value, depth: int):
    """Validate a nested numeric list of the given depth."""
    if depth == 0:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected a number")
        return float(value)
    if not isinstance(value, list):
        raise TypeError(f"expected a {depth}-level nested array")
    return [_num_list(v, depth - 1) for v in value]


def _build_model(diag: _Diag, table: dict, section: str, base: Optional[dict] = None) -> Optional[FiniteModel]:
    merged = dict(base or {})
    # an override replaces its shorthand counterpart from the base table
    for a, b in (("potentials", "shared_potential"), ("transitions", "shared_transition")):
        if a in table:
            merged.pop(b, None)
        if b in table:
            merged.pop(a, None)
    merged.update(table)
    if "preset" in merged:
        if merged["preset"] not in PRESETS:
            diag.add(section, "preset", f"unknown preset {merged['preset']!r}; known: {PRESETS}")
            return None
        del merged["preset"]
        try:
            preset = canonical_two_state(merged.get("horizon", 3))
        except (ValueError, TypeError) as exc:
            diag.add(section, "horizon", str(exc))
            return None
        merged.setdefault("horizon", preset.horizon)
        merged.setdefault("initial", preset.initial.tolist())
        if "shared_transition" not in merged:
            merged.setdefault("transitions", [m.tolist() for m in preset.transitions])
        if "shared_potential" not in merged:
            merged.setdefault("potentials", [g.tolist() for g in preset.potentials])
    try:
        horizon = merged.get("horizon")
        if not isinstance(horizon, int) or horizon < 1:
            diag.add(section, "horizon", "required positive integer")
            return None
        initial = _num_list(merged.get("initial"), 1)
        if "transitions" in merged and "shared_transition" in merged:
            diag.add(section, "transitions", "give either transitions or shared_transition, not both")
            return None
        if "shared_transition" in merged:
            trans = [_num_list(merged["shared_transition"], 2)] * (horizon - 1)
        else:
            trans = _num_list(merged.get("transitions", []), 3)
        if "potentials" in merged and "shared_potential" in merged:
            diag.add(section, "potentials", "give either potentials or shared_potential, not both")
            return None
        if "shared_potential" in merged:
            pots = [_num_list(merged["shared_potential"], 1)] * horizon
        else:
            pots = _num_list(merged.get("potentials"), 2)
    except TypeError as exc:
        diag.add(section, None, str(exc))
        return None
    if len(pots) != horizon:
        diag.add(section, "potentials", f"expected {horizon} potential vectors, got {len(pots)}")
        return None
    if len(trans) != horizon - 1:
        diag.add(section, "transitions", f"expected {horizon - 1} transition matrices, got {len(trans)}")
        return None
    states = merged.get("states", len(initial))
    if states != len(initial):
        diag.add(section, "states", f"states={states} but initial has {len(initial)} entries")
        return None
    try:
        model = FiniteModel(initial, trans, pots)
    except ValueError as exc:
        diag.add(section, None, f"malformed arrays: {exc}")
        return None
    for v in validate_model(model):
        diag.add(section, None, v)
    return model


def _get(diag, table, section, key, kind, default, check=None, msg=""):
    if key not in table:
        return default
    v = table[key]
    ok = isinstance(v, kind) and not (kind in (int, (int, float)) and isinstance(v, bool))
    if ok and check is not None:
        ok = check(v)
    if not ok:
        diag.add(section, key, msg or f"invalid value {v!r}")
        return default
    return v


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` with every diagnostic found."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    diag = _Diag(text)
    _check_keys(diag, data, "")
    for sec in ("experiment", "model", "smc", "chain", "param", "ess"):
        if sec in data:
            if not isinstance(data[sec], dict):
                diag.add("", sec, "must be a table")
                data[sec] = {}
            else:
                _check_keys(diag, data[sec], sec)

    exp = data.get("experiment")
    if exp is None:
        diag.add("", "experiment", "missing required section 'experiment'")
        raise ConfigError(diag.items)
    kind = exp.get("kind")
    if kind not in EXPERIMENT_KINDS:
        diag.add("experiment", "kind", f"unknown experiment kind {kind!r}; known: {sorted(EXPERIMENT_KINDS)}")
        raise ConfigError(diag.items)
    cfg = ExperimentConfig(kind=kind, model_id=str(exp.get("model_id", "model")), seed=0)

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        diag.add("", "seed", "seed must be an integer in [0, 2^64)")
    else:
        cfg.seed = seed
    cfg.output = _get(diag, data, "", "output", str, None)
    cfg.timing = _get(diag, data, "", "timing", bool, False)

    needs_model = kind not in ("ess_suite", "pg_ergodicity")
    if "model" in data and kind != "pg_ergodicity":
        cfg.model = _build_model(diag, data["model"], "model")
    elif needs_model:
        diag.add("", "model", "missing required section 'model'")

    smc = data.get("smc", {})
    algs = smc.get("algorithms", [smc["algorithm"]] if "algorithm" in smc else None)
    if algs is not None:
        valid = ALGORITHMS + ("csmc", "calpha")
        if not isinstance(algs, list) or not algs or any(a not in valid for a in algs):
            diag.add("smc", "algorithms" if "algorithms" in smc else "algorithm",
                     f"algorithms must be a nonempty list drawn from {valid}")
        else:
            cfg.algorithms = tuple(algs)
    elif kind == "normalizer_check":
        cfg.algorithms = ("csmc", "calpha")
    cfg.policy = _get(diag, smc, "smc", "policy", str, cfg.policy, lambda v: v in POLICIES,
                      f"policy must be one of {POLICIES}")
    cfg.zeta = float(_get(diag, smc, "smc", "zeta", (int, float), cfg.zeta, lambda v: 0 < v <= 1,
                          "zeta must lie in (0, 1]"))
    if "ess_order" in smc:
        try:
            cfg.ess_order = as_order(smc["ess_order"])
        except (ValueError, TypeError):
            diag.add("smc", "ess_order", "ess_order must be a number >= 1 or \"inf\"")
    else:
        cfg.ess_order = as_order(math.inf)
    if "fixed_matrices" in smc:
        try:
            cfg.fixed_matrices = tuple(_num_list(smc["fixed_matrices"], 3))
        except TypeError as exc:
            diag.add("smc", "fixed_matrices", str(exc))
    if cfg.policy == "fixed" and not cfg.fixed_matrices:
        diag.add("smc", "policy", "fixed policy requires smc.fixed_matrices")
    if "N_list" in smc:
        nl = smc["N_list"]
        if not isinstance(nl, list) or not nl or any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in nl):
            diag.add("smc", "N_list", "N_list must be a nonempty list of positive integers")
        elif any(b <= a for a, b in zip(nl, nl[1:])):
            diag.add("smc", "N_list", "N_list not increasing")
        else:
            cfg.N_list = tuple(nl)
    elif needs_model and kind != "ess_suite":
        diag.add("smc", None, "missing required key 'N_list'")
    cfg.replications = _get(diag, smc, "smc", "replications", int, cfg.replications, lambda v: v >= 1,
                            "replications must be >= 1")
    targets = smc.get("targets", [smc["target"]] if "target" in smc else None)
    if targets is not None:
        if not isinstance(targets, list) or not targets or any(t not in TARGET_KINDS for t in targets):
            diag.add("smc", "targets" if "targets" in smc else "target",
                     f"targets must be drawn from {TARGET_KINDS}")
        else:
            cfg.targets = tuple(targets)
    elif kind == "bound_check":
        cfg.targets = TARGET_KINDS
    if "assumptions" in smc:
        a = smc["assumptions"]
        known = ("bounded_potentials", "beta")
        if not isinstance(a, list) or any(x not in known for x in a):
            diag.add("smc", "assumptions", f"assumptions must be drawn from {known}")
        else:
            cfg.assumptions = tuple(a)
    cfg.mode = _get(diag, smc, "smc", "mode", str, cfg.mode, lambda v: v in MODES, f"mode must be one of {MODES}")
    cfg.exact_limit = _get(diag, smc, "smc", "exact_limit", int, cfg.exact_limit, lambda v: v >= 1)
    if "frozen_counts" in smc:
        fc = smc["frozen_counts"]
        if not isinstance(fc, list) or not fc or any(x not in (1, 2) for x in fc):
            diag.add("smc", "frozen_counts", "frozen_counts must be a nonempty list drawn from (1, 2)")
        else:
            cfg.frozen_counts = tuple(fc)

    chain = data.get("chain", {})
    cfg.k_max = _get(diag, chain, "chain", "k_max", int, cfg.k_max, lambda v: v >= 0)
    cfg.chain_count = _get(diag, chain, "chain", "chain_count", int, cfg.chain_count, lambda v: v >= 1)
    cfg.steps = _get(diag, chain, "chain", "steps", int, cfg.steps, lambda v: v >= 0)
    if "variants" in chain:
        v = chain["variants"]
        if not isinstance(v, list) or not v or any(x not in VARIANTS for x in v):
            diag.add("chain", "variants", f"variants must be drawn from {VARIANTS}")
        else:
            cfg.variants = tuple(v)

    ess = data.get("ess", {})
    cfg.ess_vectors = _get(diag, ess, "ess", "vectors", int, cfg.ess_vectors, lambda v: v >= 1)
    cfg.ess_N_min = _get(diag, ess, "ess", "N_min", int, cfg.ess_N_min, lambda v: v >= 1)
    cfg.ess_N_max = _get(diag, ess, "ess", "N_max", int, cfg.ess_N_max, lambda v: v >= cfg.ess_N_min)

    if kind == "pg_ergodicity":
        cfg.param_model = _build_param(diag, data, cfg)
    if kind in ("icsmc_minorization", "tv_decay") and any(n < 2 for n in cfg.N_list):
        diag.add("smc", "N_list", "kernel experiments need N >= 2")
    if diag.items:
        raise ConfigError(diag.items)
    return cfg


def _build_param(diag: _Diag, data: dict, cfg: ExperimentConfig) -> Optional[ParamPosteriorModel]:
    param = data.get("param")
    if not param or "grid" not in param:
        diag.add("", "param", "pg_ergodicity requires [[param.grid]] entries")
        return None
    grid = param["grid"]
    if not isinstance(grid, list) or not grid:
        diag.add("param", "grid", "param.grid must be a nonempty array of tables")
        return None
    base = data.get("model", {})
    values, prior, models = [], [], []
    for k, entry in enumerate(grid):
        _check_keys(diag, entry, "param.grid")
        override = {key: entry[key] for key in entry if key not in ("value", "prior")}
        m = _build_model(diag, override, "param.grid", base)
        values.append(entry.get("value", k))
        p = entry.get("prior")
        if isinstance(p, bool) or not isinstance(p, (int, float)) or p < 0:
            diag.add("param.grid", "prior", "each grid entry needs a nonnegative prior")
            p = 0.0
        prior.append(float(p))
        models.append(m)
    if any(m is None for m in models):
        return None
    try:
        pm = ParamPosteriorModel(values, prior, models)
    except ValueError as exc:
        diag.add("param", "grid", str(exc))
        return None
    for v in pm.violations():
        diag.add("param", "grid", v)
    return pm


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
