"""Structural causal models over lm-graphs: sampling, interventions, oracles.

Mechanisms are expression trees (constants, variable references, sums,
products, integer powers) feeding either an additive Gaussian or a
Bernoulli-logit node. A shift-affected child carries one base mechanism plus
one alternative mechanism per nonempty subset of its contextual parents; at
sampling time the realized missing subset selects the mechanism, so setting
all indicators to one by intervention makes every label idle.

Noise is drawn from per-(node, block) counter-derived uniform streams, which
makes sampling deterministic in (seed, n, spec), prefix-stable in n, and
chunk-order independent.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from scipy.special import expit, ndtri

from .graph import MISSING, Admg
from .lm import LmGraph
from .recovery import QuerySpec


class SpecError(ValueError):
    pass


# --- expressions -----------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float

    def eval(self, env):
        return self.value

    @property
    def variables(self) -> frozenset[str]:
        return frozenset()

    def render(self) -> str:
        return format(self.value, "g")


@dataclass(frozen=True)
class Var:
    name: str

    def eval(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise SpecError(f"expression references unknown variable {self.name!r}")

    @property
    def variables(self) -> frozenset[str]:
        return frozenset({self.name})

    def render(self) -> str:
        return self.name


@dataclass(frozen=True)
class Add:
    args: tuple

    def __init__(self, *args):
        object.__setattr__(self, "args", tuple(args))

    def eval(self, env):
        total = self.args[0].eval(env)
        for a in self.args[1:]:
            total = total + a.eval(env)
        return total

    @property
    def variables(self) -> frozenset[str]:
        return frozenset().union(*(a.variables for a in self.args))

    def render(self) -> str:
        return "(+ " + " ".join(a.render() for a in self.args) + ")"


@dataclass(frozen=True)
class Mul:
    args: tuple

    def __init__(self, *args):
        object.__setattr__(self, "args", tuple(args))

    def eval(self, env):
        total = self.args[0].eval(env)
        for a in self.args[1:]:
            total = total * a.eval(env)
        return total

    @property
    def variables(self) -> frozenset[str]:
        return frozenset().union(*(a.variables for a in self.args))

    def render(self) -> str:
        return "(* " + " ".join(a.render() for a in self.args) + ")"


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int

    def eval(self, env):
        return self.base.eval(env) ** self.exponent

    @property
    def variables(self) -> frozenset[str]:
        return self.base.variables

    def render(self) -> str:
        return f"(^ {self.base.render()} {self.exponent})"


_EXPR_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def parse_expr(text: str):
    """Parse prefix notation: ``(+ 3 (* 1.8 W) (^ W 2))``."""
    tokens = []
    pos = 0
    while pos < len(text):
        m = _EXPR_TOKEN.match(text, pos)
        if not m:
            break
        tokens.append(m.group(1))
        pos = m.end()

    def read(idx: int):
        if idx >= len(tokens):
            raise SpecError(f"unexpected end of expression: {text!r}")
        tok = tokens[idx]
        if tok == "(":
            op = tokens[idx + 1]
            args = []
            idx += 2
            while tokens[idx] != ")":
                node, idx = read(idx)
                args.append(node)
            idx += 1
            if op == "+":
                return Add(*args), idx
            if op == "*":
                return Mul(*args), idx
            if op == "^":
                if len(args) != 2 or not isinstance(args[1], Const):
                    raise SpecError(f"(^ base k) needs a constant exponent: {text!r}")
                return Pow(args[0], int(args[1].value)), idx
            raise SpecError(f"unknown operator {op!r} in {text!r}")
        try:
            return Const(float(tok)), idx + 1
        except ValueError:
            return Var(tok), idx + 1

    node, idx = read(0)
    if idx != len(tokens):
        raise SpecError(f"trailing tokens in expression: {text!r}")
    return node


# --- mechanisms ----------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """value = mean(parents) + sd * normal noise."""

    mean: object
    sd: float

    kind = "gaussian"

    def draw(self, env, u):
        return self.mean.eval(env) + self.sd * ndtri(u)

    @property
    def variables(self) -> frozenset[str]:
        return self.mean.variables

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.render(), "sd": self.sd}


@dataclass(frozen=True)
class BernoulliLogit:
    """value = 1{u < expit(linear predictor)}."""

    logit: object

    kind = "bernoulli_logit"

    def draw(self, env, u):
        return (u < expit(self.logit.eval(env))).astype(float)

    @property
    def variables(self) -> frozenset[str]:
        return self.logit.variables

    def to_dict(self) -> dict:
        return {"kind": self.kind, "logit": self.logit.render()}


def _mechanism_from_dict(payload: Mapping):
    kind = payload.get("kind")
    if kind == "gaussian":
        return Gaussian(parse_expr(payload["mean"]), float(payload["sd"]))
    if kind == "bernoulli_logit":
        return BernoulliLogit(parse_expr(payload["logit"]))
    raise SpecError(f"unknown mechanism kind {kind!r}")


@dataclass(frozen=True)
class NodeSpec:
    """Base mechanism plus per-missing-subset alternatives for one node."""

    base: object
    shifts: Mapping[frozenset[str], object] = field(default_factory=dict)

    def __init__(self, base, shifts: Mapping[Iterable[str], object] | None = None):
        object.__setattr__(self, "base", base)
        object.__setattr__(
            self,
            "shifts",
            {frozenset(t): m for t, m in (shifts or {}).items()},
        )


@dataclass(frozen=True)
class ScmSpec:
    lm: LmGraph
    mechanisms: Mapping[str, NodeSpec]

    def __post_init__(self):
        self.validate()

    @property
    def graph(self) -> Admg:
        return self.lm.graph

    def contextual_parents(self, node: str) -> frozenset[str]:
        return frozenset(
            x for x, s_x in self.lm.spec.items() if node in s_x
        )

    def validate(self) -> None:
        g = self.lm.graph
        needed = g.substantive | g.indicators
        for node in sorted(needed):
            if node not in self.mechanisms:
                raise SpecError(f"no mechanism for node {node!r}")
        for node, spec in self.mechanisms.items():
            if node not in needed:
                raise SpecError(f"mechanism for non-simulated node {node!r}")
            base_parents = self.lm.base.parents([node])
            if not spec.base.variables <= base_parents:
                raise SpecError(
                    f"base mechanism of {node!r} references non-parents "
                    f"{sorted(spec.base.variables - base_parents)}"
                )
            t_z = self.contextual_parents(node)
            expected = set()
            for size in range(1, len(t_z) + 1):
                expected.update(
                    frozenset(c) for c in combinations(sorted(t_z), size)
                )
            if set(spec.shifts) != expected:
                raise SpecError(
                    f"{node!r} must declare shift mechanisms exactly for the "
                    f"nonempty subsets of its contextual parents {sorted(t_z)}"
                )
            for t, mech in spec.shifts.items():
                allowed = base_parents - t
                if not mech.variables <= allowed:
                    raise SpecError(
                        f"shift mechanism of {node!r} for missing {sorted(t)} "
                        f"references {sorted(mech.variables - allowed)}"
                    )

    # -- serialization --

    def to_dict(self) -> dict:
        payload = {"graph": self.lm.to_dict(), "mechanisms": {}}
        for node in sorted(self.mechanisms):
            spec = self.mechanisms[node]
            entry = spec.base.to_dict()
            if spec.shifts:
                entry["shifts"] = {
                    ",".join(sorted(t)): m.to_dict()
                    for t, m in sorted(spec.shifts.items(), key=lambda kv: sorted(kv[0]))
                }
            payload["mechanisms"][node] = entry
        return payload

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(payload: Mapping) -> "ScmSpec":
        lm = LmGraph.from_dict(payload["graph"])
        mechanisms = {}
        for node, entry in payload["mechanisms"].items():
            base = _mechanism_from_dict(entry)
            shifts = {
                frozenset(t.split(",")): _mechanism_from_dict(m)
                for t, m in entry.get("shifts", {}).items()
            }
            mechanisms[node] = NodeSpec(base, shifts)
        return ScmSpec(lm, mechanisms)

    @staticmethod
    def from_json(text: str) -> "ScmSpec":
        return ScmSpec.from_dict(json.loads(text))


# --- datasets --------------------------------------------------------------------


@dataclass
class Dataset:
    """Tabular sample. Missing-affected variables appear as a masked proxy
    column (``V_obs``, empty where the paired indicator is 0) plus the 0/1
    indicator column; full latent columns are kept only when requested."""

    df: pd.DataFrame
    missing_schema: dict[str, tuple[str, str]]  # var -> (proxy col, indicator col)

    def __len__(self) -> int:
        return len(self.df)

    @property
    def columns(self) -> list[str]:
        return list(self.df.columns)

    def to_csv(self, path) -> None:
        self.df.to_csv(path, index=False)

    @staticmethod
    def from_csv(path) -> "Dataset":
        df = pd.read_csv(path)
        schema = {}
        for col in df.columns:
            if col.endswith("_obs"):
                var = col[: -len("_obs")]
                indicator = f"R_{var}"
                if indicator in df.columns:
                    schema[var] = (col, indicator)
        return Dataset(df, schema)

    def check_proxy_consistency(self) -> None:
        for var, (obs_col, r_col) in self.missing_schema.items():
            observed = self.df[r_col].to_numpy() == 1
            vals = self.df[obs_col].to_numpy()
            if np.isnan(vals[observed]).any():
                raise SpecError(f"{obs_col} missing although {r_col}=1")
            if not np.isnan(vals[~observed]).all():
                raise SpecError(f"{obs_col} present although {r_col}=0")


# --- sampling --------------------------------------------------------------------

_BLOCK = 8192


def _uniforms(seed: int, node_index: int, n: int) -> np.ndarray:
    """Uniform stream for one node, assembled from absolute-indexed blocks so
    chunked/parallel row evaluation reproduces sequential output bit-for-bit."""
    out = np.empty(n)
    for block in range(math.ceil(n / _BLOCK)):
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(node_index, block))
        gen = np.random.Generator(np.random.Philox(seq))
        chunk = gen.random(_BLOCK)
        lo = block * _BLOCK
        hi = min(lo + _BLOCK, n)
        out[lo:hi] = chunk[: hi - lo]
    return out


def _simulate_columns(
    spec: ScmSpec, n: int, seed: int, do: Mapping[str, float]
) -> dict[str, np.ndarray]:
    g = spec.graph
    node_index = {v: i for i, v in enumerate(sorted(g.substantive | g.indicators))}
    values: dict[str, np.ndarray] = {}
    for node in g.topological_order():
        kind = g.nodes[node].kind
        if kind == "proxy":
            continue  # derived during dataset assembly
        if node in do:
            val = float(do[node])
            if kind in ("indicator",) and val not in (0.0, 1.0):
                raise SpecError(f"do({node}={val}): indicator values must be 0 or 1")
            mech = spec.mechanisms[node]
            if isinstance(mech.base, BernoulliLogit) and val not in (0.0, 1.0):
                raise SpecError(f"do({node}={val}): value outside 0/1 support")
            values[node] = np.full(n, val)
            continue
        node_spec = spec.mechanisms[node]
        u = _uniforms(seed, node_index[node], n)
        col = node_spec.base.draw(values, u)
        t_z = sorted(spec.contextual_parents(node))
        if t_z:
            indicator_cols = {
                x: values[g.indicator_of(x)] for x in t_z
            }
            for t, mech in sorted(
                node_spec.shifts.items(), key=lambda kv: sorted(kv[0])
            ):
                mask = np.ones(n, dtype=bool)
                for x in t_z:
                    if x in t:
                        mask &= indicator_cols[x] == 0
                    else:
                        mask &= indicator_cols[x] == 1
                if mask.any():
                    col = np.where(mask, mech.draw(values, u), col)
        values[node] = np.asarray(col, dtype=float)
    return values


def _assemble(spec: ScmSpec, values: dict[str, np.ndarray], keep_latent: bool) -> Dataset:
    g = spec.graph
    columns: dict[str, np.ndarray] = {}
    schema: dict[str, tuple[str, str]] = {}
    for node in g.topological_order():
        kind = g.nodes[node].kind
        if kind == "observed" or kind == "indicator":
            columns[node] = values[node]
        elif kind == MISSING:
            r = g.indicator_of(node)
            proxy_name = g.proxy_of(node) or f"{node}_obs"
            masked = np.where(values[r] == 1, values[node], np.nan)
            columns[proxy_name] = masked
            schema[node] = (proxy_name, r)
            if keep_latent:
                columns[node] = values[node]
    df = pd.DataFrame(columns)
    # indicator columns follow their proxies in the documented header order
    return Dataset(df, schema)


def sample_observational(
    spec: ScmSpec, n: int, seed: int, keep_latent: bool = False
) -> Dataset:
    """Draw n i.i.d. rows by evaluating assignments in topological order."""
    if n < 1:
        raise SpecError("n must be at least 1")
    values = _simulate_columns(spec, n, seed, {})
    return _assemble(spec, values, keep_latent)


def sample_interventional(
    spec: ScmSpec,
    do: Mapping[str, float],
    n: int,
    seed: int,
    keep_latent: bool = False,
) -> Dataset:
    """Sample under a hard intervention; targeted nodes are fixed and
    indicators fixed to one suppress all shift mechanisms."""
    if n < 1:
        raise SpecError("n must be at least 1")
    for node in do:
        if node not in spec.graph.nodes:
            raise SpecError(f"do-target {node!r} not in graph")
    values = _simulate_columns(spec, n, seed, dict(do))
    return _assemble(spec, values, keep_latent)


# --- interventional oracles ---------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    fate: float
    nate: float
    mc_se_fate: float
    mc_se_nate: float
    n_mc: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "fate": self.fate,
            "nate": self.nate,
            "mc_se_fate": self.mc_se_fate,
            "mc_se_nate": self.mc_se_nate,
            "n_mc": self.n_mc,
            "seed": self.seed,
        }


def _mean_diff(spec: ScmSpec, q: QuerySpec, do_hi, do_lo, n, seed):
    hi = _simulate_columns(spec, n, seed, do_hi)[q.outcome]
    lo = _simulate_columns(spec, n, seed, do_lo)[q.outcome]
    diff = hi - lo  # shared noise streams pair the two arms
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n))


def oracle_effects(
    spec: ScmSpec, q: QuerySpec, n_mc: int = 2_000_000, seed: int = 0
) -> OracleResult:
    """Monte-Carlo interventional means of the outcome.

    FATE contrasts do(A=a, all indicators = 1); NATE contrasts do(A=a) alone.
    Arms share noise streams, so the reported standard errors are for the
    paired per-unit differences.
    """
    if n_mc < 10_000:
        raise SpecError("n_mc must be at least 10,000")
    q.validate(spec.graph)
    all_ones = {r: 1.0 for r in spec.graph.indicators}
    fate, se_f = _mean_diff(
        spec,
        q,
        {q.exposure: 1.0, **all_ones},
        {q.exposure: 0.0, **all_ones},
        n_mc,
        seed,
    )
    nate, se_n = _mean_diff(
        spec, q, {q.exposure: 1.0}, {q.exposure: 0.0}, n_mc, seed
    )
    return OracleResult(fate, nate, se_f, se_n, n_mc, seed)
