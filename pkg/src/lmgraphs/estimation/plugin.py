"""Plug-in evaluation of symbolic estimands on tabular data.

The evaluator walks the estimand tree with sequential regressions:

* a conditional expectation fits a regression of the outcome on the plan's
  term list, using the rows matching the node's indicator assignments, and
  predicts with the treatment placeholder bound;
* an integral over ``vars | given`` with bare given variables fits a
  regression of the inner values on those variables within the conditioning
  subgroup and predicts outward (regression marginalization); with no bare
  given variables it reduces to the subgroup mean;
* pattern weights are empirical frequencies.

Every node only ever evaluates predictions on the rows its parent actually
consumes, so conditioning on an indicator shields masked cells exactly as in
the estimators.

Model families come from a plan mapping stage keys to term lists:
``"Y1|W,Y0"`` for a conditional expectation of Y1 given bare variables
{W, Y0}, and ``"~W"`` for marginalizing regressions onto {W}.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ..estimand import CondExp, Diff, Estimand, Given, IntOver, MixtureSum
from ..scm import Dataset
from .design import DesignFormula, dataset_frame, fit_linear


class PlanError(KeyError):
    pass


def _stage_key(outcome: str, bare_vars: Sequence[str]) -> str:
    return f"{outcome}|{','.join(sorted(bare_vars))}" if bare_vars else outcome


def _marginal_key(bare_vars: Sequence[str]) -> str:
    return "~" + ",".join(sorted(bare_vars))


def _lookup(plan: Mapping[str, Sequence[str]], key: str) -> DesignFormula:
    if key not in plan:
        raise PlanError(
            f"evaluation plan has no entry for stage {key!r}; available: "
            f"{sorted(plan)}"
        )
    return DesignFormula(plan[key])


def _split_given(given: tuple[Given, ...]):
    bare = [c.var for c in given if c.value is None]
    treat = [c for c in given if c.value == "a"]
    fixed = [(c.var, float(c.value)) for c in given if c.value not in (None, "a")]
    return bare, treat, fixed


class _Evaluator:
    """Evaluates nodes on demand; vector results are full-length arrays whose
    entries are only meaningful on the rows the caller requested."""

    def __init__(self, df, schema, plan, exposure):
        self.df = df
        self.schema = schema
        self.plan = plan
        self.exposure = exposure
        self.n = len(df)

    def _subgroup(self, fixed) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        for col, value in fixed:
            mask &= self.df[col].to_numpy(dtype=float) == value
        return mask

    def _as_vector(self, value, rows: np.ndarray) -> np.ndarray:
        if np.ndim(value) == 0:
            out = np.zeros(self.n)
            out[rows] = float(value)
            return out
        return value

    def eval(self, node: Estimand, a_value, rows: np.ndarray):
        if isinstance(node, CondExp):
            bare, treat, fixed = _split_given(node.given)
            if treat and a_value is None:
                raise ValueError("treatment placeholder outside a difference operator")
            if node.outcome in self.schema:
                col = self.df[self.schema[node.outcome][0]].to_numpy(dtype=float)
            else:
                col = self.df[node.outcome].to_numpy(dtype=float)
            rows_fit = self._subgroup(fixed) & ~np.isnan(col)
            if not rows_fit.any():
                raise ValueError(f"no rows satisfy {node.given!r}")
            formula = _lookup(self.plan, _stage_key(node.outcome, bare))
            fit = fit_linear(self.df[rows_fit], formula, col[rows_fit], self.schema)
            overrides = {colname: value for colname, value in fixed}
            if treat:
                overrides[self.exposure] = float(a_value)
            pred = np.zeros(self.n)
            pred[rows] = fit.predict(self.df[rows], self.schema, overrides)
            return pred
        if isinstance(node, Diff):
            hi = self.eval(node.body, 1.0, rows)
            lo = self.eval(node.body, 0.0, rows)
            return self._as_vector(hi, rows) - self._as_vector(lo, rows)
        if isinstance(node, IntOver):
            bare, _, fixed = _split_given(node.given)
            mask = self._subgroup(fixed)
            if not mask.any():
                raise ValueError(f"empty conditioning subgroup for {node.given!r}")
            inner = self._as_vector(self.eval(node.body, a_value, mask), mask)
            if not bare:
                return float(inner[mask].mean())
            formula = _lookup(self.plan, _marginal_key(bare))
            fit = fit_linear(self.df[mask], formula, inner[mask], self.schema)
            pred = np.zeros(self.n)
            pred[rows] = fit.predict(self.df[rows], self.schema)
            return pred
        if isinstance(node, MixtureSum):
            total = 0.0
            for weight, body in node.terms:
                _, _, fixed = _split_given(weight)
                freq = float(self._subgroup(fixed).mean())
                value = self.eval(body, a_value, rows)
                if np.ndim(value):
                    value = float(np.mean(value[rows]))
                total += freq * float(value)
            return total
        raise TypeError(f"not an estimand node: {node!r}")


def evaluate_estimand(
    estimand: Estimand,
    data: Dataset | pd.DataFrame,
    plan: Mapping[str, Sequence[str]],
    exposure: str = "A",
) -> float:
    df, schema = dataset_frame(data)
    rows = np.ones(len(df), dtype=bool)
    value = _Evaluator(df, schema, plan, exposure).eval(estimand, None, rows)
    if np.ndim(value):
        return float(np.mean(value))
    return float(value)
