"""Design formulas, guarded design matrices, and the two nuisance fitters.

Terms are monomials over named columns, written as colon-joined factors with
optional squares: ``"1"``, ``"W"``, ``"W^2"``, ``"A:W"``, ``"R_Y0:A:Y0"``.
A factor naming a missing-affected variable resolves to its masked proxy
column and may only be evaluated on rows where the term's own indicator
factors are already 1: the builder first zeroes the term wherever any
indicator factor is 0 and only then touches the remaining factors. Reading a
masked cell anywhere else is a hard error, which is the audit guaranteeing
estimators never peek at unobserved values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from ..scm import Dataset


class MaskedValueError(ValueError):
    """A formula term touched a masked cell outside its indicator gate."""


class SingularDesign(ValueError):
    pass


class PositivityViolation(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class BootstrapUnstable(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Factor:
    base: str
    power: int = 1

    @staticmethod
    def parse(text: str) -> "Factor":
        if "^" in text:
            base, exp = text.split("^", 1)
            return Factor(base, int(exp))
        return Factor(text, 1)

    def render(self) -> str:
        return self.base if self.power == 1 else f"{self.base}^{self.power}"


@dataclass(frozen=True)
class DesignFormula:
    """An ordered list of monomial terms; ``"1"`` is the intercept."""

    terms: tuple[tuple[Factor, ...], ...]
    names: tuple[str, ...]

    def __init__(self, terms: Sequence[str]):
        parsed = []
        names = []
        seen = set()
        for term in terms:
            name = term.strip()
            if name in seen:
                raise ValueError(f"duplicate term {name!r}")
            seen.add(name)
            names.append(name)
            if name == "1":
                parsed.append(())
            else:
                parsed.append(tuple(Factor.parse(f) for f in name.split(":")))
        object.__setattr__(self, "terms", tuple(parsed))
        object.__setattr__(self, "names", tuple(names))

    def __len__(self) -> int:
        return len(self.terms)

    def columns_used(self) -> frozenset[str]:
        return frozenset(f.base for t in self.terms for f in t)


def _resolve_column(
    df: pd.DataFrame,
    name: str,
    schema: Mapping[str, tuple[str, str]],
    overrides: Mapping[str, np.ndarray],
) -> np.ndarray:
    if name in overrides:
        val = overrides[name]
        if np.ndim(val) == 0:
            return np.full(len(df), float(val))
        return np.asarray(val, dtype=float)
    if name in schema:
        return df[schema[name][0]].to_numpy(dtype=float)
    if name not in df.columns:
        raise KeyError(f"formula references unknown column {name!r}")
    return df[name].to_numpy(dtype=float)


def build_design(
    df: pd.DataFrame,
    formula: DesignFormula,
    schema: Mapping[str, tuple[str, str]] | None = None,
    overrides: Mapping[str, np.ndarray] | None = None,
) -> np.ndarray:
    """Evaluate the formula into an (n, p) matrix with the masking audit."""
    schema = schema or {}
    overrides = overrides or {}
    indicator_cols = {r for (_, r) in schema.values()}
    n = len(df)
    cols = []
    for term, name in zip(formula.terms, formula.names):
        gate = np.ones(n)
        rest: list[Factor] = []
        for factor in term:
            if factor.base in indicator_cols and factor.base not in overrides:
                gate = gate * df[factor.base].to_numpy(dtype=float) ** factor.power
            else:
                rest.append(factor)
        active = gate != 0
        value = gate.copy()
        for factor in rest:
            col = _resolve_column(df, factor.base, schema, overrides)
            piece = col[active] ** factor.power
            if np.isnan(piece).any():
                raise MaskedValueError(
                    f"term {name!r} reads a masked value of {factor.base!r} on "
                    "rows where its indicator gate is open"
                )
            value[active] = value[active] * piece
        value[~active] = 0.0
        cols.append(value)
    return np.column_stack(cols) if cols else np.empty((n, 0))


def _prune(X: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, list[str], list[int]]:
    """Drop all-zero and exactly duplicated columns, keeping first occurrences."""
    keep: list[int] = []
    seen: dict[bytes, int] = {}
    for j in range(X.shape[1]):
        col = X[:, j]
        if not col.any():
            continue
        key = col.tobytes()
        if key in seen:
            continue
        seen[key] = j
        keep.append(j)
    return X[:, keep], [names[j] for j in keep], keep


@dataclass(frozen=True)
class NuisanceFit:
    """A fitted linear-mean or logistic-probability nuisance."""

    kind: str  # "linear" | "logistic"
    formula: DesignFormula
    kept_terms: tuple[str, ...]
    kept_index: tuple[int, ...]
    coefficients: np.ndarray
    iterations: int = 0
    gradient_norm: float = 0.0

    def _design(self, df, schema, overrides) -> np.ndarray:
        X = build_design(df, self.formula, schema, overrides)
        return X[:, list(self.kept_index)]

    def predict(
        self,
        df: pd.DataFrame,
        schema: Mapping[str, tuple[str, str]] | None = None,
        overrides: Mapping[str, np.ndarray] | None = None,
    ) -> np.ndarray:
        eta = self._design(df, schema or {}, overrides or {}) @ self.coefficients
        return expit(eta) if self.kind == "logistic" else eta


def fit_linear(
    df: pd.DataFrame,
    formula: DesignFormula,
    y: np.ndarray,
    schema: Mapping[str, tuple[str, str]] | None = None,
    weights: Optional[np.ndarray] = None,
    overrides: Mapping[str, np.ndarray] | None = None,
) -> NuisanceFit:
    """Exact least squares on the (pruned) design."""
    X = build_design(df, formula, schema, overrides)
    Xp, names, keep = _prune(X, formula.names)
    if Xp.shape[1] == 0:
        raise SingularDesign("no usable columns in design")
    y = np.asarray(y, dtype=float)
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        Xw, yw = Xp * w[:, None], y * w
    else:
        Xw, yw = Xp, y
    coef, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < Xp.shape[1]:
        raise SingularDesign(
            f"design rank {rank} < {Xp.shape[1]} after pruning; terms: {names}"
        )
    return NuisanceFit("linear", formula, tuple(names), tuple(keep), coef)


def fit_logistic(
    df: pd.DataFrame,
    formula: DesignFormula,
    y: np.ndarray,
    schema: Mapping[str, tuple[str, str]] | None = None,
    overrides: Mapping[str, np.ndarray] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NuisanceFit:
    """Logistic regression by iteratively reweighted least squares."""
    X = build_design(df, formula, schema, overrides)
    Xp, names, keep = _prune(X, formula.names)
    if Xp.shape[1] == 0:
        raise SingularDesign("no usable columns in design")
    y = np.asarray(y, dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic outcomes must be in {0, 1}")
    beta = np.zeros(Xp.shape[1])
    grad_norm = np.inf
    for iteration in range(1, max_iter + 1):
        eta = Xp @ beta
        p = expit(eta)
        grad = Xp.T @ (y - p)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            break
        w = np.clip(p * (1.0 - p), 1e-10, None)
        z = eta + (y - p) / w
        sw = np.sqrt(w)
        beta_new, _, rank, _ = np.linalg.lstsq(Xp * sw[:, None], z * sw, rcond=None)
        if rank < Xp.shape[1]:
            raise SingularDesign(
                f"weighted design rank {rank} < {Xp.shape[1]}; terms: {names}"
            )
        if np.allclose(beta_new, beta, rtol=0.0, atol=1e-12):
            beta = beta_new
            eta = Xp @ beta
            grad_norm = float(np.max(np.abs(Xp.T @ (y - expit(eta)))))
            break
        beta = beta_new
    else:
        iteration = max_iter
    if grad_norm > tol:
        warnings.warn(
            f"logistic fit stopped at gradient norm {grad_norm:.3g} after "
            f"{iteration} iterations",
            ConvergenceWarning,
        )
    return NuisanceFit(
        "logistic", formula, tuple(names), tuple(keep), beta, iteration, grad_norm
    )


def dataset_frame(data: Dataset | pd.DataFrame) -> tuple[pd.DataFrame, dict]:
    if isinstance(data, Dataset):
        return data.df, dict(data.missing_schema)
    return data, {}
