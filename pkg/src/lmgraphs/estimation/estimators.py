"""The five benchmark estimators.

* ``dr_nate`` (DR.N): one-step corrected estimator of the natural effect with
  context-pooled nuisances. The outcome mean and the propensity logit each
  carry a base block plus an indicator-gated block, so rows with a masked
  covariate never evaluate terms referencing it.
* ``dr_fate`` (DR.F): doubly-robust estimator of the full effect built from
  one-step corrected pseudo-outcomes on the complete rows, a meta-regression
  of those pseudo-outcomes on the always-observed covariates, and an
  inverse-missingness-probability correction. The default correction term is
  the as-published orientation (tau-hat minus the plug-in contrast); the
  conventional pseudo-outcome residual is available behind a flag.
* ``mim_estimate``: missingness-indicator-method outcome regression with
  g-computation over the empirical covariate distribution.
* ``mi_estimate``: conditional-Gaussian multiple imputation with per-dataset
  AIPW and Rubin pooling.
* ``cc_estimate``: AIPW on the complete cases only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from ..scm import Dataset
from .design import (
    BootstrapUnstable,
    DesignFormula,
    InsufficientData,
    NuisanceFit,
    PositivityViolation,
    dataset_frame,
    fit_linear,
    fit_logistic,
)


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    point: float
    se: Optional[float]
    ci95: Optional[tuple[float, float]]
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "point": self.point,
            "se": self.se,
            "ci95": list(self.ci95) if self.ci95 else None,
            "n_used": self.n_used,
            "diagnostics": self.diagnostics,
        }


def _report(name, contrib=None, point=None, se=None, n=0, diagnostics=None):
    if contrib is not None:
        point = float(np.mean(contrib))
        se = float(np.std(contrib, ddof=1) / np.sqrt(len(contrib)))
        n = len(contrib)
    ci = (point - 1.96 * se, point + 1.96 * se) if se is not None else None
    return EstimateReport(name, point, se, ci, n, diagnostics or {})


@dataclass(frozen=True)
class EstimatorConfig:
    """Formulas and knobs shared by the estimator battery. Term lists use the
    design-formula syntax; context blocks are indicator-gated terms."""

    exposure: str = "A"
    outcome: str = "Y1"
    outcome_terms: Sequence[str] = ()
    propensity_terms: Sequence[str] = ()
    q1_terms: Sequence[str] = ()
    pi1_terms: Sequence[str] = ()
    tau_terms: Sequence[str] = ()
    missingness_terms: Sequence[str] = ()
    mim_terms: Sequence[str] = ()
    imputation_terms: Sequence[str] = ()
    aipw_outcome_terms: Sequence[str] = ()
    aipw_propensity_terms: Sequence[str] = ()
    trim: float = 0.01
    n_imputations: int = 20
    bootstrap_b: int = 200
    conventional_drf_correction: bool = False
    cross_fit: bool = False
    seed: int = 7

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            out[key] = list(value) if isinstance(value, (tuple, list)) else value
        return out

    @staticmethod
    def from_dict(payload: Mapping) -> "EstimatorConfig":
        return EstimatorConfig(**payload)

    def with_overrides(self, **kwargs) -> "EstimatorConfig":
        return replace(self, **kwargs)


def _clip_propensity(p: np.ndarray, trim: float, lower_only: bool = False):
    lo, hi = trim, 1.0 if lower_only else 1.0 - trim
    outside = (p < lo) | (p > hi)
    n_out = int(outside.sum())
    if n_out > 0.5 * len(p):
        raise PositivityViolation(
            f"{n_out} of {len(p)} propensities outside [{lo}, {hi}]"
        )
    return np.clip(p, lo, hi), n_out


def _context_counts(df: pd.DataFrame, schema: Mapping) -> dict[str, int]:
    counts: dict[str, int] = {}
    indicators = sorted(r for (_, r) in schema.values())
    if not indicators:
        return counts
    key = df[indicators].astype(int).astype(str).agg("".join, axis=1)
    for pattern, size in key.value_counts().items():
        counts["".join(indicators) + "=" + pattern] = int(size)
    return counts


def _folds(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold = np.zeros(n, dtype=int)
    fold[perm[n // 2 :]] = 1
    return fold


def _fit_predict(
    fitter, df, terms, y, schema, folds, predict_overrides_list
) -> list[np.ndarray]:
    """Fit on each complementary fold (or once, when folds is None) and return
    stitched predictions for each override set."""
    formula = DesignFormula(terms)
    outs = [np.empty(len(df)) for _ in predict_overrides_list]
    if folds is None:
        fit = fitter(df, formula, y, schema)
        for out, overrides in zip(outs, predict_overrides_list):
            out[:] = fit.predict(df, schema, overrides)
        return outs
    for f in (0, 1):
        train = folds != f
        test = folds == f
        fit = fitter(df[train], formula, y[train], schema)
        for out, overrides in zip(outs, predict_overrides_list):
            sliced = {
                k: (v if np.ndim(v) == 0 else np.asarray(v)[test])
                for k, v in overrides.items()
            }
            out[test] = fit.predict(df[test], schema, sliced)
    return outs


def dr_nate(data: Dataset | pd.DataFrame, config: EstimatorConfig) -> EstimateReport:
    """One-step corrected NATE estimator with context-pooled nuisances.

    Per row: the treatment contrast of the context-specific outcome mean plus
    the residual weighted by (A - pi)/(pi (1 - pi)); the standard error is the
    sample standard deviation of the per-row contributions over sqrt(n).
    """
    df, schema = dataset_frame(data)
    a = df[config.exposure].to_numpy(dtype=float)
    y = df[config.outcome].to_numpy(dtype=float)
    folds = _folds(len(df), config.seed) if config.cross_fit else None

    q1, q0, qa = _fit_predict(
        fit_linear,
        df,
        config.outcome_terms,
        y,
        schema,
        folds,
        [{config.exposure: 1.0}, {config.exposure: 0.0}, {}],
    )
    (pi_raw,) = _fit_predict(
        fit_logistic, df, config.propensity_terms, a, schema, folds, [{}]
    )
    pi, n_trimmed = _clip_propensity(pi_raw, config.trim)
    contrib = (q1 - q0) + (a - pi) / (pi * (1.0 - pi)) * (y - qa)
    return _report(
        "drn",
        contrib=contrib,
        diagnostics={
            "propensity_range": [float(pi_raw.min()), float(pi_raw.max())],
            "n_trimmed": n_trimmed,
            "context_counts": _context_counts(df, schema),
            "cross_fit": config.cross_fit,
        },
    )


def _drf_complete_mask(df, schema, config) -> np.ndarray:
    used = DesignFormula(config.q1_terms).columns_used()
    indicators = sorted(schema[v][1] for v in used if v in schema)
    mask = np.ones(len(df), dtype=bool)
    for r in indicators:
        mask &= df[r].to_numpy() == 1
    return mask


def dr_fate(data: Dataset | pd.DataFrame, config: EstimatorConfig) -> EstimateReport:
    """Doubly-robust FATE estimator via one-step corrected pseudo-outcomes."""
    df, schema = dataset_frame(data)
    a = df[config.exposure].to_numpy(dtype=float)
    y = df[config.outcome].to_numpy(dtype=float)
    complete = _drf_complete_mask(df, schema, config)
    if not complete.any():
        raise InsufficientData("no complete rows to learn the outcome surface")
    n = len(df)
    folds = _folds(n, config.seed) if config.cross_fit else None

    dfc = df[complete]
    foldc = folds[complete] if folds is not None else None
    q1_hi, q1_lo, q1_at = _fit_predict(
        fit_linear,
        dfc,
        config.q1_terms,
        y[complete],
        schema,
        foldc,
        [{config.exposure: 1.0}, {config.exposure: 0.0}, {}],
    )
    (pi1_raw,) = _fit_predict(
        fit_logistic, dfc, config.pi1_terms, a[complete], schema, foldc, [{}]
    )
    pi1, n_trim_pi = _clip_propensity(pi1_raw, config.trim)
    dq = q1_hi - q1_lo
    resid = (a[complete] - pi1) / (pi1 * (1.0 - pi1)) * (y[complete] - q1_at)
    delta = dq + resid

    # tau is trained on complete rows but evaluated everywhere
    tau_formula = DesignFormula(config.tau_terms)
    if folds is None:
        tau_fit = fit_linear(dfc, tau_formula, delta, schema)
        tau_all = tau_fit.predict(df, schema)
    else:
        tau_all = np.empty(n)
        for f in (0, 1):
            train = complete & (folds != f)
            fit = fit_linear(df[train], tau_formula, delta[foldc != f], schema)
            tau_all[folds == f] = fit.predict(df[folds == f], schema)

    (p_obs_raw,) = _fit_predict(
        fit_logistic,
        df,
        config.missingness_terms,
        complete.astype(float),
        schema,
        folds,
        [{}],
    )
    p_obs, n_trim_r = _clip_propensity(p_obs_raw, config.trim, lower_only=True)

    dq_all = np.zeros(n)
    dq_all[complete] = dq
    delta_all = np.zeros(n)
    delta_all[complete] = delta
    r = complete.astype(float)
    if config.conventional_drf_correction:
        contrib = tau_all + (r / p_obs) * (delta_all - tau_all)
    else:
        contrib = tau_all + (r / p_obs) * (tau_all - dq_all)
    point = float(contrib.mean())
    se = float(np.sqrt(np.sum((contrib - point) ** 2)) / n)
    return _report(
        "drf",
        point=point,
        se=se,
        n=n,
        diagnostics={
            "treatment_propensity_range": [float(pi1_raw.min()), float(pi1_raw.max())],
            "observation_propensity_range": [
                float(p_obs_raw.min()),
                float(p_obs_raw.max()),
            ],
            "n_trimmed": n_trim_pi + n_trim_r,
            "n_complete": int(complete.sum()),
            "correction": "conventional"
            if config.conventional_drf_correction
            else "as-published",
            "cross_fit": config.cross_fit,
        },
    )


def _mim_point(df, schema, config) -> float:
    y = df[config.outcome].to_numpy(dtype=float)
    fit = fit_linear(df, DesignFormula(config.mim_terms), y, schema)
    hi = fit.predict(df, schema, {config.exposure: 1.0})
    lo = fit.predict(df, schema, {config.exposure: 0.0})
    return float(np.mean(hi - lo))


def mim_estimate(data: Dataset | pd.DataFrame, config: EstimatorConfig) -> EstimateReport:
    """Missingness-indicator method: one outcome regression with indicator
    interactions; g-computation averages the treatment contrast over the
    empirical distribution of (covariates, indicators, gated covariates)."""
    df, schema = dataset_frame(data)
    point = _mim_point(df, schema, config)
    se = None
    if config.bootstrap_b > 0:
        se = bootstrap_se(
            lambda d: _mim_point(*dataset_frame(d), config),
            Dataset(df, schema),
            b=config.bootstrap_b,
            seed=config.seed,
        )
    return _report(
        "mim",
        point=point,
        se=se,
        n=len(df),
        diagnostics={"bootstrap_b": config.bootstrap_b},
    )


def _aipw_plain(df: pd.DataFrame, config: EstimatorConfig):
    """AIPW on a frame with no masked cells; returns (point, se, n)."""
    a = df[config.exposure].to_numpy(dtype=float)
    y = df[config.outcome].to_numpy(dtype=float)
    ofit = fit_linear(df, DesignFormula(config.aipw_outcome_terms), y)
    q1 = ofit.predict(df, overrides={config.exposure: 1.0})
    q0 = ofit.predict(df, overrides={config.exposure: 0.0})
    qa = ofit.predict(df)
    pfit = fit_logistic(df, DesignFormula(config.aipw_propensity_terms), a)
    pi, _ = _clip_propensity(pfit.predict(df), config.trim)
    contrib = (q1 - q0) + (a - pi) / (pi * (1.0 - pi)) * (y - qa)
    return (
        float(contrib.mean()),
        float(np.std(contrib, ddof=1) / np.sqrt(len(contrib))),
        len(df),
    )


def _completed_frame(df: pd.DataFrame, schema, fill: Mapping[str, np.ndarray]):
    """A plain frame where each missing-affected variable becomes an ordinary
    column (observed value where present, provided fill elsewhere)."""
    out = {}
    for col in df.columns:
        out[col] = df[col].to_numpy()
    for var, (obs_col, r_col) in schema.items():
        observed = df[r_col].to_numpy() == 1
        values = df[obs_col].to_numpy(dtype=float).copy()
        if var in fill:
            values[~observed] = np.asarray(fill[var])[~observed]
        out[var] = values
    return pd.DataFrame(out)


def mi_estimate(data: Dataset | pd.DataFrame, config: EstimatorConfig) -> EstimateReport:
    """Multiple imputation: conditional-Gaussian draws for each masked
    variable from its regression on fully observed columns, AIPW per completed
    dataset, Rubin's pooling across imputations."""
    if config.n_imputations < 2:
        raise InsufficientData("multiple imputation needs at least 2 imputations")
    df, schema = dataset_frame(data)
    if not schema:
        point, se, n = _aipw_plain(df, config)
        return _report("mi", point=point, se=se, n=n, diagnostics={"m": 0})
    complete = np.ones(len(df), dtype=bool)
    for _, r_col in schema.values():
        complete &= df[r_col].to_numpy() == 1
    if not complete.any():
        raise InsufficientData("no complete rows to fit the imputation model")

    rng = np.random.default_rng(config.seed)
    formula = DesignFormula(config.imputation_terms)
    models = {}
    for var in sorted(schema):
        obs_col, _ = schema[var]
        yv = df.loc[complete, obs_col].to_numpy(dtype=float)
        fit = fit_linear(df[complete], formula, yv)
        resid = yv - fit.predict(df[complete])
        sd = float(np.std(resid, ddof=len(fit.coefficients)))
        models[var] = (fit, sd)

    points, variances = [], []
    for _ in range(config.n_imputations):
        fill = {}
        for var, (fit, sd) in models.items():
            mean = fit.predict(df)
            fill[var] = mean + sd * rng.standard_normal(len(df))
        completed = _completed_frame(df, schema, fill)
        point_j, se_j, _ = _aipw_plain(completed, config)
        points.append(point_j)
        variances.append(se_j**2)
    m = config.n_imputations
    point = float(np.mean(points))
    within = float(np.mean(variances))
    between = float(np.var(points, ddof=1))
    se = float(np.sqrt(within + (1.0 + 1.0 / m) * between))
    return _report(
        "mi",
        point=point,
        se=se,
        n=len(df),
        diagnostics={"m": m, "complete_rows": int(complete.sum())},
    )


def cc_estimate(data: Dataset | pd.DataFrame, config: EstimatorConfig) -> EstimateReport:
    """AIPW restricted to the complete cases."""
    df, schema = dataset_frame(data)
    complete = np.ones(len(df), dtype=bool)
    for _, r_col in schema.values():
        complete &= df[r_col].to_numpy() == 1
    if not complete.any():
        raise InsufficientData("complete-case subsample is empty")
    completed = _completed_frame(df[complete], schema, {})
    point, se, n = _aipw_plain(completed, config)
    return _report(
        "cc", point=point, se=se, n=n, diagnostics={"n_dropped": int((~complete).sum())}
    )


ESTIMATORS: dict[str, Callable] = {
    "drn": dr_nate,
    "drf": dr_fate,
    "mim": mim_estimate,
    "mi": mi_estimate,
    "cc": cc_estimate,
}


def bootstrap_se(
    estimator: Callable[[Dataset], float],
    data: Dataset | pd.DataFrame,
    b: int,
    seed: int,
) -> float:
    """Standard deviation of ``b`` seeded nonparametric resample estimates."""
    if b < 100:
        raise ValueError("bootstrap needs b >= 100 resamples")
    df, schema = dataset_frame(data)
    rng = np.random.default_rng(seed)
    n = len(df)
    estimates = []
    failures = 0
    for _ in range(b):
        idx = rng.integers(0, n, size=n)
        resampled = Dataset(df.iloc[idx].reset_index(drop=True), schema)
        try:
            estimates.append(float(estimator(resampled)))
        except Exception:
            failures += 1
    if failures > 0.05 * b:
        raise BootstrapUnstable(f"{failures} of {b} resample fits failed")
    return float(np.std(estimates, ddof=1))
