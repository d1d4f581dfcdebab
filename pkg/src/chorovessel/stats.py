"""Disease-association statistics for per-image vessel measurements.

Pipeline per outcome: drop uninformative metrics (>90% missing or >95%
modal), remove extreme outliers with the skewness-adjusted boxplot
(medcouple fences, whisker 3), standardize to SD units, fit a multivariable
logistic regression (metric + age + sex) by IRLS, convert the metric
coefficient to an odds ratio per SD with a Wald 95% CI, and finally adjust
p-values for the false discovery rate (Benjamini-Hochberg) across the
metrics whose fits converged.

Missing values are NaN throughout; listwise deletion is applied per metric
and the effective sample size is reported alongside each result.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

Z975 = 1.959964  # two-sided 95% normal quantile

MAX_ABS_BETA = 15.0  # beyond this the fit is flagged as separated
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 50


@dataclass(frozen=True)
class AnalysisTable:
    """Per-patient rows: binary outcome, age, sex, and named metric values."""

    ids: tuple[str, ...]
    outcome: np.ndarray          # {0,1}
    age: np.ndarray              # years
    sex: np.ndarray              # {0,1}
    metrics: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.ids)
        for name, arr in (("outcome", self.outcome), ("age", self.age),
                          ("sex", self.sex)):
            if len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != {n} rows")
        vals = self.outcome[~np.isnan(self.outcome)]
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("outcome must be binary")
        for name, col in self.metrics.items():
            if len(col) != n:
                raise ValueError(f"metric {name!r} length mismatch")

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class AssociationResult:
    metric: str
    n_used: int
    odds_ratio: float
    ci_lo: float
    ci_hi: float
    p_value: float
    p_fdr: float
    converged: bool

    @property
    def significant(self) -> bool:
        return self.converged and not math.isnan(self.p_fdr) and self.p_fdr < 0.05


def filter_metrics(table: AnalysisTable, max_missing: float = 0.90,
                   max_modal: float = 0.95) -> list[str]:
    """Names surviving the missingness and near-constancy filters."""
    kept = []
    for name, col in table.metrics.items():
        col = np.asarray(col, float)
        n = len(col)
        miss = np.isnan(col).sum() / n if n else 1.0
        if miss > max_missing:
            continue
        present = col[~np.isnan(col)]
        if present.size:
            _, counts = np.unique(present, return_counts=True)
            if counts.max() / present.size > max_modal:
                continue
        kept.append(name)
    return kept


def medcouple(values) -> float:
    """Robust skewness in [-1, 1].

    Median of the kernel h(x_i, x_j) = ((x_j - m) - (m - x_i)) / (x_j - x_i)
    over sorted pairs i < j with x_i <= m <= x_j; pairs tied at the median
    use the standard sign kernel. O(n^2), fine for cohort-sized vectors.
    """
    x = np.sort(np.asarray(values, float))
    x = x[~np.isnan(x)]
    n = len(x)
    if n < 3:
        raise ValueError("medcouple needs at least 3 non-missing values")
    if x[0] == x[-1]:
        return 0.0
    m = float(np.median(x))

    li = np.nonzero(x <= m)[0]
    ui = np.nonzero(x >= m)[0]
    ii = li[:, None].repeat(len(ui), 1)
    jj = ui[None, :].repeat(len(li), 0)
    keep = ii < jj
    xi = x[ii[keep]]
    xj = x[jj[keep]]
    i_idx = ii[keep]
    j_idx = jj[keep]

    with np.errstate(divide="ignore", invalid="ignore"):
        h = ((xj - m) - (m - xi)) / (xj - xi)
    tied = (xi == m) & (xj == m)
    if tied.any():
        tie_pos = np.nonzero(x == m)[0]
        rank = {int(g): a + 1 for a, g in enumerate(tie_pos)}  # 1-based within ties
        p = len(tie_pos)
        a = np.array([rank[int(k)] for k in i_idx[tied]])
        b = np.array([rank[int(k)] for k in j_idx[tied]])
        h[tied] = np.sign(a + b - 1 - p)
    return float(np.median(h))


def remove_outliers(values, whisker: float = 3.0):
    """Skewness-adjusted boxplot fences; values outside become missing.

    With MC >= 0 the fences are [Q1 - w*exp(-4*MC)*IQR, Q3 + w*exp(3*MC)*IQR];
    for MC < 0 the exponent pair swaps to (-3, 4). A degenerate IQR of zero
    removes nothing. Returns (filtered copy, (lo, hi)).
    """
    vals = np.asarray(values, float).copy()
    present = vals[~np.isnan(vals)]
    if present.size < 4:
        raise ValueError("need at least 4 non-missing values")
    q1, q3 = np.percentile(present, [25, 75])  # linear interpolation
    iqr = q3 - q1
    if iqr == 0:
        return vals, (-math.inf, math.inf)
    mc = medcouple(present)
    if mc >= 0:
        lo = q1 - whisker * math.exp(-4.0 * mc) * iqr
        hi = q3 + whisker * math.exp(3.0 * mc) * iqr
    else:
        lo = q1 - whisker * math.exp(-3.0 * mc) * iqr
        hi = q3 + whisker * math.exp(4.0 * mc) * iqr
    out = np.where((vals < lo) | (vals > hi), np.nan, vals)
    return out, (lo, hi)


def standardize(values) -> np.ndarray:
    """(x - mean) / sample SD over the non-missing entries; NaN preserved."""
    vals = np.asarray(values, float).copy()
    present = vals[~np.isnan(vals)]
    if len(np.unique(present)) < 2:
        raise ValueError("zero SD: need at least 2 distinct non-missing values")
    mu = present.mean()
    sd = present.std(ddof=1)
    if sd == 0:
        raise ValueError("zero SD")
    return (vals - mu) / sd


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    se: np.ndarray
    converged: bool
    n_iter: int
    separated: bool = False


def logistic_fit(y, X) -> LogisticFit:
    """IRLS (Newton-Raphson) logistic regression with Wald standard errors.

    Convergence when max |delta beta| < 1e-8 within 50 iterations; any
    coefficient drifting past |15| is reported as separation. Standard
    errors come from the inverse observed information at the final iterate.
    """
    y = np.asarray(y, float)
    X = np.asarray(X, float)
    if y.ndim != 1 or X.shape[0] != len(y):
        raise ValueError("shape mismatch between y and X")
    if len(np.unique(y)) < 2:
        raise ValueError("single-class outcome")
    n, k = X.shape
    beta = np.zeros(k)
    converged = False
    separated = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(p * (1.0 - p), 1e-10, None)
        g = X.T @ (y - p)
        H = (X.T * w) @ X
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise ValueError("singular design matrix")
        beta = beta + step
        if np.abs(beta).max() > MAX_ABS_BETA:
            separated = True
            break
        if np.abs(step).max() < IRLS_TOL:
            converged = True
            break
    eta = X @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    w = np.clip(p * (1.0 - p), 1e-10, None)
    H = (X.T * w) @ X
    try:
        cov = np.linalg.inv(H)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
    return LogisticFit(coef=beta, se=se, converged=converged and not separated,
                       n_iter=it, separated=separated)


def odds_ratio(coef: float, se: float) -> tuple[float, float, float]:
    """Per-unit odds ratio with a Wald 95% CI."""
    return (math.exp(coef),
            math.exp(coef - Z975 * se),
            math.exp(coef + Z975 * se))


def wald_p(coef: float, se: float) -> float:
    if se <= 0 or math.isnan(se):
        return float("nan")
    z = abs(coef) / se
    return math.erfc(z / math.sqrt(2.0))


def fdr_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values (order preserved)."""
    p = np.asarray(p_values, float)
    if p.size == 0:
        return p.copy()
    if np.nanmin(p) < 0 or np.nanmax(p) > 1:
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.minimum(adj, 1.0)
    out = np.empty_like(adj)
    out[order] = adj
    return out


def run_association(table: AnalysisTable, min_rows: int = 8) -> list[AssociationResult]:
    """filter -> (per metric) outliers -> standardize -> logistic -> FDR."""
    retained = filter_metrics(table)
    results: list[AssociationResult] = []
    covar_ok = ~(np.isnan(table.outcome) | np.isnan(table.age) | np.isnan(table.sex))

    fitted_idx: list[int] = []
    fitted_p: list[float] = []
    for name in retained:
        col = np.asarray(table.metrics[name], float)
        sample = covar_ok & ~np.isnan(col)
        vals = np.where(sample, col, np.nan)
        failed = None
        n_used = 0
        or_, lo, hi, p = (float("nan"),) * 4
        try:
            if sample.sum() >= 4:
                vals, _fences = remove_outliers(vals)
            use = ~np.isnan(vals) & covar_ok
            n_used = int(use.sum())
            if n_used < min_rows:
                raise ValueError("too few complete rows")
            z = standardize(vals[use])
            y = table.outcome[use]
            X = np.column_stack([np.ones(n_used), z, table.age[use], table.sex[use]])
            fit = logistic_fit(y, X)
            if not fit.converged:
                raise ValueError("non-converged or separated fit")
            or_, lo, hi = odds_ratio(fit.coef[1], fit.se[1])
            p = wald_p(fit.coef[1], fit.se[1])
            ok = True
        except (ValueError, np.linalg.LinAlgError) as e:
            failed = str(e)
            ok = False
        results.append(AssociationResult(
            metric=name, n_used=n_used, odds_ratio=or_, ci_lo=lo, ci_hi=hi,
            p_value=p, p_fdr=float("nan"), converged=ok))
        if ok and not math.isnan(p):
            fitted_idx.append(len(results) - 1)
            fitted_p.append(p)

    if fitted_p:
        adjusted = fdr_adjust(np.asarray(fitted_p))
        for i, q in zip(fitted_idx, adjusted):
            r = results[i]
            results[i] = AssociationResult(
                metric=r.metric, n_used=r.n_used, odds_ratio=r.odds_ratio,
                ci_lo=r.ci_lo, ci_hi=r.ci_hi, p_value=r.p_value,
                p_fdr=float(q), converged=r.converged)
    return results


def read_analysis_csv(path) -> AnalysisTable:
    """Columns: id, outcome, age, sex, then one column per metric."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:4] != ["id", "outcome", "age", "sex"]:
            raise ValueError("analysis CSV must start with id,outcome,age,sex")
        names = header[4:]
        ids, rows = [], []
        for rec in reader:
            if not rec:
                continue
            ids.append(rec[0])
            rows.append([_parse_cell(c) for c in rec[1:]])
    data = np.asarray(rows, float) if rows else np.zeros((0, 3 + len(names)))
    metrics = {name: data[:, 3 + j] for j, name in enumerate(names)}
    return AnalysisTable(ids=tuple(ids), outcome=data[:, 0], age=data[:, 1],
                         sex=data[:, 2], metrics=metrics)


def write_analysis_csv(table: AnalysisTable, path) -> None:
    names = list(table.metrics)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "outcome", "age", "sex"] + names)
        for i in range(table.n):
            row = [table.ids[i], _fmt(table.outcome[i]), _fmt(table.age[i]),
                   _fmt(table.sex[i])]
            row += [_fmt(table.metrics[n][i]) for n in names]
            w.writerow(row)


def write_results_csv(results: list[AssociationResult], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "n_used", "OR", "ci_lo", "ci_hi", "p", "p_fdr",
                    "converged"])
        for r in results:
            w.writerow([r.metric, r.n_used, _fmt(r.odds_ratio), _fmt(r.ci_lo),
                        _fmt(r.ci_hi), _fmt(r.p_value), _fmt(r.p_fdr),
                        int(r.converged)])


def _parse_cell(c: str) -> float:
    c = c.strip()
    return float("nan") if c == "" else float(c)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return f"{float(v):.10g}"
