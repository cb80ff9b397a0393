"""Statistical tests with automatic test selection, agreement indices and ROC comparison.

The individual tests come from scipy.stats; this module decides which one to
run and implements the agreement coefficients and DeLong's method.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from .features.sap import condition_subsets, sap_pool_vectors, standardize
from .features.voxel import FeatureMapStack

__all__ = [
    "ALTERNATIVES",
    "MIN_NORMALITY_N",
    "TestReport",
    "RocData",
    "RobustnessResult",
    "normality_test",
    "is_normal",
    "variance_test_auto",
    "ttest_with_auto_checks",
    "occc",
    "pairwise_ccc",
    "icc",
    "auc",
    "delong_test",
    "auc_confidence_interval",
    "ks_compare",
    "eval_feature_robustness",
    "save_robustness_stats",
]

ALTERNATIVES = ("two-sided", "greater", "less")
MIN_NORMALITY_N = 20
ROBUSTNESS_MODES = ("baseline", "standardized", "sap")


def _vector(x, name="x", min_n=1) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.size < min_n:
        raise ValueError(f"{name} needs at least {min_n} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _clip_p(p) -> float:
    p = float(p)
    return 1.0 if np.isnan(p) else min(1.0, max(0.0, p))


def normality_test(x) -> float:
    """D'Agostino-Pearson omnibus p-value; needs at least 20 values."""
    v = _vector(x, min_n=MIN_NORMALITY_N)
    if np.ptp(v) == 0:
        return 0.0
    return _clip_p(sps.normaltest(v).pvalue)


def is_normal(x, sensitivity: float = 0.05) -> Optional[bool]:
    """None when the sample is too small to judge."""
    v = np.asarray(x).ravel()
    if v.size < MIN_NORMALITY_N:
        return None
    return normality_test(v) > sensitivity


def _f_test(a, b) -> float:
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if vb == 0:
        return 1.0 if va == 0 else 0.0
    f = va / vb
    dfa, dfb = a.size - 1, b.size - 1
    return _clip_p(2 * min(sps.f.cdf(f, dfa, dfb), sps.f.sf(f, dfa, dfb)))


def variance_test_auto(a, b, sensitivity: float = 0.05, skew_threshold: float = 1.0,
                       kurtosis_threshold: float = 3.0, trim: float = 0.1) -> tuple[str, float]:
    """Pick and run a test of equal variances.

    Both groups normal: F-test. Otherwise the largest absolute skewness above
    ``skew_threshold`` selects Brown-Forsythe; else the largest excess
    kurtosis above ``kurtosis_threshold`` selects the trimmed Brown-Forsythe
    test; else Levene's test.
    """
    a, b = _vector(a, "a", 2), _vector(b, "b", 2)
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        raise ValueError("both groups have zero variance")
    if is_normal(a, sensitivity) and is_normal(b, sensitivity):
        return "F-test", _f_test(a, b)
    skew = max(abs(sps.skew(g)) if np.ptp(g) else 0.0 for g in (a, b))
    kurt = max(sps.kurtosis(g) if np.ptp(g) else 0.0 for g in (a, b))
    if skew > skew_threshold:
        return "Brown-Forsythe", _clip_p(sps.levene(a, b, center="median").pvalue)
    if kurt > kurtosis_threshold:
        return "trimmed Brown-Forsythe", _clip_p(
            sps.levene(a, b, center="trimmed", proportiontocut=trim).pvalue)
    return "Levene", _clip_p(sps.levene(a, b, center="mean").pvalue)


@dataclass
class TestReport:
    p_values: dict
    chosen_mean_test: str
    alternative: str
    normality: dict
    chosen_variance_test: Optional[str] = None
    notes: list = field(default_factory=list)

    __test__ = False

    @property
    def p(self) -> float:
        return self.p_values[self.chosen_mean_test]

    @property
    def p_variance(self) -> Optional[float]:
        return None if self.chosen_variance_test is None else self.p_values[self.chosen_variance_test]


def ttest_with_auto_checks(a, b, paired: bool = False, alternative: str = "two-sided",
                           sensitivity: float = 0.05, include_f: bool = False) -> TestReport:
    """Compare two groups' locations with a test chosen from normality and variance checks."""
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    a, b = _vector(a, "a", 2), _vector(b, "b", 2)
    if paired and a.size != b.size:
        raise ValueError(f"paired groups need equal lengths, got {a.size} and {b.size}")
    norm_a, norm_b = is_normal(a, sensitivity), is_normal(b, sensitivity)
    normality = {"a": None if norm_a is None else normality_test(a),
                 "b": None if norm_b is None else normality_test(b)}
    notes = []
    if norm_a is None or norm_b is None:
        notes.append(f"fewer than {MIN_NORMALITY_N} values: normality not assessed, non-parametric test used")
    both_normal = bool(norm_a and norm_b)
    p_values = {}
    var_name = None
    if include_f or (both_normal and not paired):
        if np.ptp(a) == 0 and np.ptp(b) == 0:
            notes.append("both groups constant: variance test skipped")
        else:
            var_name, p_var = variance_test_auto(a, b, sensitivity)
            p_values[var_name] = p_var
    if paired:
        d = a - b
        if both_normal:
            name = "paired t-test"
            p = 1.0 if np.all(d == d[0]) and d[0] == 0 else sps.ttest_rel(a, b, alternative=alternative).pvalue
        else:
            name = "Wilcoxon signed-rank"
            p = 1.0 if np.all(d == 0) else sps.wilcoxon(
                a, b, alternative=alternative, correction=True, method="approx").pvalue
    elif both_normal:
        equal_var = var_name is None or p_values[var_name] > sensitivity
        name = "t-test" if equal_var else "Welch's t-test"
        p = sps.ttest_ind(a, b, equal_var=equal_var, alternative=alternative).pvalue
    else:
        name = "Mann-Whitney U"
        p = sps.mannwhitneyu(a, b, alternative=alternative, use_continuity=True, method="asymptotic").pvalue
    p_values[name] = _clip_p(p)
    return TestReport(p_values, name, alternative, normality,
                      chosen_variance_test=var_name if include_f else None, notes=notes)


def _rater_matrix(m) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"rater matrix must be n >= 2 subjects by J >= 2 raters, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("rater matrix contains missing or non-finite entries")
    return x


def pairwise_ccc(x, y) -> float:
    """Lin's concordance correlation coefficient (population moments)."""
    return occc(np.column_stack([x, y]))


def occc(m) -> float:
    """Overall concordance correlation coefficient over the columns of ``m``.

    Equals the sum over rater pairs of 2*cov_jk divided by the sum of
    var_j + var_k + (mean_j - mean_k)^2. Written as one minus the ratio of
    summed mean squared pair differences to that denominator, which is the
    same quantity and exactly 1 for identical raters.
    """
    x = _rater_matrix(m)
    n, j = x.shape
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).sum(axis=0) / n
    if np.any(var == 0):
        raise ValueError("a rater with zero variance makes the coefficient undefined")
    msd = 0.0
    denom = 0.0
    for a in range(j):
        d = x[:, a + 1:] - x[:, a:a + 1]
        msd += float((d * d).sum()) / n
        denom += float((var[a] + var[a + 1:] + (mu[a] - mu[a + 1:]) ** 2).sum())
    return 1.0 - msd / denom


_ICC_FORMS = ("ICC(1,1)", "ICC(2,1)", "ICC(3,1)", "ICC(1,k)", "ICC(2,k)", "ICC(3,k)")


def icc(m, form: str = "ICC(2,1)") -> float:
    """Shrout-Fleiss intraclass correlation from two-way ANOVA mean squares."""
    if form not in _ICC_FORMS:
        raise ValueError(f"form must be one of {_ICC_FORMS}")
    x = _rater_matrix(m)
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * ((x.mean(axis=1) - grand) ** 2).sum()
    ss_cols = n * ((x.mean(axis=0) - grand) ** 2).sum()
    ss_err = ((x - grand) ** 2).sum() - ss_rows - ss_cols
    ss_err = max(ss_err, 0.0)
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    msw = (ss_cols + ss_err) / (n * (k - 1))
    num, den = {
        "ICC(1,1)": (msr - msw, msr + (k - 1) * msw),
        "ICC(2,1)": (msr - mse, msr + (k - 1) * mse + k * (msc - mse) / n),
        "ICC(3,1)": (msr - mse, msr + (k - 1) * mse),
        "ICC(1,k)": (msr - msw, msr),
        "ICC(2,k)": (msr - mse, msr + (msc - mse) / n),
        "ICC(3,k)": (msr - mse, msr),
    }[form]
    if den == 0:
        raise ValueError("degenerate ANOVA: zero mean squares")
    return float(num / den)


@dataclass(frozen=True)
class RocData:
    scores: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        s = _vector(self.scores, "scores")
        t = np.asarray(self.truth).ravel()
        if t.shape != s.shape:
            raise ValueError("scores and truth must have the same length")
        if not np.all(np.isin(t, (0, 1))):
            raise ValueError("truth must be binary")
        t = t.astype(bool)
        if t.all() or not t.any():
            raise ValueError("truth must contain both classes")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "truth", t)

    @property
    def positives(self) -> np.ndarray:
        return self.scores[self.truth]

    @property
    def negatives(self) -> np.ndarray:
        return self.scores[~self.truth]


def _components(r: RocData):
    """AUC and the DeLong structural components from midranks."""
    pos, neg = r.positives, r.negatives
    m, n = pos.size, neg.size
    rz = sps.rankdata(np.concatenate([pos, neg]))
    rx = sps.rankdata(pos)
    ry = sps.rankdata(neg)
    area = (rz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    v10 = (rz[:m] - rx) / n
    v01 = 1.0 - (rz[m:] - ry) / m
    return float(area), v10, v01


def auc(r: RocData) -> float:
    return _components(r)[0]


def _auc_variance(v10, v01) -> float:
    return float(np.var(v10, ddof=1) / v10.size + np.var(v01, ddof=1) / v01.size)


def delong_test(r1: RocData, r2: RocData, paired: bool = True) -> dict:
    """Two-sided z-test on the AUC difference.

    Paired curves share the same cases; their covariance enters the
    variance. Unpaired curves are treated as independent.
    """
    a1, v10a, v01a = _components(r1)
    a2, v10b, v01b = _components(r2)
    if paired:
        if not np.array_equal(r1.truth, r2.truth):
            raise ValueError("paired ROC data must share the same truth vector")
        s10 = np.cov(np.vstack([v10a, v10b]))
        s01 = np.cov(np.vstack([v01a, v01b]))
        s = s10 / v10a.size + s01 / v01a.size
        var = float(s[0, 0] + s[1, 1] - 2 * s[0, 1])
    else:
        var = _auc_variance(v10a, v01a) + _auc_variance(v10b, v01b)
    diff = a1 - a2
    if var <= 0:
        z = 0.0 if diff == 0 else np.copysign(np.inf, diff)
    else:
        z = diff / np.sqrt(var)
    p = 1.0 if diff == 0 else _clip_p(2 * sps.norm.sf(abs(z)))
    return {"auc1": a1, "auc2": a2, "z": float(z), "p": p}


def auc_confidence_interval(r: RocData, level: float = 0.95) -> tuple[float, float]:
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    area, v10, v01 = _components(r)
    half = sps.norm.ppf(0.5 + level / 2) * np.sqrt(max(_auc_variance(v10, v01), 0.0))
    return float(max(0.0, area - half)), float(min(1.0, area + half))


def ks_compare(a, b) -> dict:
    a, b = _vector(a, "a"), _vector(b, "b")
    res = sps.ks_2samp(a, b, method="asymp")
    return {"D": float(res.statistic), "p": _clip_p(res.pvalue)}


@dataclass
class RobustnessResult:
    """OCCC per feature (one value per stack) for a mode and for the baseline."""

    mode: str
    n_components: Optional[int]
    subsets: list
    occc: dict
    baseline: dict
    tests: dict = field(default_factory=dict)

    def medians(self, which: str = "mode") -> dict:
        src = self.occc if which == "mode" else self.baseline
        return {f: float(np.median(v)) for f, v in src.items()}

    def rows(self) -> list[dict]:
        label = "all" if self.mode != "sap" else f"k={self.n_components}/{len(self.subsets)}"
        out = []
        for f in self.occc:
            p_med, p_var = self.tests.get(f, (None, None))
            out.append({"feature": f, "mode": self.mode, "subset": label,
                        "occc": float(np.median(self.occc[f])), "p_median": p_med, "p_variance": p_var})
        return out


def _occc_or_nan(mat) -> float:
    try:
        return occc(mat)
    except ValueError:
        return float("nan")


def _stack_occc(stack: FeatureMapStack, feature: str, mode: str, subsets) -> float:
    mat = stack.matrix(feature)
    if mode == "baseline":
        return _occc_or_nan(mat)
    try:
        if mode == "standardized":
            return occc(np.column_stack([standardize(c) for c in mat.T]))
        return occc(np.column_stack([sap_pool_vectors([stack.vector(c, feature) for c in s]) for s in subsets]))
    except ValueError:
        return float("nan")


def eval_feature_robustness(stacks: Union[FeatureMapStack, Sequence[FeatureMapStack]], mode: str = "baseline",
                            n_components: Optional[int] = None, features: Optional[Iterable[str]] = None,
                            do_ttest: bool = False, save_stats_path=None,
                            sensitivity: float = 0.05) -> RobustnessResult:
    """OCCC of each feature across extraction conditions.

    ``baseline`` treats the raw condition vectors as raters, ``standardized``
    the per-condition standardized vectors, and ``sap`` the pooled vectors of
    every ``n_components``-sized subset of conditions. With several stacks
    (subjects or VOIs) and ``do_ttest`` the per-feature OCCC values are
    compared with the baseline in location and variance.
    """
    if mode not in ROBUSTNESS_MODES:
        raise ValueError(f"mode must be one of {ROBUSTNESS_MODES}")
    stacks = [stacks] if isinstance(stacks, FeatureMapStack) else list(stacks)
    if not stacks:
        raise ValueError("no feature stacks given")
    conds = stacks[0].condition_ids
    if len(conds) < 2:
        raise ValueError("need at least two conditions")
    if any(s.condition_ids != conds for s in stacks):
        raise ValueError("all stacks must share the same conditions")
    subsets = []
    if mode == "sap":
        if n_components is None:
            raise ValueError("sap mode needs n_components")
        # a single subset (k equal to the number of conditions) has no agreement to measure: NaN
        subsets = condition_subsets(conds, n_components)
    features = list(stacks[0].feature_names if features is None else features)
    base = {f: np.array([_stack_occc(s, f, "baseline", []) for s in stacks]) for f in features}
    vals = base if mode == "baseline" else {
        f: np.array([_stack_occc(s, f, mode, subsets) for s in stacks]) for f in features}
    res = RobustnessResult(mode, n_components if mode == "sap" else None, subsets, vals, base)
    if do_ttest and mode != "baseline":
        for f in features:
            a, b = vals[f], base[f]
            ok = np.isfinite(a) & np.isfinite(b)
            if ok.sum() < 2 or (np.ptp(a[ok]) == 0 and np.ptp(b[ok]) == 0):
                res.tests[f] = (None, None)
                continue
            rep = ttest_with_auto_checks(a[ok], b[ok], paired=True, sensitivity=sensitivity, include_f=True)
            res.tests[f] = (rep.p, rep.p_variance)
    if save_stats_path is not None:
        save_robustness_stats([res], save_stats_path)
    return res


def save_robustness_stats(results: Sequence[RobustnessResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["feature", "mode", "subset", "occc", "p_median", "p_variance"])
        w.writeheader()
        for res in results:
            for row in res.rows():
                w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                            for k, v in row.items()})
