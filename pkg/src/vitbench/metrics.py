"""Classification metrics, significance testing, and report rendering.

Covers the full evaluation surface: confusion matrices, support-weighted
precision/recall/F1 with across-class spread, accuracy, the multiclass
Matthews correlation coefficient, one-vs-rest ROC/AUC, paired bootstrap
resampling with a paired t-test, and an inference-throughput probe.

The t-distribution tail probability is computed here from the regularized
incomplete beta function (continued-fraction expansion) rather than an
external statistics library, so library routines remain available as
independent cross-checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor, no_grad

ZERO_DIV = 0.0  # convention: rates with zero denominators score 0


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # K*K, rows = true class, columns = predicted class
    classes: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds, labels, num_classes: int, classes: list[str] | None = None
              ) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a K*K matrix."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ContractError(
            f"preds and labels must be equal-length 1-D, got {preds.shape} vs {labels.shape}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise ContractError(f"{name} contain indices outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels.astype(int), preds.astype(int)), 1)
    if classes is None:
        classes = [f"class{i}" for i in range(num_classes)]
    return ConfusionMatrix(counts, list(classes))


@dataclass
class PRFSummary:
    precision: float
    precision_std: float
    recall: float
    recall_std: float
    f1: float
    f1_std: float
    accuracy: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    support: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(self.per_class_precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.per_class_recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.per_class_f1.mean())


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full_like(num, ZERO_DIV, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


def weighted_prf(cm: ConfusionMatrix) -> PRFSummary:
    """Per-class precision/recall/F1 with support-weighted means and the
    unweighted across-class standard deviation (population form)."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ContractError("cannot score an empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1).astype(np.float64)  # true counts per class
    predicted = counts.sum(axis=0).astype(np.float64)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    weights = support / total
    return PRFSummary(
        precision=float(precision @ weights),
        precision_std=float(precision.std()),
        recall=float(recall @ weights),
        recall_std=float(recall.std()),
        f1=float(f1 @ weights),
        f1_std=float(f1.std()),
        accuracy=float(tp.sum() / total),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        support=support.astype(np.int64),
    )


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation coefficient (the R_K statistic).

    With c = trace, s = total, t_k = true counts, p_k = predicted counts:
    (c*s - t.p) / sqrt((s^2 - p.p)(s^2 - t.t)); 0 when a sqrt factor is 0.
    """
    counts = cm.counts.astype(np.float64)
    s = counts.sum()
    if s == 0:
        raise ContractError("cannot score an empty confusion matrix")
    c = np.trace(counts)
    t = counts.sum(axis=1)
    p = counts.sum(axis=0)
    cov = c * s - t @ p
    denom_p = s * s - p @ p
    denom_t = s * s - t @ t
    if denom_p <= 0 or denom_t <= 0:
        return 0.0
    return float(cov / math.sqrt(denom_p * denom_t))


# -- ROC / AUC -----------------------------------------------------------------------


@dataclass
class RocCurve:
    class_name: str
    thresholds: np.ndarray  # leading +inf point included
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float | None  # None when the class has no positives or no negatives


@dataclass
class RocResult:
    curves: list[RocCurve]
    macro_auc: float | None
    excluded: list[str]  # classes whose AUC is undefined on this label set

    def auc_for(self, class_name: str) -> float | None:
        for curve in self.curves:
            if curve.class_name == class_name:
                return curve.auc
        raise ContractError(f"no ROC curve for class {class_name!r}")


def _binary_roc(scores: np.ndarray, positive: np.ndarray):
    """Threshold sweep over the distinct scores (descending); ties grouped."""
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positive[order].astype(np.int64)
    # group boundaries: last index of each run of equal scores
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([boundary, [len(scores) - 1]])
    cum_tp = np.cumsum(sorted_pos)[ends]
    cum_fp = (ends + 1) - cum_tp
    thresholds = np.concatenate([[np.inf], sorted_scores[ends]])
    if n_pos == 0 or n_neg == 0:
        tpr = np.zeros(len(ends) + 1)
        fpr = np.zeros(len(ends) + 1)
        return thresholds, fpr, tpr, None
    tpr = np.concatenate([[0.0], cum_tp / n_pos])
    fpr = np.concatenate([[0.0], cum_fp / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return thresholds, fpr, tpr, auc


def roc_auc(scores, labels, classes: list[str] | None = None) -> RocResult:
    """One-vs-rest ROC per class. Rows of ``scores`` must be probability
    vectors (sum to 1 within 1e-4). Classes without both positives and
    negatives in ``labels`` have undefined AUC: they are excluded from the
    macro mean and listed in ``excluded``."""
    scores = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ContractError(f"scores must be (n, K), got shape {scores.shape}")
    if len(labels) != scores.shape[0]:
        raise ContractError(
            f"{len(labels)} labels for {scores.shape[0]} score rows")
    if len(labels) == 0:
        raise ContractError("cannot sweep ROC over zero samples")
    row_sums = scores.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-4):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ContractError(
            f"score row {bad} sums to {row_sums[bad]:.6f}, not a probability vector")
    num_classes = scores.shape[1]
    if classes is None:
        classes = [f"class{i}" for i in range(num_classes)]
    curves = []
    defined = []
    excluded = []
    for k in range(num_classes):
        thresholds, fpr, tpr, auc = _binary_roc(scores[:, k], labels == k)
        curves.append(RocCurve(classes[k], thresholds, fpr, tpr, auc))
        if auc is None:
            excluded.append(classes[k])
        else:
            defined.append(auc)
    macro = float(np.mean(defined)) if defined else None
    return RocResult(curves, macro, excluded)


# -- bootstrap + t-test -----------------------------------------------------------------


def bootstrap_indices(n: int, n_resamples: int, seed: int) -> np.ndarray:
    """With-replacement resample index sets: a pure function of (n,
    n_resamples, seed), so models evaluated on the same test set share
    identical resamples — that sharing is what makes the t-test paired."""
    if n < 1:
        raise ContractError("cannot resample an empty test set")
    if n_resamples < 2:
        raise ContractError(f"need at least 2 resamples, got {n_resamples}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=(n_resamples, n))


def bootstrap_mcc_samples(preds, labels, n_resamples: int = 1000, seed: int = 0,
                          num_classes: int | None = None) -> np.ndarray:
    """MCC over with-replacement resamples of the evaluated samples.
    A resample that loses a class entirely just hits the MCC zero-factor
    convention — it is not an error."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ContractError(
            f"preds and labels must be equal-length 1-D, got {preds.shape} vs {labels.shape}")
    if num_classes is None:
        num_classes = int(max(preds.max(), labels.max())) + 1
    idx = bootstrap_indices(len(preds), n_resamples, seed)
    out = np.empty(n_resamples, dtype=np.float64)
    for i, row in enumerate(idx):
        out[i] = mcc(confusion(preds[row], labels[row], num_classes))
    return out


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    max_iter = 300
    eps = 3e-16
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to ~1e-14 over the t-test's parameter range."""
    if not 0.0 <= x <= 1.0:
        raise ContractError(f"x must be in [0,1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ContractError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p: float
    df: int


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on the per-element differences a - b.

    Degenerate case: when every difference is identical (sample std 0),
    p is 1.0 for zero mean difference and 0.0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(
            f"paired t-test needs equal-length 1-D inputs, got {a.shape} vs {b.shape}")
    m = len(a)
    if m < 2:
        raise ContractError(f"paired t-test needs at least 2 pairs, got {m}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = m - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df)
    t = mean / (sd / math.sqrt(m))
    return TTestResult(t=t, p=student_t_two_sided_p(t, df), df=df)


# -- throughput --------------------------------------------------------------------------


@dataclass
class FpsResult:
    fps: float
    batch_size: int
    iters: int
    warmup: int


def fps(model, sample_batch, warmup: int = 2, iters: int = 10) -> FpsResult:
    """Wall-clock forward-pass throughput. Runs ``warmup`` passes untimed,
    then times ``iters`` passes; frames/s = iters*batch / elapsed. Run this
    alone — concurrent load skews the timer."""
    if iters < 1:
        raise ContractError(f"iters must be >= 1, got {iters}")
    if warmup < 0:
        raise ContractError(f"warmup must be >= 0, got {warmup}")
    batch = Tensor._coerce(sample_batch)
    with no_grad():
        for _ in range(warmup):
            model.forward(batch)
        start = time.perf_counter()
        for _ in range(iters):
            model.forward(batch)
        elapsed = time.perf_counter() - start
    batch_size = batch.shape[0]
    return FpsResult(
        fps=iters * batch_size / max(elapsed, 1e-12),
        batch_size=batch_size,
        iters=iters,
        warmup=warmup,
    )


# -- evaluation reports --------------------------------------------------------------------


@dataclass
class EvaluationReport:
    model_name: str
    classes: list[str]
    num_samples: int
    cm: ConfusionMatrix
    prf: PRFSummary
    mcc: float
    roc: RocResult
    p_value: float | None = None  # vs the best model in a comparison
    fps_value: float | None = None


def evaluate_predictions(preds, labels, scores, classes,
                         model_name: str = "model") -> EvaluationReport:
    """Compute the full metric set from dumped predictions."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    cm = confusion(preds, labels, len(classes), classes)
    return EvaluationReport(
        model_name=model_name,
        classes=list(classes),
        num_samples=len(labels),
        cm=cm,
        prf=weighted_prf(cm),
        mcc=mcc(cm),
        roc=roc_auc(scores, labels, list(classes)),
    )


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def _fmt_p(p) -> str:
    return "-" if p is None else f"{p:.3e}"


def report_row(report: EvaluationReport) -> str:
    """One summary line in the fixed column order:
    precision | recall | f1 | accuracy | mcc | p-value | fps."""
    prf = report.prf
    cells = [
        report.model_name,
        f"{_fmt(prf.precision, 4)}±{_fmt(prf.precision_std, 4)}",
        f"{_fmt(prf.recall, 4)}±{_fmt(prf.recall_std, 4)}",
        f"{_fmt(prf.f1, 4)}±{_fmt(prf.f1_std, 4)}",
        _fmt(prf.accuracy, 4),
        _fmt(report.mcc, 4),
        _fmt_p(report.p_value),
        "-" if report.fps_value is None else f"{report.fps_value:.1f}",
    ]
    return " | ".join(cells)


def render_report(report: EvaluationReport) -> str:
    """Structured-text report. The summary block follows the fixed schema
    precision, recall, f1, accuracy, mcc, p_value, fps; then macro averages,
    then the per-class table."""
    prf = report.prf
    lines = [
        f"model: {report.model_name}",
        f"samples: {report.num_samples}",
        "classes: " + ",".join(report.classes),
        "",
        "[summary]",
        f"weighted_precision: {_fmt(prf.precision)}",
        f"weighted_precision_std: {_fmt(prf.precision_std)}",
        f"weighted_recall: {_fmt(prf.recall)}",
        f"weighted_recall_std: {_fmt(prf.recall_std)}",
        f"weighted_f1: {_fmt(prf.f1)}",
        f"weighted_f1_std: {_fmt(prf.f1_std)}",
        f"accuracy: {_fmt(prf.accuracy)}",
        f"mcc: {_fmt(report.mcc)}",
        f"p_value: {_fmt_p(report.p_value)}",
        "fps: " + ("-" if report.fps_value is None else f"{report.fps_value:.1f}"),
        "",
        "[macro]",
        f"macro_precision: {_fmt(prf.macro_precision)}",
        f"macro_recall: {_fmt(prf.macro_recall)}",
        f"macro_f1: {_fmt(prf.macro_f1)}",
        "macro_auc: " + _fmt(report.roc.macro_auc),
    ]
    if report.roc.excluded:
        lines.append("auc_undefined_for: " + ",".join(report.roc.excluded))
    lines += ["", "[per_class]", "class,precision,recall,f1,support,auc"]
    for i, name in enumerate(report.classes):
        auc = report.roc.curves[i].auc
        lines.append(",".join([
            name,
            _fmt(float(prf.per_class_precision[i])),
            _fmt(float(prf.per_class_recall[i])),
            _fmt(float(prf.per_class_f1[i])),
            str(int(prf.support[i])),
            _fmt(auc),
        ]))
    return "\n".join(lines) + "\n"


def roc_csv(roc: RocResult) -> str:
    """CSV dump of every curve: class,threshold,fpr,tpr."""
    lines = ["class,threshold,fpr,tpr"]
    for curve in roc.curves:
        for thr, fp, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
            thr_s = "inf" if np.isinf(thr) else repr(float(thr))
            lines.append(f"{curve.class_name},{thr_s},{repr(float(fp))},{repr(float(tp))}")
    return "\n".join(lines) + "\n"


def confusion_csv(cm: ConfusionMatrix) -> str:
    """CSV with named header row/column; cell (i, j) counts true class i
    predicted as class j."""
    lines = ["true\\pred," + ",".join(cm.classes)]
    for i, name in enumerate(cm.classes):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm.counts[i]))
    return "\n".join(lines) + "\n"
