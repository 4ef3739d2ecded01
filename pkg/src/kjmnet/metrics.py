"""Waveform agreement metrics and run comparison.

A prediction run is scored per trial and per waveform over the early part
of stance: Pearson correlation and relative RMSE (RMSE as a percentage of
the mean of the two curve ranges) on the first ceil(window * L) samples.
Waveform means and their cross-waveform mean summarize a run; per-trial
correlations are kept so two runs can be compared with a Mann-Whitney U
test (midranks, tie-corrected normal approximation with continuity
correction, exact enumeration when both samples are small).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRange,
    DegenerateSeries,
    EmptySample,
    FoldMismatch,
    ShapeMismatch,
)

__all__ = [
    "pearson_r",
    "rrmse",
    "EvaluationReport",
    "evaluate",
    "mann_whitney_u",
    "format_improvement",
    "ComparisonResult",
    "compare_runs",
]

DEFAULT_WINDOW = 0.33
SIGNIFICANCE_LEVEL = 0.01


def pearson_r(a, b):
    """Sample correlation of two equal-length series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ShapeMismatch(f"series shaped {a.shape} and {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    na = float(da @ da)
    nb = float(db @ db)
    if na == 0.0 or nb == 0.0:
        raise DegenerateSeries("correlation undefined for a constant series")
    return float(da @ db) / math.sqrt(na * nb)


def rrmse(truth, pred):
    """RMSE as a percentage of the mean of the two curve ranges."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape or truth.ndim != 1 or truth.size < 1:
        raise ShapeMismatch(f"series shaped {truth.shape} and {pred.shape}")
    denom = 0.5 * (float(np.ptp(truth)) + float(np.ptp(pred)))
    if denom == 0.0:
        raise DegenerateRange("both curves are constant")
    rmse = math.sqrt(float(np.mean((truth - pred) ** 2)))
    return 100.0 * rmse / denom


@dataclass
class EvaluationReport:
    """Per-trial and summary agreement scores for one prediction run."""

    waveforms: tuple
    window: float
    slice_len: int
    movement: str
    limb: str
    fold_id: str
    dataset_id: str
    per_trial_r: np.ndarray  # (n, W)
    mean_r: np.ndarray  # (W,)
    mean_rrmse: np.ndarray  # (W,)
    kjm_mean_r: float
    kjm_mean_rrmse: float
    strongest_index: int
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.per_trial_r.shape[0]

    @property
    def per_trial_mean_r(self):
        return self.per_trial_r.mean(axis=1)

    def to_dict(self):
        return {
            "waveforms": list(self.waveforms),
            "window": self.window,
            "slice_len": self.slice_len,
            "movement": self.movement,
            "limb": self.limb,
            "fold_id": self.fold_id,
            "dataset_id": self.dataset_id,
            "per_trial_r": self.per_trial_r.tolist(),
            "mean_r": self.mean_r.tolist(),
            "mean_rrmse": self.mean_rrmse.tolist(),
            "kjm_mean_r": self.kjm_mean_r,
            "kjm_mean_rrmse": self.kjm_mean_rrmse,
            "strongest_index": self.strongest_index,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            waveforms=tuple(d["waveforms"]),
            window=d["window"],
            slice_len=d["slice_len"],
            movement=d["movement"],
            limb=d["limb"],
            fold_id=d["fold_id"],
            dataset_id=d["dataset_id"],
            per_trial_r=np.asarray(d["per_trial_r"], dtype=float),
            mean_r=np.asarray(d["mean_r"], dtype=float),
            mean_rrmse=np.asarray(d["mean_rrmse"], dtype=float),
            kjm_mean_r=d["kjm_mean_r"],
            kjm_mean_rrmse=d["kjm_mean_rrmse"],
            strongest_index=d["strongest_index"],
            extra=d.get("extra", {}),
        )

    def to_markdown(self):
        head = ["Movement", "Limb", "Trials"]
        head += [f"{w} r (rRMSE %)" for w in self.waveforms]
        head += ["Mean r"]
        cells = [self.movement or "-", self.limb or "-", str(self.n)]
        cells += [
            f"{r:.4f} ({e:.1f})" for r, e in zip(self.mean_r, self.mean_rrmse)
        ]
        cells += [f"{self.kjm_mean_r:.4f}"]
        lines = [
            f"Window: first {self.window:.0%} of stance "
            f"({self.slice_len} of {self.extra.get('response_length', '?')} samples)",
            "",
            "| " + " | ".join(head) + " |",
            "|" + "|".join("---" for _ in head) + "|",
            "| " + " | ".join(cells) + " |",
            "",
            f"Strongest trial: index {self.strongest_index} "
            f"(mean r {self.per_trial_mean_r[self.strongest_index]:.4f})",
        ]
        return "\n".join(lines) + "\n"


def evaluate(
    preds,
    truths,
    window=DEFAULT_WINDOW,
    waveforms=None,
    movement="",
    limb="",
    fold_id="",
    dataset_id="",
):
    """Score predicted curves against truth curves.

    preds, truths: (n, W, L). The compared slice is the first
    ceil(window * L) samples of each curve. Returns an EvaluationReport;
    the strongest trial is the argmax of the per-trial mean correlation.
    """
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape or preds.ndim != 3:
        raise ShapeMismatch(f"prediction {preds.shape} vs truth {truths.shape}")
    n, w, length = preds.shape
    if n < 1:
        raise EmptySample("no trials to evaluate")
    if not 0.0 < window <= 1.0:
        raise ValueError(f"window {window} outside (0, 1]")
    slice_len = math.ceil(window * length)
    ps = preds[:, :, :slice_len]
    ts = truths[:, :, :slice_len]

    per_r = np.empty((n, w))
    per_e = np.empty((n, w))
    for i in range(n):
        for j in range(w):
            per_r[i, j] = pearson_r(ts[i, j], ps[i, j])
            per_e[i, j] = rrmse(ts[i, j], ps[i, j])

    mean_r = per_r.mean(axis=0)
    mean_e = per_e.mean(axis=0)
    per_trial_mean = per_r.mean(axis=1)
    names = tuple(waveforms) if waveforms else tuple(
        f"w{j}" for j in range(w)
    )
    return EvaluationReport(
        waveforms=names,
        window=window,
        slice_len=slice_len,
        movement=movement,
        limb=limb,
        fold_id=fold_id,
        dataset_id=dataset_id,
        per_trial_r=per_r,
        mean_r=mean_r,
        mean_rrmse=mean_e,
        kjm_mean_r=float(mean_r.mean()),
        kjm_mean_rrmse=float(mean_e.mean()),
        strongest_index=int(np.argmax(per_trial_mean)),
        extra={"response_length": length},
    )


# --------------------------------------------------------------------------
# Mann-Whitney U
# --------------------------------------------------------------------------

def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


EXACT_LIMIT = 8


def mann_whitney_u(a, b):
    """Two-sided Mann-Whitney U test.

    Returns (U, p) where U counts pairs (a_i, b_j) with a_i > b_j (ties
    half). The p-value is exact (enumeration of the rank permutation
    distribution) when both samples have at most eight values, otherwise a
    tie-corrected normal approximation with continuity correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise EmptySample(f"sample sizes {n1} and {n2}")
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)

    if n1 <= EXACT_LIMIT and n2 <= EXACT_LIMIT:
        p = _exact_p(ranks, n1, u)
    else:
        p = _normal_p(pooled, ranks, n1, n2, u)
    return u, min(1.0, max(0.0, p))


def _exact_p(ranks, n1, u):
    n = len(ranks)
    offset = n1 * (n1 + 1) / 2.0
    u_lo = min(u, n1 * (n - n1) - u)
    u_hi = max(u, n1 * (n - n1) - u)
    total = low = high = 0
    for combo in itertools.combinations(range(n), n1):
        uc = ranks[list(combo)].sum() - offset
        total += 1
        if uc <= u_lo + 1e-9:
            low += 1
        if uc >= u_hi - 1e-9:
            high += 1
    return (low + high) / total


def _normal_p(pooled, ranks, n1, n2, u):
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(((counts ** 3) - counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return 1.0
    mu = n1 * n2 / 2.0
    z = max(0.0, abs(u - mu) - 0.5) / math.sqrt(var)
    return math.erfc(z / math.sqrt(2.0))


# --------------------------------------------------------------------------
# run comparison
# --------------------------------------------------------------------------

def format_improvement(r_from, r_to):
    """Relative change of a mean correlation, e.g. 0.8168 -> 0.8512 = '+4.2'."""
    return f"{(r_to - r_from) / r_from * 100.0:+.1f}"


@dataclass
class ComparisonResult:
    waveforms: tuple
    r_a: np.ndarray
    r_b: np.ndarray
    delta_pct: np.ndarray
    p_values: np.ndarray
    mean_r_a: float
    mean_r_b: float
    mean_delta_pct: str
    mean_p: float
    level: float = SIGNIFICANCE_LEVEL

    @property
    def significant(self):
        return self.p_values < self.level

    @property
    def mean_significant(self):
        return self.mean_p < self.level

    def to_markdown(self):
        head = ["Waveform", "r (A)", "r (B)", "Change %", "p", "p < 0.01"]
        lines = [
            "| " + " | ".join(head) + " |",
            "|" + "|".join("---" for _ in head) + "|",
        ]
        for j, w in enumerate(self.waveforms):
            lines.append(
                f"| {w} | {self.r_a[j]:.4f} | {self.r_b[j]:.4f} "
                f"| {self.delta_pct[j]} | {self.p_values[j]:.4g} "
                f"| {'yes' if self.significant[j] else 'no'} |"
            )
        lines.append(
            f"| mean | {self.mean_r_a:.4f} | {self.mean_r_b:.4f} "
            f"| {self.mean_delta_pct} | {self.mean_p:.4g} "
            f"| {'yes' if self.mean_significant else 'no'} |"
        )
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "waveforms": list(self.waveforms),
            "r_a": self.r_a.tolist(),
            "r_b": self.r_b.tolist(),
            "delta_pct": self.delta_pct.tolist(),
            "p_values": self.p_values.tolist(),
            "mean_r_a": self.mean_r_a,
            "mean_r_b": self.mean_r_b,
            "mean_delta_pct": self.mean_delta_pct,
            "mean_p": self.mean_p,
            "significant": self.significant.tolist(),
            "mean_significant": bool(self.mean_significant),
        }


def compare_runs(report_a, report_b):
    """Improvement and significance of run B over run A.

    Both reports must score the same waveforms on the same fold (enforced
    via their fold signatures). Per-trial correlations feed the U test;
    improvements are relative percentage changes of the mean correlations.
    """
    if report_a.waveforms != report_b.waveforms:
        raise ShapeMismatch(
            f"waveforms differ: {report_a.waveforms} vs {report_b.waveforms}"
        )
    if report_a.fold_id != report_b.fold_id:
        raise FoldMismatch(
            f"runs evaluated on different folds "
            f"({report_a.fold_id!r} vs {report_b.fold_id!r})"
        )
    if report_a.per_trial_r.shape != report_b.per_trial_r.shape:
        raise ShapeMismatch("per-trial score blocks differ in shape")

    w = len(report_a.waveforms)
    deltas = np.empty(w, dtype=object)
    ps = np.empty(w)
    for j in range(w):
        deltas[j] = format_improvement(report_a.mean_r[j], report_b.mean_r[j])
        _, ps[j] = mann_whitney_u(
            report_a.per_trial_r[:, j], report_b.per_trial_r[:, j]
        )
    _, mean_p = mann_whitney_u(
        report_a.per_trial_mean_r, report_b.per_trial_mean_r
    )
    return ComparisonResult(
        waveforms=report_a.waveforms,
        r_a=report_a.mean_r.copy(),
        r_b=report_b.mean_r.copy(),
        delta_pct=deltas,
        p_values=ps,
        mean_r_a=report_a.kjm_mean_r,
        mean_r_b=report_b.kjm_mean_r,
        mean_delta_pct=format_improvement(
            report_a.kjm_mean_r, report_b.kjm_mean_r
        ),
        mean_p=mean_p,
    )
