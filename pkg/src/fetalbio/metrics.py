"""Agreement statistics between ground-truth and computed measurements.

With ``d_i = m1_i - m2_i`` (ground truth minus computed):

* bias = mean(d)
* mean L1 = mean(|d|), median L1 = median(|d|)
* CI95 = 1.96 * sqrt(mean((mean L1 - d)^2))

The CI95 centring term is the mean absolute difference by default
(``ci_mode="mean_abs"``). ``ci_mode="classical"`` centres on the bias instead,
giving the usual Bland-Altman half-width ``1.96 * std(d)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .exceptions import DegenerateTestError, DomainError, InsufficientDataError

Z95 = 1.96
CI_MODES = ("mean_abs", "classical")
REPORT_COLUMNS = ("train_db", "test_db", "method", "measurement", "n", "bias", "ci95", "mean_l1", "median_l1", "ci_mode")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    values: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if np.isnan(values).any():
            raise DomainError("measurement set contains NaN")
        ids = tuple(self.ids) if len(self.ids) else tuple(range(len(values)))
        if len(ids) != len(values):
            raise DomainError("ids and values differ in length")
        if len(set(ids)) != len(ids):
            raise DomainError("measurement ids are not unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.values)

    def aligned_to(self, ids) -> np.ndarray:
        index = {k: i for i, k in enumerate(self.ids)}
        try:
            return self.values[[index[k] for k in ids]]
        except KeyError as e:
            raise DomainError(f"id {e.args[0]!r} missing from measurement set") from None


def _as_set(m):
    return m if isinstance(m, MeasurementSet) else MeasurementSet(m)


def differences(m1, m2) -> np.ndarray:
    """Signed differences ``m1 - m2`` after aligning ``m2`` to ``m1``'s ids."""
    m1, m2 = _as_set(m1), _as_set(m2)
    if len(m1) == 0:
        raise InsufficientDataError("empty measurement set")
    if len(m1) != len(m2) or set(m1.ids) != set(m2.ids):
        raise DomainError("measurement sets are not aligned by id")
    return m1.values - m2.aligned_to(m1.ids)


@dataclass
class AgreementReport:
    bias: float
    ci95: float
    mean_abs: float
    median_abs: float
    n: int
    differences: np.ndarray = field(repr=False)
    ci_mode: str = "mean_abs"

    def row(self, **labels) -> dict:
        out = dict(labels)
        out.update(
            n=self.n,
            bias=self.bias,
            ci95=self.ci95,
            mean_l1=self.mean_abs,
            median_l1=self.median_abs,
            ci_mode=self.ci_mode,
        )
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["differences"] = np.asarray(self.differences).tolist()
        return d


def agreement_report(m1, m2, ci_mode: str = "mean_abs") -> AgreementReport:
    if ci_mode not in CI_MODES:
        raise DomainError(f"ci_mode must be one of {CI_MODES}, got {ci_mode!r}")
    d = differences(m1, m2)
    if len(d) < 2:
        raise InsufficientDataError(f"need at least 2 cases, got {len(d)}")
    abs_d = np.abs(d)
    bias = float(np.mean(d))
    mean_abs = float(np.mean(abs_d))
    centre = mean_abs if ci_mode == "mean_abs" else bias
    ci95 = Z95 * float(np.sqrt(np.mean((centre - d) ** 2)))
    return AgreementReport(bias, ci95, mean_abs, float(np.median(abs_d)), len(d), d, ci_mode)


def paired_t_test(d_a, d_b):
    """Two-sided paired t-test on ``|d_a| - |d_b|``.

    Returns ``(t, p)``; negative ``t`` means method A has smaller errors.
    """
    a, b = np.abs(np.asarray(d_a, float)), np.abs(np.asarray(d_b, float))
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("paired samples must be 1D and of equal length")
    n = len(a)
    if n < 2:
        raise InsufficientDataError("need at least 2 pairs")
    delta = a - b
    sd = np.std(delta, ddof=1)
    if not sd > 0 or sd <= 1e-12 * max(1.0, np.abs(delta).max()):
        raise DegenerateTestError("paired differences have zero variance")
    t = float(np.mean(delta) / (sd / np.sqrt(n)))
    p = float(2 * stats.t.sf(abs(t), df=n - 1))
    return t, p


@dataclass(frozen=True)
class BlandAltman:
    points: np.ndarray  # (n, 2): mean of the two methods, difference
    bias: float
    lower: float
    upper: float


def bland_altman_points(m1, m2, ci_mode: str = "mean_abs") -> BlandAltman:
    m1, m2 = _as_set(m1), _as_set(m2)
    d = differences(m1, m2)
    means = (m1.values + m2.aligned_to(m1.ids)) / 2
    if len(d) >= 2:
        rep = agreement_report(m1, m2, ci_mode)
        bias, ci = rep.bias, rep.ci95
    else:
        bias, ci = float(d.mean()), 0.0
    return BlandAltman(np.column_stack([means, d]), bias, bias - ci, bias + ci)


def plot_bland_altman(ba: BlandAltman, path, title: Optional[str] = None, units: str = "mm"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(ba.points[:, 0], ba.points[:, 1], s=10, alpha=0.7)
    ax.axhline(ba.bias, color="k", lw=1)
    for y in (ba.lower, ba.upper):
        ax.axhline(y, color="k", lw=1, ls="--")
    ax.set_xlabel(f"mean of measurements [{units}]")
    ax.set_ylabel(f"difference [{units}]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in REPORT_COLUMNS})


def write_report_json(rows: Sequence[dict], path) -> None:
    Path(path).write_text(json.dumps([{k: r.get(k) for k in REPORT_COLUMNS} for r in rows], indent=2))
