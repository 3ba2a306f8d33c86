"""Evaluation formulas for the closed-loop experiments.

Information transfer rate, sustained-control index, activation rates,
grasp success rate, per-phase timing decomposition, the product-limit
survival estimator and Holm's step-down multiple-comparison procedure.
All functions are pure and operate on plain arrays / trial records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class EmptyTrace(Exception):
    pass


class ZeroTotal(Exception):
    pass


class ZeroTrials(Exception):
    pass


class ZeroBaseline(Exception):
    pass


class EmptyInput(Exception):
    pass


class NoCompletedTrials(Exception):
    pass


class ItrResult(NamedTuple):
    bits_per_min: float
    below_chance: bool


def itr_detail(n_commands: int, accuracy: float, decision_time_s: float) -> ItrResult:
    """Bits/min for an n-command selection task.

    Accuracy at or below chance reports 0 bits/min (flagged when strictly
    below) instead of a negative rate. The p*log2(p) terms use the
    0*log(0) = 0 convention, so accuracy 1.0 is exact.
    """
    if n_commands < 2:
        raise ValueError("need at least 2 commands")
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0,1], got {accuracy}")
    if decision_time_s <= 0:
        raise ValueError("decision time must be positive")
    chance = 1.0 / n_commands
    if accuracy < chance:
        return ItrResult(0.0, True)
    if accuracy <= chance:
        return ItrResult(0.0, False)  # exactly chance: zero bits
    bits = math.log2(n_commands)
    if accuracy > 0.0:
        bits += accuracy * math.log2(accuracy) if accuracy < 1.0 else 0.0
    if accuracy < 1.0:
        bits += (1.0 - accuracy) * math.log2((1.0 - accuracy) / (n_commands - 1))
    return ItrResult(bits * 60.0 / decision_time_s, False)


def itr(n_commands: int, accuracy: float, decision_time_s: float) -> float:
    return itr_detail(n_commands, accuracy, decision_time_s).bits_per_min


@dataclass(frozen=True)
class ControlTrace:
    """Signed lateral classifier output over one cued interval.

    `times` are seconds (ascending), `s` values in [-1, 1], and `cued`
    is -1 (left) or +1 (right). When the intent changes mid-trace,
    `cued` may be an array aligned with `times`.
    """

    times: np.ndarray
    s: np.ndarray
    cued: np.ndarray | int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if t.ndim != 1 or t.shape != s.shape:
            raise ValueError("times and s must be 1-d arrays of equal length")
        if t.size >= 2 and np.any(np.diff(t) < 0):
            raise ValueError("times must be ascending")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "s", s)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


def sci(trace: ControlTrace) -> float:
    """Time-normalized trapezoidal integral of cue-congruent positive output."""
    if trace.times.size == 0:
        raise EmptyTrace("control trace is empty")
    if trace.times.size == 1:
        return float(max(0.0, trace.s[0] * np.asarray(trace.cued).item()))
    d = np.broadcast_to(np.asarray(trace.cued, dtype=float), trace.s.shape)
    congruent = np.maximum(0.0, trace.s * d)
    total = np.trapezoid(congruent, trace.times)
    return float(total / trace.duration)


def far(false_activations: int, total_decisions: int) -> float:
    if total_decisions <= 0:
        raise ZeroTotal("total decisions must be positive")
    return false_activations / total_decisions


def gsr(successes: int, trials: int) -> float:
    if trials <= 0:
        raise ZeroTrials("trial count must be positive")
    return successes / trials


def sci_star(accuracy: float, fpr: float, decision_time_s: float) -> float:
    """Composite efficiency index: accuracy * (1-FPR) * (1s / decision time).

    This composite is defined by this artifact; it is not a standard
    quantity and is labeled as such wherever reported.
    """
    if decision_time_s <= 0:
        raise ValueError("decision time must be positive")
    return accuracy * (1.0 - fpr) * (1.0 / decision_time_s)


class TimingSummary(NamedTuple):
    mean_select: float
    sd_select: float
    mean_plan: float
    sd_plan: float
    mean_exec: float
    sd_exec: float
    mean_total: float
    sd_total: float
    n: int


def timing_summary(phases: Sequence[tuple[float, float, float]]) -> TimingSummary:
    """Means +/- SD of (select, plan, exec) phases; totals are row-wise sums.

    SD is the population standard deviation so a single trial reports 0.
    """
    if len(phases) == 0:
        raise NoCompletedTrials("no completed trials to summarize")
    arr = np.asarray(phases, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("each trial needs (t_select, t_plan, t_exec)")

    def _std(col: np.ndarray) -> float:
        # constant data must report exactly 0, not mean-rounding residue
        return 0.0 if np.ptp(col) == 0.0 else float(col.std())

    totals = arr.sum(axis=1)
    m = arr.mean(axis=0)
    return TimingSummary(
        float(m[0]),
        _std(arr[:, 0]),
        float(m[1]),
        _std(arr[:, 1]),
        float(m[2]),
        _std(arr[:, 2]),
        float(totals.mean()),
        _std(totals),
        len(arr),
    )


@dataclass(frozen=True)
class KmCurve:
    """Product-limit survival estimate as a right-continuous step function."""

    event_times: np.ndarray  # distinct times where S drops
    survival: np.ndarray  # S value from each event time onward

    def at(self, t: float) -> float:
        idx = np.searchsorted(self.event_times, t, side="right")
        return 1.0 if idx == 0 else float(self.survival[idx - 1])

    def __call__(self, t):
        return np.array([self.at(x) for x in np.atleast_1d(t)])


def km_estimate(durations: Sequence[float], censored: Sequence[bool] | None = None) -> KmCurve:
    """Kaplan-Meier estimator; censored observations shrink the risk set
    without contributing an event step."""
    d = np.asarray(durations, dtype=float)
    if d.size == 0:
        raise EmptyInput("no durations")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    c = np.zeros(d.size, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    if c.shape != d.shape:
        raise ValueError("censored flags must match durations")

    order = np.argsort(d, kind="stable")
    d, c = d[order], c[order]
    times, surv = [], []
    s = 1.0
    i = 0
    n = d.size
    while i < n:
        t = d[i]
        events = 0
        removed = 0
        while i < n and d[i] == t:
            events += 0 if c[i] else 1
            removed += 1
            i += 1
        at_risk = n - (i - removed)
        if events > 0:
            s *= 1.0 - events / at_risk
            times.append(t)
            surv.append(s)
    return KmCurve(np.asarray(times), np.asarray(surv))


def holm(p_values: Sequence[float], alpha: float = 0.05) -> list[bool]:
    """Step-down rejection flags, returned in the input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0,1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    reject = np.zeros(m, dtype=bool)
    for rank, idx in enumerate(order):
        if p[idx] <= alpha / (m - rank):
            reject[idx] = True
        else:
            break
    return reject.tolist()


def erd_percent(p_task: float, p_base: float) -> float:
    """Relative bandpower change in percent; negative values mark desynchronization."""
    if p_base <= 0:
        raise ZeroBaseline("baseline power must be positive")
    return 100.0 * (p_task - p_base) / p_base


@dataclass
class MetricsReport:
    """One row of the evaluation tables; rates as fractions in [0,1]."""

    accuracy: float = 0.0
    far: float = 0.0
    fpr: float = 0.0
    mean_decision_time_s: float = 0.0
    itr_bits_per_min: float = 0.0
    itr_below_chance: bool = False
    sci: float = 0.0
    gsr: float = 0.0
    t_select: float = 0.0
    t_plan: float = 0.0
    t_exec: float = 0.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("accuracy", "far", "fpr", "gsr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")

    @property
    def t_total(self) -> float:
        return self.t_select + self.t_plan + self.t_exec
