"""Verification scoring: cosine trial scores, equal error rate, and minimum
detection cost.

The decision rule everywhere is: accept a trial when its score is greater
than or equal to the threshold. Candidate thresholds are the distinct
scores plus one value above the maximum (reject-all), which covers every
achievable operating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MissingUtteranceError(KeyError):
    """A trial references utterance ids absent from the embedding store."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        super().__init__("missing utterances: " + ", ".join(map(str, self.missing_ids)))


@dataclass
class Trial:
    enroll_utt: str
    test_utt: str
    is_target: bool


@dataclass
class TrialScoreSet:
    scores: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        if self.scores.shape != self.is_target.shape or self.scores.ndim != 1:
            raise ValueError("scores and is_target must be aligned 1-D arrays")
        if self.scores.size and not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return self.scores.size


def cosine_score(e1, e2) -> float:
    """Inner product of the unit-normalized vectors, in [-1, 1]."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cannot cosine-score a zero vector")
    return float(np.dot(e1, e2) / (n1 * n2))


def _operating_points(scores, is_target):
    """Miss and false-acceptance rates at every candidate threshold.

    Thresholds ascend; miss rates are nondecreasing, false-acceptance rates
    nonincreasing. Returns (thresholds, p_miss, p_fa).
    """
    target_scores = np.sort(scores[is_target])
    nontarget_scores = np.sort(scores[~is_target])
    if target_scores.size == 0 or nontarget_scores.size == 0:
        raise ValueError("need at least one target and one nontarget trial")
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)  # reject-all point
    # accept iff score >= t: misses are targets strictly below t
    p_miss = np.searchsorted(target_scores, thresholds, side="left") / target_scores.size
    p_fa = (nontarget_scores.size
            - np.searchsorted(nontarget_scores, thresholds, side="left")) / nontarget_scores.size
    return thresholds, p_miss, p_fa


def compute_eer(s: TrialScoreSet):
    """Equal error rate and the threshold where it occurs.

    Sweeps all distinct score thresholds; where no threshold makes the miss
    and false-acceptance rates exactly equal, the crossing is found by
    linear interpolation between the two adjacent operating points.
    Returns (eer, threshold).
    """
    thresholds, p_miss, p_fa = _operating_points(s.scores, s.is_target)
    diff = p_miss - p_fa
    k = int(np.searchsorted(diff >= 0.0, True))  # first nonnegative; diff is nondecreasing
    if diff[k] == 0.0:
        return float(p_miss[k]), float(thresholds[k])
    # segment from point k-1 (diff < 0) to point k (diff > 0)
    x1, y1 = p_fa[k - 1], p_miss[k - 1]
    x2, y2 = p_fa[k], p_miss[k]
    frac = (x1 - y1) / ((y2 - y1) - (x2 - x1))
    eer = x1 + frac * (x2 - x1)
    threshold = thresholds[k - 1] + frac * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def compute_mindcf(s: TrialScoreSet, p_target: float = 0.01,
                   c_miss: float = 1.0, c_fa: float = 1.0):
    """Minimum normalized detection cost over all thresholds.

    DCF(t) = c_miss * p_target * P_miss(t) + c_fa * (1 - p_target) * P_fa(t),
    normalized by min(c_miss * p_target, c_fa * (1 - p_target)).
    Returns (min_dcf, threshold).
    """
    thresholds, p_miss, p_fa = _operating_points(s.scores, s.is_target)
    dcf = c_miss * p_target * p_miss + c_fa * (1.0 - p_target) * p_fa
    best = int(np.argmin(dcf))
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(dcf[best] / norm), float(thresholds[best])


def score_trials(trials, store) -> TrialScoreSet:
    """Cosine-score a trial list against an id -> embedding store.

    Order is preserved. All missing utterance ids are collected and
    reported together.
    """
    missing = []
    for t in trials:
        for utt in (t.enroll_utt, t.test_utt):
            if utt not in store:
                missing.append(utt)
    if missing:
        raise MissingUtteranceError(sorted(set(missing)))
    scores = np.array([cosine_score(store[t.enroll_utt], store[t.test_utt])
                       for t in trials])
    labels = np.array([t.is_target for t in trials], dtype=bool)
    return TrialScoreSet(scores, labels)


# ---------------------------------------------------------------------------
# file formats


def load_trials(path) -> list:
    """Read a trial list: one `<label> <enroll> <test>` line per trial,
    label 1 for target, 0 for nontarget, keys are opaque."""
    trials = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3 or fields[0] not in ("0", "1"):
                raise ValueError(f"{path}:{line_no}: expected '<0|1> <enroll> <test>'")
            trials.append(Trial(fields[1], fields[2], fields[0] == "1"))
    return trials


def save_trials(path, trials) -> None:
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{int(t.is_target)} {t.enroll_utt} {t.test_utt}\n")


def save_scores(path, s: TrialScoreSet) -> None:
    """Write one `<score> <label>` line per trial, scores at 6 decimals."""
    with open(path, "w") as f:
        for score, label in zip(s.scores, s.is_target):
            f.write(f"{score:.6f} {int(label)}\n")


def load_scores(path) -> TrialScoreSet:
    scores, labels = [], []
    with open(path) as f:
        for line in f:
            fields = line.split()
            if not fields:
                continue
            scores.append(float(fields[0]))
            labels.append(fields[1] == "1")
    return TrialScoreSet(np.array(scores), np.array(labels, dtype=bool))
