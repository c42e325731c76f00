"""Detection and correction metrics.

Case-level detection is scored with precision/recall/F1 (anomalous is the
positive class). Correction quality uses similarity derived from the
restricted (optimal string alignment) Damerau-Levenshtein distance, and
event-level anomaly localization recovers the edit script between an input
trace and its correction by backtracking the distance dynamic program.
"""

import json
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .anomaly import ANOMALOUS, NORMAL, LabeledDataset, TokenVocab
from .errors import DataError
from .model import Model


def dl_distance(s1: Sequence, s2: Sequence) -> int:
    """Restricted Damerau-Levenshtein (optimal string alignment) distance.

    Minimum number of insertions, deletions, substitutions and adjacent
    transpositions turning s1 into s2, with each element pair transposed at
    most once. Iterative DP over three rolling rows.
    """
    if s1 == s2:
        return 0
    n1, n2 = len(s1), len(s2)
    if n1 == 0:
        return n2
    if n2 == 0:
        return n1
    prev2: list[int] = []
    prev = list(range(n2 + 1))
    for i in range(1, n1 + 1):
        cur = [i] + [0] * n2
        c1 = s1[i - 1]
        for j in range(1, n2 + 1):
            cost = prev[j - 1] if c1 == s2[j - 1] else prev[j - 1] + 1
            dele = prev[j] + 1
            if dele < cost:
                cost = dele
            ins = cur[j - 1] + 1
            if ins < cost:
                cost = ins
            if i > 1 and j > 1 and c1 == s2[j - 2] and s1[i - 2] == s2[j - 1]:
                trans = prev2[j - 2] + 1
                if trans < cost:
                    cost = trans
            cur[j] = cost
        prev2, prev = prev, cur
    return prev[n2]


def dl_similarity(s1: Sequence, s2: Sequence) -> float:
    """1 - distance / max(len); two empty sequences count as identical."""
    longest = max(len(s1), len(s2))
    if longest == 0:
        return 1.0
    return 1.0 - dl_distance(s1, s2) / longest


def _dl_matrix(s1: Sequence, s2: Sequence) -> list[list[int]]:
    n1, n2 = len(s1), len(s2)
    d = [[0] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(n1 + 1):
        d[i][0] = i
    for j in range(n2 + 1):
        d[0][j] = j
    for i in range(1, n1 + 1):
        for j in range(1, n2 + 1):
            cost = 0 if s1[i - 1] == s2[j - 1] else 1
            best = min(d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1)
            if (i > 1 and j > 1 and s1[i - 1] == s2[j - 2]
                    and s1[i - 2] == s2[j - 1]):
                best = min(best, d[i - 2][j - 2] + 1)
            d[i][j] = best
    return d


def localize_events(input_seq: Sequence, corrected_seq: Sequence) -> list[tuple[int, str]]:
    """Edit script from input to corrected trace, via DP backtracking.

    Each entry is (position in the input trace, edit kind); kinds are
    "substitute", "transpose", "delete" and "insert". The script length
    equals dl_distance(input_seq, corrected_seq); every entry is one
    detected event-level anomaly.
    """
    d = _dl_matrix(input_seq, corrected_seq)
    script: list[tuple[int, str]] = []
    i, j = len(input_seq), len(corrected_seq)
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0 and input_seq[i - 1] == corrected_seq[j - 1] \
                and here == d[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == d[i - 1][j - 1] + 1:
            script.append((i - 1, "substitute"))
            i, j = i - 1, j - 1
        elif (i > 1 and j > 1 and input_seq[i - 1] == corrected_seq[j - 2]
              and input_seq[i - 2] == corrected_seq[j - 1]
              and here == d[i - 2][j - 2] + 1):
            script.append((i - 2, "transpose"))
            i, j = i - 2, j - 2
        elif i > 0 and here == d[i - 1][j] + 1:
            script.append((i - 1, "delete"))
            i -= 1
        else:
            script.append((i, "insert"))
            j -= 1
    script.reverse()
    return script


def classify(prob: float) -> int:
    """Anomalous iff the detection probability strictly exceeds 0.5."""
    return ANOMALOUS if prob > 0.5 else NORMAL


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, predicted: int, truth: int) -> None:
        if truth == ANOMALOUS:
            if predicted == ANOMALOUS:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if predicted == ANOMALOUS:
                self.fp += 1
            else:
                self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def f_score(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(precision, recall, F1) with zero denominators scored as 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def correct_trace(logits: Union[np.ndarray, "object"], vocab: TokenVocab) -> list[int]:
    """Per-position argmax over the token classes, with [PAD] (and any stray
    [CLS]) removed anywhere in the sequence; an unfilled [MISSING] stays so
    callers can flag it."""
    data = getattr(logits, "data", logits)
    ids = np.asarray(data).argmax(axis=-1)
    drop = (vocab.pad_id, vocab.cls_id)
    return [int(t) for t in ids if int(t) not in drop]


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    num_traces: int
    sim_corrected_anomalous: Optional[float]
    sim_input_anomalous: Optional[float]
    sim_corrected_normal: Optional[float]
    inference_seconds: float
    config: dict

    def as_dict(self, include_timing: bool = True) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.counts.tp, "fp": self.counts.fp,
            "tn": self.counts.tn, "fn": self.counts.fn,
            "num_traces": self.num_traces,
            "sim_corrected_anomalous": self.sim_corrected_anomalous,
            "sim_input_anomalous": self.sim_input_anomalous,
            "sim_corrected_normal": self.sim_corrected_normal,
            "config": self.config,
        }
        if include_timing:
            out["inference_seconds"] = self.inference_seconds
        return out

    def canonical_json(self) -> str:
        """Deterministic payload: timing excluded, keys sorted."""
        return json.dumps(self.as_dict(include_timing=False), sort_keys=True)

    CSV_FIELDS = (
        "precision", "recall", "f1", "tp", "fp", "tn", "fn", "num_traces",
        "sim_corrected_anomalous", "sim_input_anomalous", "sim_corrected_normal",
        "inference_seconds",
    )

    def csv_row(self) -> list:
        d = self.as_dict()
        return [d[k] for k in self.CSV_FIELDS]


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def evaluate_model(model: Model, dataset: LabeledDataset,
                   batch_size: int = 128) -> EvalReport:
    """Classify and correct every trace; aggregate detection and similarity
    metrics. Wall-clock covers the forward passes only."""
    if not dataset.items:
        raise DataError("cannot evaluate an empty dataset")
    if dataset.l_max != model.config.max_len:
        raise DataError(
            f"dataset l_max={dataset.l_max} does not match model max_len={model.config.max_len}"
        )
    if dataset.vocab.size != model.config.vocab_size:
        raise DataError(
            f"dataset vocab size {dataset.vocab.size} does not match model checkpoint"
        )

    inputs = dataset.inputs_matrix()
    n = inputs.shape[0]
    probs = np.empty(n, dtype=np.float64)
    preds = np.empty((n, dataset.l_max - 1), dtype=np.int64)
    inference = 0.0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        t0 = time.perf_counter()
        out = model.forward(inputs[sl])
        inference += time.perf_counter() - t0
        probs[sl] = out.anomaly_prob.data
        preds[sl] = out.logits.data.argmax(axis=-1)

    vocab = dataset.vocab
    counts = ConfusionCounts()
    sims_corrected_anom: list[float] = []
    sims_input_anom: list[float] = []
    sims_corrected_norm: list[float] = []
    drop = (vocab.pad_id, vocab.cls_id)
    for idx, item in enumerate(dataset.items):
        counts.add(classify(probs[idx]), item.label)
        corrected = [int(t) for t in preds[idx] if int(t) not in drop]
        original = list(int(t) for t in item.target_tokens[:item.original_length])
        if item.label == ANOMALOUS:
            sims_corrected_anom.append(dl_similarity(corrected, original))
            mutated = list(int(t) for t in item.input_tokens[1:1 + item.mutated_length])
            sims_input_anom.append(dl_similarity(mutated, original))
        else:
            sims_corrected_norm.append(dl_similarity(corrected, original))

    precision, recall, f1 = f_score(counts)
    return EvalReport(
        precision=precision, recall=recall, f1=f1, counts=counts, num_traces=n,
        sim_corrected_anomalous=_mean(sims_corrected_anom),
        sim_input_anomalous=_mean(sims_input_anom),
        sim_corrected_normal=_mean(sims_corrected_norm),
        inference_seconds=inference,
        config=dataset.config.as_dict(),
    )
