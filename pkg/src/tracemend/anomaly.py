"""Self-supervised anomaly injection and labeled-dataset construction.

Clean traces are mutated with six anomaly kinds at configurable case- and
event-level proportions. Mutations that are behaviorally normal (interleaving
swaps, or collisions with an existing variant) are relabeled as normal, so
the classifier learns behavior rather than the injection mechanism.
"""

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ._util import round_half_up, rng_for
from .errors import ConfigError, DataError, DatasetFormatError, EmptyLogError, InjectionError
from .eventlog import BehavioralProfile, EventLog, VariantSet

NORMAL = 0
ANOMALOUS = 1

_MAX_KIND_RETRIES = 100


class AnomalyKind(enum.Enum):
    MISSING = "missing"   # activity identifier lost, placeholder token recorded
    SKIP = "skip"         # event removed entirely
    REPLACE = "replace"   # activity replaced by a different random one
    INSERT = "insert"     # random event inserted
    EARLY = "early"       # event advanced one step (adjacent swap)
    LATE = "late"         # event postponed one step (adjacent swap)


ALL_KINDS = tuple(AnomalyKind)


@dataclass(frozen=True)
class TokenVocab:
    """Activity ids 0..h-1 plus [PAD]=h, [CLS]=h+1, [MISSING]=h+2."""

    num_activities: int

    @property
    def pad_id(self) -> int:
        return self.num_activities

    @property
    def cls_id(self) -> int:
        return self.num_activities + 1

    @property
    def missing_id(self) -> int:
        return self.num_activities + 2

    @property
    def size(self) -> int:
        return self.num_activities + 3

    def is_activity(self, token: int) -> bool:
        return 0 <= token < self.num_activities

    def token_name(self, token: int, activity_names: Optional[Sequence[str]] = None) -> str:
        if token == self.pad_id:
            return "[PAD]"
        if token == self.cls_id:
            return "[CLS]"
        if token == self.missing_id:
            return "[MISSING]"
        if activity_names is not None and self.is_activity(token):
            return activity_names[token]
        return str(token)


@dataclass(frozen=True)
class InjectionConfig:
    """How much to corrupt and with which anomaly kinds.

    Exactly one of r_act (events corrupted as a fraction of trace length)
    and fixed_count (absolute number of corrupted events) must be set.
    """

    r_case: float = 0.5
    r_act: Optional[float] = 0.5
    fixed_count: Optional[int] = None
    seed: int = 0
    kinds: tuple[AnomalyKind, ...] = ALL_KINDS
    relabel_variant_matches: bool = True

    def __post_init__(self):
        if not 0.0 <= self.r_case <= 1.0:
            raise ConfigError(f"r_case must be in [0, 1], got {self.r_case}")
        if (self.r_act is None) == (self.fixed_count is None):
            raise ConfigError("exactly one of r_act and fixed_count must be set")
        if self.r_act is not None and not 0.0 < self.r_act <= 1.0:
            raise ConfigError(f"r_act must be in (0, 1], got {self.r_act}")
        if self.fixed_count is not None and self.fixed_count < 1:
            raise ConfigError(f"fixed_count must be >= 1, got {self.fixed_count}")
        if not self.kinds:
            raise ConfigError("at least one anomaly kind must be enabled")
        object.__setattr__(self, "kinds", tuple(self.kinds))

    def as_dict(self) -> dict:
        return {
            "r_case": self.r_case,
            "r_act": self.r_act,
            "fixed_count": self.fixed_count,
            "seed": self.seed,
            "kinds": [k.value for k in self.kinds],
            "relabel_variant_matches": self.relabel_variant_matches,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionConfig":
        return cls(
            r_case=d["r_case"],
            r_act=d.get("r_act"),
            fixed_count=d.get("fixed_count"),
            seed=d.get("seed", 0),
            kinds=tuple(AnomalyKind(k) for k in d.get("kinds", [k.value for k in ALL_KINDS])),
            relabel_variant_matches=d.get("relabel_variant_matches", True),
        )


@dataclass(frozen=True)
class AnomalyRecord:
    """Audit entry for one applied mutation.

    position indexes the sequence as it stood when the mutation was applied;
    because mutations are applied at strictly descending positions this is
    also the index into the original trace. For the swap kinds,
    original_activity is the event that moved and new_activity its partner.
    """

    kind: AnomalyKind
    position: int
    original_activity: Optional[int] = None
    new_activity: Optional[int] = None

    def as_list(self) -> list:
        return [self.kind.value, self.position, self.original_activity, self.new_activity]

    @classmethod
    def from_list(cls, row: Sequence) -> "AnomalyRecord":
        return cls(AnomalyKind(row[0]), row[1], row[2], row[3])


@dataclass
class LabeledTrace:
    input_tokens: np.ndarray      # (l_max,) [CLS] + mutated + [PAD]...
    target_tokens: np.ndarray     # (l_max - 1,) original + [PAD]...
    label: int                    # NORMAL or ANOMALOUS
    records: tuple[AnomalyRecord, ...]
    original_length: int
    mutated_length: int
    case_id: str = ""


@dataclass
class LabeledDataset:
    items: list[LabeledTrace]
    vocab: TokenVocab
    l_max: int
    config: InjectionConfig
    activity_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.items)

    def inputs_matrix(self) -> np.ndarray:
        return np.stack([it.input_tokens for it in self.items])

    def targets_matrix(self) -> np.ndarray:
        return np.stack([it.target_tokens for it in self.items])

    def labels_array(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.int64)


def max_padded_length(log: EventLog, r_act: Optional[float] = None,
                      fixed_count: Optional[int] = None) -> int:
    """Input length that survives the all-Insert worst case on the longest trace.

    One [CLS] slot plus M plus ceil(r_act*M) extra events (or fixed_count in
    fixed-count mode), where M is the longest case length in the log.
    """
    if not log.traces:
        raise EmptyLogError("cannot size sequences for an empty log")
    if (r_act is None) == (fixed_count is None):
        raise ConfigError("exactly one of r_act and fixed_count must be given")
    m = max(len(t) for t in log.traces)
    if r_act is not None:
        if not 0.0 < r_act <= 1.0:
            raise ConfigError(f"r_act must be in (0, 1], got {r_act}")
        extra = math.ceil(r_act * m)
    else:
        extra = fixed_count
    return 1 + m + extra


def padded_length_for(log: EventLog, config: InjectionConfig) -> int:
    return max_padded_length(log, r_act=config.r_act, fixed_count=config.fixed_count)


def apply_anomaly(seq: Sequence[int], kind: AnomalyKind, pos: int,
                  rng: np.random.Generator, vocab: TokenVocab) -> tuple[list[int], AnomalyRecord]:
    """Apply one mutation at pos; returns the new sequence and its audit record.

    Invalid positions raise rather than clamp, so callers cannot silently
    corrupt a different event than they asked for.
    """
    seq = list(seq)
    n = len(seq)

    def _check(ok: bool):
        if not ok:
            raise InjectionError(f"position {pos} invalid for {kind.value} on length-{n} sequence")

    if kind is AnomalyKind.MISSING:
        _check(0 <= pos < n)
        record = AnomalyRecord(kind, pos, original_activity=seq[pos])
        seq[pos] = vocab.missing_id
    elif kind is AnomalyKind.SKIP:
        _check(0 <= pos < n)
        record = AnomalyRecord(kind, pos, original_activity=seq[pos])
        del seq[pos]
    elif kind is AnomalyKind.REPLACE:
        _check(0 <= pos < n)
        old = seq[pos]
        new = _random_activity(rng, vocab, exclude=old)
        record = AnomalyRecord(kind, pos, original_activity=old, new_activity=new)
        seq[pos] = new
    elif kind is AnomalyKind.INSERT:
        _check(0 <= pos <= n)
        new = _random_activity(rng, vocab)
        record = AnomalyRecord(kind, pos, new_activity=new)
        seq.insert(pos, new)
    elif kind is AnomalyKind.EARLY:
        _check(1 <= pos < n)
        record = AnomalyRecord(kind, pos, original_activity=seq[pos], new_activity=seq[pos - 1])
        seq[pos - 1], seq[pos] = seq[pos], seq[pos - 1]
    elif kind is AnomalyKind.LATE:
        _check(0 <= pos < n - 1)
        record = AnomalyRecord(kind, pos, original_activity=seq[pos], new_activity=seq[pos + 1])
        seq[pos], seq[pos + 1] = seq[pos + 1], seq[pos]
    else:  # pragma: no cover
        raise InjectionError(f"unknown anomaly kind {kind!r}")
    return seq, record


def _random_activity(rng: np.random.Generator, vocab: TokenVocab,
                     exclude: Optional[int] = None) -> int:
    """Uniform draw over real activities (never special tokens)."""
    h = vocab.num_activities
    if exclude is None or not 0 <= exclude < h:
        return int(rng.integers(h))
    if h < 2:
        raise InjectionError("cannot replace an activity in a single-activity vocabulary")
    draw = int(rng.integers(h - 1))
    return draw if draw < exclude else draw + 1


def _kinds_valid(pairs: list[tuple[AnomalyKind, int]], trace_len: int) -> bool:
    """Simulate the descending application and check every bound as it will
    hold at application time (earlier Skips/Inserts change the length)."""
    net = 0
    for kind, pos in pairs:
        length = trace_len + net
        if kind is AnomalyKind.INSERT:
            if pos > length:
                return False
            net += 1
        elif kind is AnomalyKind.EARLY:
            if not 1 <= pos < length:
                return False
        elif kind is AnomalyKind.LATE:
            if not 0 <= pos < length - 1:
                return False
        else:
            if pos >= length:
                return False
            if kind is AnomalyKind.SKIP:
                net -= 1
    return trace_len + net >= 1


def select_injections(trace_len: int, config: InjectionConfig,
                      rng: np.random.Generator) -> list[tuple[AnomalyKind, int]]:
    """Choose (kind, position) pairs for one trace, descending by position.

    k = max(1, round(r_act * len)) in ratio mode, capped at the trace length
    in fixed-count mode. Positions are distinct, so applying at descending
    positions never shifts a pending target. Kind/position combinations that
    cannot be applied (swaps at the boundary, Skips emptying the trace) are
    resampled; after 100 attempts the trace is deemed uninjectable.
    """
    if trace_len < 1:
        raise InjectionError("cannot inject into an empty trace")
    if config.r_act is not None:
        k = max(1, round_half_up(config.r_act * trace_len))
    else:
        k = min(config.fixed_count, trace_len)
    positions = sorted((int(p) for p in rng.choice(trace_len, size=k, replace=False)),
                       reverse=True)
    for _ in range(_MAX_KIND_RETRIES):
        kinds = [config.kinds[int(i)] for i in rng.integers(len(config.kinds), size=k)]
        pairs = list(zip(kinds, positions))
        if _kinds_valid(pairs, trace_len):
            return pairs
    raise InjectionError(
        f"no valid kind assignment for {k} injections into a length-{trace_len} trace "
        f"with kinds {[k.value for k in config.kinds]} after {_MAX_KIND_RETRIES} attempts"
    )


def relabel(mutated: Sequence[int], original: Sequence[int],
            records: Sequence[AnomalyRecord], variants: VariantSet,
            profile: BehavioralProfile, *, use_variants: bool = True) -> int:
    """Decide whether a mutated trace is still behaviorally normal.

    Normal iff every mutation is a swap of an interleaving-related pair, or
    the mutated sequence coincides with a known variant of the log.
    """
    if not records:
        return NORMAL
    h = profile.num_activities
    swaps_only = all(r.kind in (AnomalyKind.EARLY, AnomalyKind.LATE) for r in records)
    if swaps_only and all(
        0 <= r.original_activity < h and 0 <= r.new_activity < h
        and profile.interleaving(r.original_activity, r.new_activity)
        for r in records
    ):
        return NORMAL
    if use_variants:
        if all(0 <= t < h for t in mutated) and mutated in variants:
            return NORMAL
    return ANOMALOUS


def _tokenize(seq: Sequence[int], l_max: int, vocab: TokenVocab,
              with_cls: bool) -> np.ndarray:
    body = list(seq)
    length = l_max if with_cls else l_max - 1
    tokens = ([vocab.cls_id] if with_cls else []) + body
    tokens.extend([vocab.pad_id] * (length - len(tokens)))
    return np.array(tokens, dtype=np.int64)


def build_dataset(log: EventLog, config: InjectionConfig, variants: VariantSet,
                  profile: BehavioralProfile, l_max: Optional[int] = None) -> LabeledDataset:
    """Inject anomalies into round(r_case*n) seeded-chosen traces and tokenize.

    Every input gets a [CLS] head and [PAD] fill to l_max; targets are the
    original traces padded to l_max-1 (no [CLS] slot). Each trace draws its
    own generator from (seed, trace index), so results are independent of
    the iteration order and reproducible per seed.
    """
    if not log.traces:
        raise EmptyLogError("cannot build a dataset from an empty log")
    vocab = TokenVocab(num_activities=len(log.vocab))
    needed = padded_length_for(log, config)
    if l_max is None:
        l_max = needed
    if l_max < needed:
        longest = max(log.traces, key=len)
        raise DataError(
            f"l_max={l_max} cannot hold trace {longest.case_id!r} "
            f"(length {len(longest)}) after worst-case injection (needs {needed})"
        )

    n = len(log.traces)
    n_inject = round_half_up(config.r_case * n)
    selection = rng_for(config.seed, 0)
    injected = set(int(i) for i in selection.choice(n, size=n_inject, replace=False))

    items: list[LabeledTrace] = []
    for idx, trace in enumerate(log.traces):
        original = list(trace.activities)
        if idx in injected:
            rng = rng_for(config.seed, idx + 1)
            mutated = list(original)
            records = []
            for kind, pos in select_injections(len(original), config, rng):
                mutated, record = apply_anomaly(mutated, kind, pos, rng, vocab)
                records.append(record)
            label = relabel(mutated, original, records, variants, profile,
                            use_variants=config.relabel_variant_matches)
            records = tuple(records)
        else:
            mutated = original
            records = ()
            label = NORMAL
        items.append(LabeledTrace(
            input_tokens=_tokenize(mutated, l_max, vocab, with_cls=True),
            target_tokens=_tokenize(original, l_max, vocab, with_cls=False),
            label=label,
            records=records,
            original_length=len(original),
            mutated_length=len(mutated),
            case_id=trace.case_id,
        ))
    return LabeledDataset(items=items, vocab=vocab, l_max=l_max, config=config,
                          activity_names=log.vocab.names)


_DATASET_FORMAT = "tracemend-dataset"
_DATASET_VERSION = 1


def save_dataset(dataset: LabeledDataset, path: Union[str, Path]) -> None:
    """Write the versioned JSON-lines dataset file (header + one row per trace)."""
    header = {
        "format": _DATASET_FORMAT,
        "version": _DATASET_VERSION,
        "num_activities": dataset.vocab.num_activities,
        "l_max": dataset.l_max,
        "num_items": len(dataset.items),
        "activity_names": list(dataset.activity_names),
        "config": dataset.config.as_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for item in dataset.items:
            row = {
                "case_id": item.case_id,
                "input": item.input_tokens.tolist(),
                "target": item.target_tokens.tolist(),
                "label": item.label,
                "original_length": item.original_length,
                "mutated_length": item.mutated_length,
                "records": [r.as_list() for r in item.records],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path: Union[str, Path]) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetFormatError(f"{path}: empty dataset file")
        header = json.loads(first)
        if header.get("format") != _DATASET_FORMAT:
            raise DatasetFormatError(f"{path}: not a tracemend dataset file")
        if header.get("version") != _DATASET_VERSION:
            raise DatasetFormatError(
                f"{path}: unsupported dataset version {header.get('version')}"
            )
        vocab = TokenVocab(num_activities=header["num_activities"])
        items = []
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            items.append(LabeledTrace(
                input_tokens=np.array(row["input"], dtype=np.int64),
                target_tokens=np.array(row["target"], dtype=np.int64),
                label=row["label"],
                records=tuple(AnomalyRecord.from_list(r) for r in row["records"]),
                original_length=row["original_length"],
                mutated_length=row["mutated_length"],
                case_id=row.get("case_id", ""),
            ))
    if len(items) != header["num_items"]:
        raise DatasetFormatError(
            f"{path}: header declares {header['num_items']} items, found {len(items)}"
        )
    return LabeledDataset(
        items=items, vocab=vocab, l_max=header["l_max"],
        config=InjectionConfig.from_dict(header["config"]),
        activity_names=tuple(header.get("activity_names", ())),
    )
