"""Event-log model: parsing, statistics, variants and the behavioral profile.

An event log is a set of traces; a trace is the ordered event sequence of one
case. Activities are interned into a dense-id vocabulary so the rest of the
pipeline works on integer sequences.
"""

import csv
import enum
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime
from typing import BinaryIO, Iterable, Optional, Sequence, Union

import numpy as np

from ._util import round_half_up
from .errors import ConfigError, EmptyLogError, LogFormatError


class ActivityVocab:
    """Dense activity-id vocabulary, ids assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._index[name] = idx
        return idx

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown activity name: {name!r}") from None

    def name_of(self, activity_id: int) -> str:
        return self._names[activity_id]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, ActivityVocab) and self._names == other._names

    def __repr__(self) -> str:
        return f"ActivityVocab({len(self)} activities)"


@dataclass
class Event:
    case_id: str
    activity: int
    timestamp: Optional[datetime] = None


@dataclass
class Trace:
    case_id: str
    events: list[Event]

    @property
    def activities(self) -> tuple[int, ...]:
        return tuple(e.activity for e in self.events)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class EventLog:
    """Immutable-after-construction collection of traces plus vocabulary."""

    traces: list[Trace]
    vocab: ActivityVocab
    skipped_empty_traces: int = 0

    def __len__(self) -> int:
        return len(self.traces)

    def activity_sequences(self) -> list[tuple[int, ...]]:
        return [t.activities for t in self.traces]


@dataclass(frozen=True)
class LogStats:
    num_traces: int
    num_activities: int
    avg_case_length: int
    max_case_length: int

    def as_dict(self) -> dict:
        return {
            "num_traces": self.num_traces,
            "num_activities": self.num_activities,
            "avg_case_length": self.avg_case_length,
            "max_case_length": self.max_case_length,
        }


class VariantSet:
    """Exact set of distinct activity-id sequences occurring as traces."""

    def __init__(self, sequences: Iterable[Sequence[int]] = ()):
        self._variants = frozenset(tuple(s) for s in sequences)

    def __contains__(self, seq: Sequence[int]) -> bool:
        return tuple(seq) in self._variants

    def __len__(self) -> int:
        return len(self._variants)

    def __iter__(self):
        return iter(self._variants)


class Relation(enum.Enum):
    STRICT = "strict-order"
    REVERSE = "reverse-strict-order"
    INTERLEAVING = "interleaving"
    EXCLUSIVE = "exclusive"


class BehavioralProfile:
    """Pairwise activity relations derived from the directly-follows relation.

    a is directly followed by b somewhere and never the reverse: strict order.
    Both directions observed: interleaving. Neither: exclusive.
    """

    def __init__(self, directly_follows: np.ndarray):
        df = np.asarray(directly_follows, dtype=bool)
        if df.ndim != 2 or df.shape[0] != df.shape[1]:
            raise ValueError("directly-follows matrix must be square")
        self._df = df

    @property
    def num_activities(self) -> int:
        return self._df.shape[0]

    def relation(self, a: int, b: int) -> Relation:
        ab, ba = self._df[a, b], self._df[b, a]
        if ab and ba:
            return Relation.INTERLEAVING
        if ab:
            return Relation.STRICT
        if ba:
            return Relation.REVERSE
        return Relation.EXCLUSIVE

    def interleaving(self, a: int, b: int) -> bool:
        return bool(self._df[a, b] and self._df[b, a])


@dataclass(frozen=True)
class CsvMapping:
    """Column names binding a CSV file to case / activity / timestamp."""

    case: str = "case_id"
    activity: str = "activity"
    timestamp: Optional[str] = "timestamp"


def _parse_timestamp(text: str, where: str) -> Optional[datetime]:
    text = text.strip()
    if not text:
        return None
    # Python 3.10 fromisoformat rejects the Z suffix.
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise LogFormatError(f"{where}: unparsable ISO-8601 timestamp {text!r}") from None


def _sort_events(events: list[Event]) -> list[Event]:
    # Stable sort by timestamp; if any event lacks one, file order stands.
    if all(e.timestamp is not None for e in events):
        return sorted(events, key=lambda e: e.timestamp)
    return events


def _finish_log(groups: dict[str, list[Event]], vocab: ActivityVocab,
                skipped: int = 0) -> EventLog:
    traces = [Trace(case_id=cid, events=_sort_events(evs))
              for cid, evs in groups.items()]
    return EventLog(traces=traces, vocab=vocab, skipped_empty_traces=skipped)


def _as_text_stream(stream) -> io.TextIOBase:
    if isinstance(stream, (str,)):
        return io.StringIO(stream)
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8"))
    if hasattr(stream, "read"):
        first = stream.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(stream, encoding="utf-8", newline="")
        return stream
    raise TypeError(f"cannot read CSV from {type(stream).__name__}")


def parse_csv(stream: Union[str, bytes, BinaryIO], mapping: CsvMapping = CsvMapping()) -> EventLog:
    """Parse a header-row CSV (RFC-4180, UTF-8) into an EventLog.

    Rows are grouped by case id; each group is sorted by timestamp with file
    order preserved on ties or missing timestamps. The vocabulary is built
    from distinct activity names in first-seen order.
    """
    reader = csv.reader(_as_text_stream(stream))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyLogError("CSV stream is empty") from None

    mapped = [mapping.case, mapping.activity]
    if mapping.timestamp is not None:
        mapped.append(mapping.timestamp)
    for name in mapped:
        hits = [i for i, col in enumerate(header) if col == name]
        if not hits:
            raise ConfigError(f"mapped column {name!r} not found in header {header}")
        if len(hits) > 1:
            raise ConfigError(f"mapped column {name!r} appears {len(hits)} times in header")
    if len(set(mapped)) != len(mapped):
        raise ConfigError(f"mapping binds one column to several roles: {mapped}")

    case_col = header.index(mapping.case)
    act_col = header.index(mapping.activity)
    ts_col = header.index(mapping.timestamp) if mapping.timestamp in header else None

    vocab = ActivityVocab()
    groups: dict[str, list[Event]] = {}
    rows = 0
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) <= max(case_col, act_col, ts_col or 0):
            raise LogFormatError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        case_id = row[case_col]
        act_id = vocab.intern(row[act_col])
        ts = _parse_timestamp(row[ts_col], f"line {line_no}") if ts_col is not None else None
        groups.setdefault(case_id, []).append(Event(case_id, act_id, ts))
        rows += 1

    if rows == 0:
        raise EmptyLogError("CSV stream contains a header but no event rows")
    return _finish_log(groups, vocab)


def write_csv(log: EventLog, stream, mapping: CsvMapping = CsvMapping()) -> None:
    """Serialize an EventLog back to CSV; inverse of parse_csv."""
    writer = csv.writer(stream)
    header = [mapping.case, mapping.activity]
    if mapping.timestamp is not None:
        header.append(mapping.timestamp)
    writer.writerow(header)
    for trace in log.traces:
        for event in trace.events:
            row = [trace.case_id, log.vocab.name_of(event.activity)]
            if mapping.timestamp is not None:
                row.append(event.timestamp.isoformat() if event.timestamp else "")
            writer.writerow(row)


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_xes(stream: Union[str, bytes, BinaryIO]) -> EventLog:
    """Parse the XES subset used by the BPI Challenge logs.

    Activities come from each event's "concept:name" attribute, timestamps
    from "time:timestamp" when present. Extension/global declarations are
    ignored; traces with zero events are skipped and counted.
    """
    if isinstance(stream, str):
        stream = stream.encode("utf-8")
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    try:
        tree = ET.parse(stream)
    except ET.ParseError as exc:
        raise LogFormatError(f"malformed XML at line:column {exc.position[0]}:{exc.position[1]}: {exc}") from None

    root = tree.getroot()
    if _localname(root.tag) != "log":
        raise LogFormatError(f"root element is <{_localname(root.tag)}>, expected XES <log>")

    vocab = ActivityVocab()
    traces: list[Trace] = []
    skipped = 0
    for t_idx, trace_el in enumerate(e for e in root if _localname(e.tag) == "trace"):
        case_id = f"trace_{t_idx}"
        events: list[Event] = []
        for child in trace_el:
            tag = _localname(child.tag)
            if tag == "string" and child.get("key") == "concept:name":
                case_id = child.get("value", case_id)
            elif tag == "event":
                name = None
                ts = None
                for attr in child:
                    key = attr.get("key")
                    if key == "concept:name":
                        name = attr.get("value")
                    elif key == "time:timestamp":
                        ts = _parse_timestamp(attr.get("value", ""), f"trace {t_idx}")
                if name is None:
                    raise LogFormatError(
                        f"trace {t_idx} ({case_id}): event without concept:name attribute"
                    )
                events.append(Event(case_id, vocab.intern(name), ts))
        if not events:
            skipped += 1
            continue
        for e in events:
            e.case_id = case_id
        traces.append(Trace(case_id=case_id, events=_sort_events(events)))

    return EventLog(traces=traces, vocab=vocab, skipped_empty_traces=skipped)


def compute_stats(log: EventLog) -> LogStats:
    """Trace count, activity count, rounded average and max case length."""
    if not log.traces:
        raise EmptyLogError("cannot compute statistics of an empty log")
    lengths = [len(t) for t in log.traces]
    return LogStats(
        num_traces=len(log.traces),
        num_activities=len(log.vocab),
        avg_case_length=round_half_up(sum(lengths) / len(lengths)),
        max_case_length=max(lengths),
    )


def extract_variants(log: EventLog) -> VariantSet:
    return VariantSet(log.activity_sequences())


def compute_behavioral_profile(log: EventLog) -> BehavioralProfile:
    """Directly-follows based profile over all activity pairs."""
    if not log.traces:
        raise EmptyLogError("cannot compute a behavioral profile of an empty log")
    h = len(log.vocab)
    df = np.zeros((h, h), dtype=bool)
    for trace in log.traces:
        seq = trace.activities
        for a, b in zip(seq, seq[1:]):
            df[a, b] = True
    return BehavioralProfile(df)


def train_test_split(log: EventLog, train_fraction: float, seed: int) -> tuple[EventLog, EventLog]:
    """Seeded shuffle, first ⌊n*fraction⌋ traces to train; shared vocabulary."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(log.traces))
    cut = int(math.floor(len(log.traces) * train_fraction))
    train = EventLog([log.traces[i] for i in order[:cut]], log.vocab)
    test = EventLog([log.traces[i] for i in order[cut:]], log.vocab)
    return train, test
