import pytest

from tracemend.eventlog import (
    ActivityVocab,
    Event,
    EventLog,
    Trace,
    compute_behavioral_profile,
    extract_variants,
)
from tracemend.synthesis import act, choice, par, seq


def make_log(sequences, names=None):
    """EventLog from activity-name sequences (vocab in first-seen order)."""
    vocab = ActivityVocab(names or ())
    traces = []
    for i, labels in enumerate(sequences):
        case_id = f"c{i}"
        events = [Event(case_id, vocab.intern(str(a))) for a in labels]
        traces.append(Trace(case_id=case_id, events=events))
    return EventLog(traces=traces, vocab=vocab)


@pytest.fixture
def tiny_log():
    return make_log(["ab", "ab", "ba", "abc"])


@pytest.fixture
def mixed_model():
    """Six activities with sequence, parallel and optional-branch structure."""
    return seq(act("a"), par(act("b"), act("c")),
               choice(act("d"), seq(act("d"), act("e"))), act("f"))


@pytest.fixture
def par_seq_model():
    """Par(a, b) followed by c: a/b interleave, c is strictly ordered last."""
    return seq(par(act("a"), act("b")), act("c"))


def profile_and_variants(log):
    return compute_behavioral_profile(log), extract_variants(log)
