"""Synthetic event logs from block-structured process models.

A model is a tree of sequence / choice / parallel nodes over activity leaves,
described by a small JSON document. Playouts pick choice branches uniformly
and interleave parallel branches uniformly at random, which makes desk-scale
logs with known ground-truth behavior.
"""

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError
from .eventlog import ActivityVocab, Event, EventLog, Trace


@dataclass(frozen=True)
class Node:
    kind: str  # "seq" | "choice" | "par" | "act"
    name: str = ""
    children: tuple["Node", ...] = ()


def model_from_json(doc: Union[str, dict]) -> Node:
    """Parse {"kind": "seq"|"choice"|"par", "children": [...]} / {"kind": "act", "name": ...}."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    return _node_from_dict(doc)


def _node_from_dict(d: dict) -> Node:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"model node must be an object with a 'kind': {d!r}")
    kind = d["kind"]
    if kind == "act":
        name = d.get("name")
        if not name:
            raise ConfigError("'act' node needs a non-empty 'name'")
        return Node("act", name=name)
    if kind in ("seq", "choice", "par"):
        children = tuple(_node_from_dict(c) for c in d.get("children", []))
        if not children:
            raise ConfigError(f"'{kind}' node needs at least one child")
        return Node(kind, children=children)
    raise ConfigError(f"unknown model node kind {kind!r}")


def seq(*children: Node) -> Node:
    return Node("seq", children=children)


def choice(*children: Node) -> Node:
    return Node("choice", children=children)


def par(*children: Node) -> Node:
    return Node("par", children=children)


def act(name: str) -> Node:
    return Node("act", name=name)


def _playout(node: Node, rng: np.random.Generator) -> list[str]:
    if node.kind == "act":
        return [node.name]
    if node.kind == "seq":
        out: list[str] = []
        for child in node.children:
            out.extend(_playout(child, rng))
        return out
    if node.kind == "choice":
        pick = int(rng.integers(len(node.children)))
        return _playout(node.children[pick], rng)
    # par: merge branch playouts, next element drawn with probability
    # proportional to the branch's remaining length -> uniform over merges.
    branches = [_playout(c, rng) for c in node.children]
    merged: list[str] = []
    remaining = [len(b) for b in branches]
    total = sum(remaining)
    positions = [0] * len(branches)
    while total:
        r = int(rng.integers(total))
        for i, rem in enumerate(remaining):
            if r < rem:
                merged.append(branches[i][positions[i]])
                positions[i] += 1
                remaining[i] -= 1
                total -= 1
                break
            r -= rem
    return merged


def model_activities(node: Node) -> list[str]:
    """Activity names in the model, first-seen (depth-first) order."""
    if node.kind == "act":
        return [node.name]
    seen: list[str] = []
    for child in node.children:
        for name in model_activities(child):
            if name not in seen:
                seen.append(name)
    return seen


def generate_synthetic_log(model: Union[Node, dict, str], n_traces: int, seed: int) -> EventLog:
    """Sample n_traces random playouts of the model, deterministic per seed."""
    if not isinstance(model, Node):
        model = model_from_json(model)
    if n_traces < 1:
        raise ConfigError(f"n_traces must be >= 1, got {n_traces}")
    rng = np.random.default_rng(seed)
    vocab = ActivityVocab(model_activities(model))
    traces = []
    width = len(str(n_traces))
    for i in range(n_traces):
        names = _playout(model, rng)
        case_id = f"case_{i:0{width}d}"
        events = [Event(case_id, vocab.id_of(name)) for name in names]
        traces.append(Trace(case_id=case_id, events=events))
    return EventLog(traces=traces, vocab=vocab)
