"""Scikit-learn style estimator wrapping the full pipeline.

fit() takes clean traces (an EventLog or an iterable of activity-label
sequences), manufactures a self-supervised labeled dataset by anomaly
injection, and trains the chosen model variant. predict() flags anomalous
traces, transform() returns corrected traces, so the estimator drops into
sklearn pipelines and model-selection tooling.
"""

from typing import Iterable, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .anomaly import InjectionConfig, build_dataset, padded_length_for
from .eventlog import (
    ActivityVocab,
    Event,
    EventLog,
    Trace,
    compute_behavioral_profile,
    extract_variants,
)
from .evaluation import ConfusionCounts, f_score
from .model import ModelConfig, build_model
from .training import TrainConfig, train

TraceLike = Sequence[Union[str, int]]


def _coerce_log(X: Union[EventLog, Iterable[TraceLike]]) -> EventLog:
    if isinstance(X, EventLog):
        return X
    vocab = ActivityVocab()
    traces = []
    for i, seq in enumerate(X):
        seq = list(seq)
        if not seq:
            raise ValueError(f"trace {i} is empty")
        case_id = f"t{i}"
        events = []
        for label in seq:
            if isinstance(label, str):
                events.append(Event(case_id, vocab.intern(label)))
            else:
                events.append(Event(case_id, int(label)))
        traces.append(Trace(case_id=case_id, events=events))
    if not vocab:
        # integer-labeled input: synthesize names for the ids seen
        top = max(e.activity for t in traces for e in t.events)
        vocab = ActivityVocab(str(i) for i in range(top + 1))
    else:
        for t in traces:
            for e in t.events:
                if e.activity >= len(vocab):
                    raise ValueError("traces mix integer ids and unseen string labels")
    return EventLog(traces=traces, vocab=vocab)


class TraceCorrector(BaseEstimator):
    """Joint anomaly detector and corrector for business-process traces.

    Parameters mirror the model and training knobs; `r_case` and `r_act`
    steer the self-supervised injection used to build training labels.
    """

    def __init__(self, variant: str = "transformer-ae", d_model: int = 64,
                 n_heads: int = 8, n_layers_enc: int = 2, n_layers_dec: int = 2,
                 d_ffn: int = 64, r_case: float = 0.5, r_act: float = 0.5,
                 epochs: int = 20, batch_size: int = 64, lr: float = 1e-3,
                 val_fraction: float = 0.1, patience: int = 5,
                 mask_pad_attention: bool = False, random_state: int = 0):
        self.variant = variant
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers_enc = n_layers_enc
        self.n_layers_dec = n_layers_dec
        self.d_ffn = d_ffn
        self.r_case = r_case
        self.r_act = r_act
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.val_fraction = val_fraction
        self.patience = patience
        self.mask_pad_attention = mask_pad_attention
        self.random_state = random_state

    def fit(self, X: Union[EventLog, Iterable[TraceLike]], y=None) -> "TraceCorrector":
        log = _coerce_log(X)
        injection = InjectionConfig(r_case=self.r_case, r_act=self.r_act,
                                    seed=self.random_state)
        dataset = build_dataset(
            log, injection,
            variants=extract_variants(log),
            profile=compute_behavioral_profile(log),
            l_max=padded_length_for(log, injection),
        )
        config = ModelConfig(
            vocab_size=dataset.vocab.size, max_len=dataset.l_max,
            d_model=self.d_model, n_heads_enc=self.n_heads, n_heads_dec=self.n_heads,
            n_layers_enc=self.n_layers_enc, n_layers_dec=self.n_layers_dec,
            d_ffn=self.d_ffn, variant=self.variant,
            mask_pad_attention=self.mask_pad_attention,
        )
        model = build_model(config, seed=self.random_state)
        model.activity_names = dataset.activity_names
        _, history = train(model, dataset, TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            seed=self.random_state, patience=self.patience,
            val_fraction=self.val_fraction,
        ))
        self.model_ = model
        self.token_vocab_ = dataset.vocab
        self.activity_names_ = dataset.activity_names
        self.l_max_ = dataset.l_max
        self.history_ = history
        return self

    def _tokenize(self, X: Union[EventLog, Iterable[TraceLike]]) -> np.ndarray:
        if isinstance(X, EventLog):
            X = [[X.vocab.name_of(a) for a in t.activities] for t in X.traces]
        index = {name: i for i, name in enumerate(self.activity_names_)}
        vocab = self.token_vocab_
        rows = []
        for i, seq in enumerate(X):
            seq = list(seq)
            if len(seq) > self.l_max_ - 1:
                raise ValueError(
                    f"trace {i} has {len(seq)} events; the fitted model holds "
                    f"at most {self.l_max_ - 1}"
                )
            ids = []
            for label in seq:
                if isinstance(label, str):
                    if label not in index:
                        raise ValueError(f"trace {i}: unknown activity {label!r}")
                    ids.append(index[label])
                else:
                    if not 0 <= int(label) < vocab.num_activities:
                        raise ValueError(f"trace {i}: activity id {label} out of range")
                    ids.append(int(label))
            row = [vocab.cls_id] + ids + [vocab.pad_id] * (self.l_max_ - 1 - len(ids))
            rows.append(row)
        if not rows:
            raise ValueError("no traces to process")
        return np.asarray(rows, dtype=np.int64)

    def _forward(self, X) -> tuple[np.ndarray, np.ndarray]:
        check_is_fitted(self)
        tokens = self._tokenize(X)
        probs = np.empty(tokens.shape[0])
        preds = np.empty((tokens.shape[0], self.l_max_ - 1), dtype=np.int64)
        for start in range(0, tokens.shape[0], self.batch_size):
            sl = slice(start, start + self.batch_size)
            out = self.model_.forward(tokens[sl])
            probs[sl] = out.anomaly_prob.data
            preds[sl] = out.logits.data.argmax(axis=-1)
        return probs, preds

    def predict_proba(self, X) -> np.ndarray:
        """Column 0: P(normal); column 1: P(anomalous)."""
        probs, _ = self._forward(X)
        return np.column_stack([1.0 - probs, probs])

    def predict(self, X) -> np.ndarray:
        """1 for anomalous traces, 0 for normal ones."""
        probs, _ = self._forward(X)
        return (probs > 0.5).astype(np.int64)

    def transform(self, X) -> list[list[str]]:
        """Corrected traces as activity labels ([MISSING] marks tokens the
        model failed to fill)."""
        _, preds = self._forward(X)
        vocab = self.token_vocab_
        drop = (vocab.pad_id, vocab.cls_id)
        return [
            [vocab.token_name(int(t), self.activity_names_)
             for t in row if int(t) not in drop]
            for row in preds
        ]

    def score(self, X, y) -> float:
        """F1 with anomalous as the positive class."""
        predictions = self.predict(X)
        counts = ConfusionCounts()
        for p, t in zip(predictions, np.asarray(y, dtype=np.int64)):
            counts.add(int(p), int(t))
        return f_score(counts)[2]
