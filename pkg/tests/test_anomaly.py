import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_log, profile_and_variants
from oracles import undo_records
from tracemend.anomaly import (
    ALL_KINDS,
    ANOMALOUS,
    NORMAL,
    AnomalyKind,
    InjectionConfig,
    TokenVocab,
    apply_anomaly,
    build_dataset,
    load_dataset,
    max_padded_length,
    relabel,
    save_dataset,
    select_injections,
)
from tracemend.errors import ConfigError, DataError, InjectionError
from tracemend.eventlog import compute_behavioral_profile, extract_variants
from tracemend.synthesis import generate_synthetic_log

VOCAB = TokenVocab(num_activities=5)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestTokenVocab:
    def test_special_ids(self):
        v = TokenVocab(num_activities=7)
        assert (v.pad_id, v.cls_id, v.missing_id, v.size) == (7, 8, 9, 10)

    def test_token_names(self):
        v = TokenVocab(num_activities=2)
        assert v.token_name(v.pad_id) == "[PAD]"
        assert v.token_name(v.cls_id) == "[CLS]"
        assert v.token_name(v.missing_id) == "[MISSING]"
        assert v.token_name(1, ("x", "y")) == "y"


class TestInjectionConfig:
    def test_requires_exactly_one_rate(self):
        with pytest.raises(ConfigError):
            InjectionConfig(r_act=0.5, fixed_count=2)
        with pytest.raises(ConfigError):
            InjectionConfig(r_act=None, fixed_count=None)

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigError):
            InjectionConfig(r_case=1.5)
        with pytest.raises(ConfigError):
            InjectionConfig(r_act=0.0)
        with pytest.raises(ConfigError):
            InjectionConfig(r_act=None, fixed_count=0)
        with pytest.raises(ConfigError):
            InjectionConfig(kinds=())

    def test_round_trips_through_dict(self):
        cfg = InjectionConfig(r_case=0.3, r_act=None, fixed_count=2, seed=9,
                              kinds=(AnomalyKind.SKIP, AnomalyKind.EARLY))
        assert InjectionConfig.from_dict(cfg.as_dict()) == cfg


class TestMaxPaddedLength:
    def test_ratio_rule(self):
        log = make_log(["a" * 10])
        assert max_padded_length(log, r_act=0.3) == 1 + 10 + 3

    def test_ceil_applies(self):
        log = make_log(["a" * 7])
        # ceil(0.5 * 7) = 4
        assert max_padded_length(log, r_act=0.5) == 1 + 7 + 4

    def test_fixed_count_rule(self):
        log = make_log(["a" * 8])
        assert max_padded_length(log, fixed_count=2) == 1 + 8 + 2

    def test_empty_log(self):
        with pytest.raises(Exception):
            max_padded_length(make_log([]), r_act=0.5)


class TestApplyAnomaly:
    def test_skip_removes_element(self):
        out, record = apply_anomaly([0, 1, 2], AnomalyKind.SKIP, 1, rng(), VOCAB)
        assert out == [0, 2]
        assert record.original_activity == 1

    def test_missing_places_placeholder(self):
        out, record = apply_anomaly([0, 1, 2], AnomalyKind.MISSING, 0, rng(), VOCAB)
        assert out == [VOCAB.missing_id, 1, 2]
        assert record.original_activity == 0

    def test_early_swaps_back_pair(self):
        out, record = apply_anomaly([0, 1, 2], AnomalyKind.EARLY, 2, rng(), VOCAB)
        assert out == [0, 2, 1]
        assert (record.original_activity, record.new_activity) == (2, 1)

    def test_late_swaps_forward_pair(self):
        out, record = apply_anomaly([0, 1, 2], AnomalyKind.LATE, 0, rng(), VOCAB)
        assert out == [1, 0, 2]
        assert (record.original_activity, record.new_activity) == (0, 1)

    def test_insert_adds_real_activity(self):
        out, record = apply_anomaly([0, 1], AnomalyKind.INSERT, 1, rng(3), VOCAB)
        assert len(out) == 3
        assert out[0] == 0 and out[2] == 1
        assert VOCAB.is_activity(out[1])
        assert record.new_activity == out[1]

    def test_replace_never_picks_same_activity(self):
        for seed in range(40):
            out, record = apply_anomaly([3], AnomalyKind.REPLACE, 0, rng(seed), VOCAB)
            assert out[0] != 3
            assert VOCAB.is_activity(out[0])

    @pytest.mark.parametrize("kind,pos", [
        (AnomalyKind.SKIP, 3), (AnomalyKind.MISSING, -1), (AnomalyKind.REPLACE, 5),
        (AnomalyKind.INSERT, 4), (AnomalyKind.EARLY, 0), (AnomalyKind.LATE, 2),
    ])
    def test_invalid_positions_raise(self, kind, pos):
        with pytest.raises(InjectionError):
            apply_anomaly([0, 1, 2], kind, pos, rng(), VOCAB)


class TestSelectInjections:
    def test_count_from_ratio(self):
        # round(0.3 * 8) = 2
        pairs = select_injections(8, InjectionConfig(r_act=0.3), rng())
        assert len(pairs) == 2

    def test_at_least_one(self):
        pairs = select_injections(2, InjectionConfig(r_act=0.1), rng())
        assert len(pairs) == 1

    def test_fixed_count(self):
        cfg = InjectionConfig(r_act=None, fixed_count=1)
        assert len(select_injections(3, cfg, rng())) == 1

    def test_fixed_count_capped_at_length(self):
        cfg = InjectionConfig(r_act=None, fixed_count=5)
        assert len(select_injections(2, cfg, rng())) == 2

    def test_positions_strictly_descending(self):
        for seed in range(30):
            pairs = select_injections(10, InjectionConfig(r_act=0.7), rng(seed))
            positions = [p for _, p in pairs]
            assert positions == sorted(positions, reverse=True)
            assert len(set(positions)) == len(positions)

    def test_impossible_kinds_error_out(self):
        cfg = InjectionConfig(r_act=1.0, kinds=(AnomalyKind.LATE,))
        with pytest.raises(InjectionError):
            select_injections(1, cfg, rng())

    def test_applies_cleanly_after_selection(self):
        # the simulated validity check must match real application
        for seed in range(200):
            r = rng(seed)
            length = int(r.integers(1, 9))
            seq = list(r.integers(VOCAB.num_activities, size=length))
            pairs = select_injections(length, InjectionConfig(r_act=0.7, seed=seed), r)
            for kind, pos in pairs:
                seq, _ = apply_anomaly(seq, kind, pos, r, VOCAB)
            assert len(seq) >= 1


class TestRelabel:
    @pytest.fixture
    def interleaved(self):
        log = make_log(["abc", "bac"])
        profile, variants = profile_and_variants(log)
        return log, profile, variants

    def test_interleaving_swap_is_normal(self, interleaved):
        log, profile, variants = interleaved
        a, b = log.vocab.id_of("a"), log.vocab.id_of("b")
        c = log.vocab.id_of("c")
        record_seq, record = apply_anomaly([a, b, c], AnomalyKind.EARLY, 1,
                                           rng(), TokenVocab(3))
        assert relabel(record_seq, [a, b, c], [record], variants, profile) == NORMAL

    def test_non_interleaving_swap_is_anomalous(self, interleaved):
        log, profile, variants = interleaved
        a, b, c = (log.vocab.id_of(x) for x in "abc")
        swapped, record = apply_anomaly([a, b, c], AnomalyKind.LATE, 1,
                                        rng(), TokenVocab(3))
        # (b, c) never appear in both orders
        assert relabel(swapped, [a, b, c], [record], variants, profile) == ANOMALOUS

    def test_replace_is_anomalous_even_with_interleaving(self, interleaved):
        log, profile, variants = interleaved
        a, b, c = (log.vocab.id_of(x) for x in "abc")
        mutated, record = apply_anomaly([a, b, c], AnomalyKind.REPLACE, 2,
                                        rng(1), TokenVocab(3))
        if tuple(mutated) not in variants:
            assert relabel(mutated, [a, b, c], [record], variants, profile) == ANOMALOUS

    def test_variant_collision_relabels_normal(self):
        # derived: Replace maps variant <a,b> onto existing variant <c,b>
        log = make_log(["ab", "cb"])
        profile, variants = profile_and_variants(log)
        a, b, c = (log.vocab.id_of(x) for x in "abc")
        record_kwargs = dict(kind=AnomalyKind.REPLACE, position=0,
                             original_activity=a, new_activity=c)
        from tracemend.anomaly import AnomalyRecord
        record = AnomalyRecord(**record_kwargs)
        assert relabel([c, b], [a, b], [record], variants, profile) == NORMAL

    def test_variant_collision_toggle(self):
        log = make_log(["ab", "cb"])
        profile, variants = profile_and_variants(log)
        a, b, c = (log.vocab.id_of(x) for x in "abc")
        from tracemend.anomaly import AnomalyRecord
        record = AnomalyRecord(kind=AnomalyKind.REPLACE, position=0,
                               original_activity=a, new_activity=c)
        assert relabel([c, b], [a, b], [record], variants, profile,
                       use_variants=False) == ANOMALOUS

    def test_missing_token_never_matches_variant(self):
        log = make_log(["ab"])
        profile, variants = profile_and_variants(log)
        vocab = TokenVocab(2)
        from tracemend.anomaly import AnomalyRecord
        record = AnomalyRecord(kind=AnomalyKind.MISSING, position=0,
                               original_activity=0)
        assert relabel([vocab.missing_id, 1], [0, 1], [record],
                       variants, profile) == ANOMALOUS


def _dataset_for(sequences, config, l_max=None):
    log = make_log(sequences)
    profile, variants = profile_and_variants(log)
    return build_dataset(log, config, variants, profile, l_max), log


class TestBuildDataset:
    def test_exact_injection_count(self):
        config = InjectionConfig(r_case=0.5, r_act=0.5, seed=1)
        dataset, _ = _dataset_for(["abc"] * 100, config)
        assert sum(1 for it in dataset.items if it.records) == 50

    def test_r_case_zero_keeps_everything_normal(self):
        config = InjectionConfig(r_case=0.0, r_act=0.5, seed=1)
        dataset, _ = _dataset_for(["ab", "abc", "a"], config)
        for item in dataset.items:
            assert item.label == NORMAL and not item.records
            body = item.input_tokens[1:]
            assert np.array_equal(body, item.target_tokens)

    def test_tokenization_contract(self):
        config = InjectionConfig(r_case=1.0, r_act=0.5, seed=4)
        dataset, _ = _dataset_for(["abcde", "ab"], config)
        vocab = dataset.vocab
        for item in dataset.items:
            assert item.input_tokens[0] == vocab.cls_id
            assert len(item.input_tokens) == dataset.l_max
            assert len(item.target_tokens) == dataset.l_max - 1
            assert np.all(item.input_tokens[1 + item.mutated_length:] == vocab.pad_id)
            assert vocab.cls_id not in item.target_tokens
            assert vocab.missing_id not in item.target_tokens

    def test_same_seed_identical_dataset(self):
        config = InjectionConfig(r_case=0.5, r_act=0.5, seed=7)
        one, _ = _dataset_for(["abcd"] * 40, config)
        two, _ = _dataset_for(["abcd"] * 40, config)
        assert np.array_equal(one.inputs_matrix(), two.inputs_matrix())
        assert np.array_equal(one.labels_array(), two.labels_array())

    def test_l_max_too_small_names_trace(self):
        config = InjectionConfig(r_case=0.5, r_act=0.5, seed=0)
        with pytest.raises(DataError, match="c0"):
            _dataset_for(["abcdef"], config, l_max=5)

    def test_anomalous_implies_visible_change(self):
        config = InjectionConfig(r_case=1.0, r_act=0.5, seed=3)
        dataset, _ = _dataset_for(["abcde"] * 60, config)
        vocab = dataset.vocab
        for item in dataset.items:
            if item.label == ANOMALOUS:
                mutated = list(item.input_tokens[1:1 + item.mutated_length])
                original = list(item.target_tokens[:item.original_length])
                assert mutated != original or vocab.missing_id in mutated

    def test_insert_only_worst_case_reaches_l_max(self):
        config = InjectionConfig(r_case=1.0, r_act=0.5, seed=2,
                                 kinds=(AnomalyKind.INSERT,))
        dataset, log = _dataset_for(["abcdef" + "gh"], config)  # length 8
        # k = round(0.5*8) = 4 inserts; l_max = 1 + 8 + 4 = 13
        assert dataset.l_max == 13
        item = dataset.items[0]
        assert item.mutated_length == 12
        assert 1 + item.mutated_length == dataset.l_max

    def test_swap_only_interleaved_log_relabels_all(self, par_seq_model):
        log = generate_synthetic_log(par_seq_model, 60, seed=21)
        profile = compute_behavioral_profile(log)
        variants = extract_variants(log)
        config = InjectionConfig(r_case=1.0, r_act=None, fixed_count=1, seed=5,
                                 kinds=(AnomalyKind.EARLY, AnomalyKind.LATE))
        dataset = build_dataset(log, config, variants, profile)
        a, b = log.vocab.id_of("a"), log.vocab.id_of("b")
        for item in dataset.items:
            assert item.records
            record = item.records[0]
            pair = {record.original_activity, record.new_activity}
            if pair == {a, b}:
                assert item.label == NORMAL


class TestInversionProperty:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=60, deadline=None)
    def test_undo_recovers_original(self, seed):
        r = np.random.default_rng(seed)
        length = int(r.integers(1, 9))
        original = [int(x) for x in r.integers(VOCAB.num_activities, size=length)]
        config = InjectionConfig(r_act=0.7, seed=seed)
        mutated = list(original)
        records = []
        pairs = select_injections(length, config, r)
        for kind, pos in pairs:
            mutated, record = apply_anomaly(mutated, kind, pos, r, VOCAB)
            records.append(record)
        assert undo_records(mutated, records, VOCAB) == original


class TestDatasetSerialization:
    def test_round_trip(self, tmp_path):
        config = InjectionConfig(r_case=0.5, r_act=0.5, seed=11)
        dataset, _ = _dataset_for(["abcd"] * 20 + ["ab"] * 5, config)
        path = tmp_path / "data.jsonl"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.l_max == dataset.l_max
        assert loaded.config == dataset.config
        assert loaded.activity_names == dataset.activity_names
        assert np.array_equal(loaded.inputs_matrix(), dataset.inputs_matrix())
        assert np.array_equal(loaded.targets_matrix(), dataset.targets_matrix())
        assert np.array_equal(loaded.labels_array(), dataset.labels_array())
        assert [it.records for it in loaded.items] == \
            [it.records for it in dataset.items]

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.jsonl"
        path.write_text('{"format": "other"}\n')
        from tracemend.errors import DatasetFormatError
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_rejects_truncated_file(self, tmp_path):
        config = InjectionConfig(r_case=0.5, r_act=0.5, seed=11)
        dataset, _ = _dataset_for(["abcd"] * 10, config)
        path = tmp_path / "data.jsonl"
        save_dataset(dataset, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        from tracemend.errors import DatasetFormatError
        with pytest.raises(DatasetFormatError, match="declares"):
            load_dataset(path)
