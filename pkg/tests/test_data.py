import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfl.data import (N_HUMANS, QUESTION_TYPES, DatasetConfig, VqaRecord, batch_scores,
                      evaluate_model, generate_dataset, load_dataset, persist_dataset, save_dataset,
                      to_batch, vqa_score)


def _cfg(**kw):
    base = dict(n_records=300, d_i=8, vocab=16, K=12, n_regions=2, number_answers=4, seed=0)
    base.update(kw)
    return DatasetConfig(**base)


# --------------------------------------------------------------- generation
def test_full_agreement_gives_identical_annotators():
    for r in generate_dataset(_cfg(annotator_agreement=1.0)):
        assert set(r.human_answers) == {r.ground_truth}


def test_full_skew_forces_modal_number():
    cfg = _cfg(prior_skew=1.0)
    numbers = [r for r in generate_dataset(cfg) if r.question_type == "number"]
    assert numbers and all(r.ground_truth == cfg.modal_answer("number") for r in numbers)


def test_skew_sets_majority_baseline_on_numbers():
    accs = []
    for seed in range(10):
        records = generate_dataset(DatasetConfig(n_records=1000, prior_skew=0.4, seed=seed))
        gts = np.array([r.ground_truth for r in records if r.question_type == "number"])
        accs.append(100.0 * np.bincount(gts).max() / len(gts))
    assert abs(np.mean(accs) - 40.0) <= 5.0


def test_generation_is_pure():
    a, b = generate_dataset(_cfg()), generate_dataset(_cfg())
    assert a == b
    assert a != generate_dataset(_cfg(seed=1))


def test_answers_respect_type_ranges():
    cfg = _cfg()
    sets = cfg.answer_sets()
    for r in generate_dataset(cfg):
        assert set(r.human_answers) <= set(sets[r.question_type].tolist())


def test_ground_truth_is_a_mode():
    for r in generate_dataset(_cfg(annotator_agreement=0.3)):
        counts = np.bincount(r.human_answers)
        assert counts[r.ground_truth] == counts.max()


@pytest.mark.parametrize("bad", [
    dict(type_mix=(0.4, 0.3, 0.2)),
    dict(type_mix=(1.2, -0.1, -0.1)),
    dict(prior_skew=1.5),
    dict(annotator_agreement=-0.1),
    dict(d_i=9),
    dict(K=7),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        generate_dataset(_cfg(**bad))


def test_type_mix_error_names_the_mix():
    with pytest.raises(ValueError, match="type mix"):
        _cfg(type_mix=(0.5, 0.3, 0.1)).validate()


def test_record_invariants():
    with pytest.raises(ValueError):
        VqaRecord(np.zeros(2), (1,), (0,) * 9, "other", 0)
    with pytest.raises(ValueError):
        VqaRecord(np.zeros(2), (1,), (0,) * 10, "colour", 0)
    with pytest.raises(ValueError):
        VqaRecord(np.zeros(2), (1,), (0,) * 10, "other", 1)


# ------------------------------------------------------------------- metric
@pytest.mark.parametrize("matches", range(N_HUMANS + 1))
def test_metric_table(matches):
    humans = [7] * matches + [1] * (N_HUMANS - matches)
    assert vqa_score(7, humans, "strict") == (1.0 if matches >= 3 else 0.0)
    assert vqa_score(7, humans, "official") == pytest.approx(min(matches / 3, 1.0))


def test_metric_rejects_wrong_count_and_mode():
    with pytest.raises(ValueError):
        vqa_score(0, [0] * 9)
    with pytest.raises(ValueError):
        vqa_score(0, [0] * 10, "lenient")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=10, max_size=10), st.integers(0, 3))
def test_strict_never_exceeds_official(humans, pred):
    assert vqa_score(pred, humans, "strict") <= vqa_score(pred, humans, "official")
    batched = batch_scores(np.array([pred]), np.array([humans]), "official")[0]
    assert batched == pytest.approx(vqa_score(pred, humans, "official"))


# --------------------------------------------------------------- evaluation
def test_oracle_and_constant_predictors():
    cfg = _cfg(annotator_agreement=1.0)
    records = generate_dataset(cfg)
    oracle = lambda recs: np.eye(cfg.K)[[r.ground_truth for r in recs]]
    assert evaluate_model(oracle, records).all == 100.0
    wrong = lambda recs: np.eye(cfg.K)[[(r.ground_truth + 1) % cfg.K for r in recs]]
    ev = evaluate_model(wrong, records)
    assert (ev.all, ev.yes_no, ev.number, ev.other) == (0.0, 0.0, 0.0, 0.0)


def test_uniform_random_predictor_scores_about_ten():
    scores = []
    for seed in range(5):
        cfg = DatasetConfig(n_records=1000, K=10, number_answers=4, annotator_agreement=1.0,
                            seed=seed)
        rng = np.random.default_rng(seed)
        scores.append(evaluate_model(lambda recs: rng.random((len(recs), 10)),
                                     generate_dataset(cfg)).all)
    assert abs(np.mean(scores) - 10.0) <= 3.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_all_is_weighted_mean_of_categories(seed):
    cfg = _cfg(n_records=50, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    ev = evaluate_model(lambda recs: rng.random((len(recs), cfg.K)), generate_dataset(cfg),
                        "official")
    n = sum(ev.counts.values())
    weighted = sum(getattr(ev, t) * ev.counts[t] for t in QUESTION_TYPES) / n
    assert ev.all == pytest.approx(weighted, abs=1e-9)
    assert all(0 <= v <= 100 for v in ev.as_dict().values())


def test_empty_dataset_cannot_be_evaluated():
    with pytest.raises(ValueError):
        evaluate_model(lambda recs: np.zeros((0, 3)), [])


# -------------------------------------------------------------- persistence
def test_round_trip_is_exact(tmp_path):
    records = generate_dataset(_cfg(n_records=100))
    path = tmp_path / "d.jsonl"
    persist_dataset(records, path, "save")
    assert persist_dataset(None, path, "load") == records


def test_truncated_line_is_named(tmp_path):
    path = tmp_path / "d.jsonl"
    save_dataset(generate_dataset(_cfg(n_records=3)), path)
    path.write_text(path.read_text()[:-20])
    with pytest.raises(ValueError, match="line 3"):
        load_dataset(path)


def test_empty_file_is_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_dataset(path) == []


def test_bad_direction():
    with pytest.raises(ValueError):
        persist_dataset([], "x", "append")


def test_batch_padding():
    records = generate_dataset(_cfg(n_records=20))
    b = to_batch(records)
    assert b.tokens.shape == (20, max(len(r.question_tokens) for r in records))
    for i, r in enumerate(records):
        assert tuple(b.tokens[i, :b.lengths[i]]) == r.question_tokens
        assert not b.tokens[i, b.lengths[i]:].any()
