import math
import random
from collections import Counter
from fractions import Fraction

import pytest

from aegis.apps import AppClause, AppContext, AppContextDatabase, Provenance
from aegis.core import array_from_key
from aegis.engine import stream_to_contexts
from aegis.markov import (
    DetectorConfig,
    Label,
    ModelError,
    Reason,
    TransitionModel,
    Verdict,
    app_context_explains,
    classify,
    classify_sequence,
    retrain_incremental,
    train,
    transition_probability,
)
from aegis.simulate import walkthrough_events
from conftest import device, make_home, sensor


def seq(keys, t0=0):
    return [array_from_key(k, t0 + i * 1000) for i, k in enumerate(keys)]


A, B, C, D = "00", "01", "10", "11"


# -- training -----------------------------------------------------------------


def test_train_alternating_sequence():
    m = train(seq([A, B, A, B, A]))
    assert m.transition_probability(A, B) == 1.0
    assert m.transition_probability(B, A) == 1.0
    assert m.trained_snapshots == 5


def test_train_cycle():
    m = train(seq([A, B, C, A]))
    for i, j in ((A, B), (B, C), (C, A)):
        assert m.transition_probability(i, j) == 1.0


def test_train_too_short():
    with pytest.raises(ModelError):
        train(seq([A]))


def test_train_length_mismatch():
    arrays = seq([A, B]) + [array_from_key("000", 5000)]
    with pytest.raises(ModelError):
        train(arrays)


@pytest.mark.parametrize("seed", range(10))
def test_train_matches_bruteforce_tally(seed):
    rng = random.Random(seed)
    keys = ["".join(rng.choice("01") for _ in range(4)) for _ in range(200)]
    keys = [k for k, prev in zip(keys, [None] + keys) if k != prev]  # engine dedupes
    m = train(seq(keys))
    tally = Counter(zip(keys, keys[1:]))
    assert m.transition_count() == len(tally)
    for (i, j), count in tally.items():
        assert m.count(i, j) == count
        n_i = sum(c for (a, _), c in tally.items() if a == i)
        assert m.transition_probability(i, j) == count / n_i


# -- transition probabilities ------------------------------------------------------


def test_probability_unseen_source_is_zero():
    m = train(seq([A, B, A]))
    assert m.transition_probability(C, A) == 0.0
    assert transition_probability(m, C, A) == 0.0


def test_probability_quarter():
    # N_A = 4, N_AB = 1 -> 1/4
    m = train(seq([A, B, A, C, A, C, A, C]))
    assert m.transition_probability(A, B) == 0.25


def test_epsilon_smoothing():
    m = train(seq([A, B, A]))  # observed states {A, B}; N_AB = 1, N_A = 1
    eps = 0.5
    # (N_AB + eps) / (N_A + eps * |states|) = (1 + .5) / (1 + .5*2)
    assert m.transition_probability(A, B, eps) == pytest.approx(1.5 / 2.0)
    # unseen source: (0 + .5) / (0 + .5*2) = 1/2
    assert m.transition_probability(C, A, eps) == pytest.approx(0.5)


def test_counts_survive_roundtrip(tmp_path):
    m = train(seq([A, B, C, A, B, A]))
    path = str(tmp_path / "model.json")
    m.save(path)
    loaded = TransitionModel.load(path)
    assert loaded.counts == m.counts
    assert loaded.n == m.n
    assert loaded.trained_snapshots == m.trained_snapshots
    # probabilities are derived, never stored
    import json

    doc = json.load(open(path))
    assert set(doc) == {"n", "trained_snapshots", "config", "counts"}


# -- classification -----------------------------------------------------------------


def _classify(m, prev_key, next_key, cfg=None, apps=None, home=None):
    return classify(
        m,
        cfg or DetectorConfig(),
        array_from_key(prev_key, 0),
        array_from_key(next_key, 1000),
        apps,
        home,
    )


def test_classify_known_transition_benign():
    m = train(seq([A, B, A, B, A]))
    v = _classify(m, A, B)
    assert (v.label, v.reason) == (Label.BENIGN, Reason.KNOWN_TRANSITION)
    assert v.probability == 1.0


def test_classify_unseen_state():
    m = train(seq([A, B, A]))
    v = _classify(m, A, D)
    assert (v.label, v.reason) == (Label.MALICIOUS, Reason.UNSEEN_STATE)


def test_classify_unseen_transition():
    m = train(seq([A, B, C, A]))
    v = _classify(m, A, C)  # both states known, pair never seen
    assert (v.label, v.reason) == (Label.MALICIOUS, Reason.UNSEEN_TRANSITION)


def test_classify_below_threshold():
    m = train(seq([A, B, A, C, A, C, A, C]))
    v = _classify(m, A, B, DetectorConfig(tau=0.3))
    assert (v.label, v.reason) == (Label.MALICIOUS, Reason.BELOW_THRESHOLD)
    assert v.probability == 0.25


def test_verdict_invariant_validated_implies_benign():
    with pytest.raises(ModelError):
        Verdict(Label.MALICIOUS, Reason.APP_CONTEXT_VALIDATED)


def test_walkthrough_jump_is_unseen_transition():
    home, trace = walkthrough_events()
    arrays = stream_to_contexts(home, trace.events)
    m = train(arrays)
    ok = classify(m, DetectorConfig(), arrays[1], arrays[2])
    assert (ok.label, ok.reason) == (Label.BENIGN, Reason.KNOWN_TRANSITION)
    jump = classify(m, DetectorConfig(), arrays[1], arrays[4])  # sub-context 1 -> 4
    assert (jump.label, jump.reason) == (Label.MALICIOUS, Reason.UNSEEN_TRANSITION)


# -- rare-event validation via app context ----------------------------------------------


def _fire_home():
    return make_home([sensor("ss1", "smoke"), device("fa1", "fire-alarm"), sensor("m1")])


def _alarm_db():
    db = AppContextDatabase()
    db.insert(
        "alarm-app",
        AppContext(
            (
                AppClause("ss1", 1, "fa1", 1),
                AppClause("ss1", 0, "fa1", 0),
            )
        ),
        Provenance.OFFICIAL,
    )
    return db


def test_untrained_fire_event_validated_by_alarm_app():
    # clause match checked by hand: diff = {ss1, fa1}; the clause
    # (ss1=1, fa1=1) fires since ss1 flipped to 1 and fa1 holds 1
    home = _fire_home()
    m = train(seq(["000", "001", "000"]))
    prev = array_from_key("000", 0)
    nxt = array_from_key("110", 1000)
    assert app_context_explains(_alarm_db(), home, prev, nxt) == "alarm-app"
    v = classify(m, DetectorConfig(), prev, nxt, _alarm_db(), home)
    assert (v.label, v.reason) == (Label.BENIGN, Reason.APP_CONTEXT_VALIDATED)
    assert v.validated_by == "alarm-app"


def test_without_matching_app_fire_event_stays_malicious():
    home = _fire_home()
    m = train(seq(["000", "001", "000"]))
    v = classify(
        m, DetectorConfig(), array_from_key("000", 0), array_from_key("110", 1000),
        AppContextDatabase(), home,
    )
    assert v.label is Label.MALICIOUS


def test_validation_requires_trigger_to_fire():
    # action-only change (alarm flips alone): the trigger did not change,
    # so the clause may not explain it
    home = _fire_home()
    prev = array_from_key("100", 0)  # smoke already active
    nxt = array_from_key("110", 1000)  # alarm follows later
    assert app_context_explains(_alarm_db(), home, prev, nxt) is None


def test_validation_respects_time_guard():
    home = _fire_home()
    db = AppContextDatabase()
    db.insert(
        "guarded", AppContext((AppClause("ss1", 1, "fa1", 1, guard=("18:00", "06:00")),))
    )
    prev = array_from_key("000", 0)
    noon = 12 * 3600 * 1000
    night = 23 * 3600 * 1000
    assert app_context_explains(db, home, prev, array_from_key("110", noon)) is None
    assert app_context_explains(db, home, prev, array_from_key("110", night)) == "guarded"


def test_validation_needs_every_differing_bit_covered():
    home = _fire_home()
    prev = array_from_key("000", 0)
    nxt = array_from_key("111", 1000)  # m1 changed too; no clause covers it
    assert app_context_explains(_alarm_db(), home, prev, nxt) is None


# -- incremental retraining ----------------------------------------------------------


def test_retrain_unseen_pair_becomes_benign():
    m = train(seq([A, B, C, A]))
    assert _classify(m, A, C).label is Label.MALICIOUS
    m2 = retrain_incremental(m, seq([A, C]))
    assert _classify(m2, A, C).label is Label.BENIGN
    assert m2.trained_snapshots == m.trained_snapshots + 2


def test_retrain_empty_is_identity():
    m = train(seq([A, B, A]))
    assert retrain_incremental(m, []) is m


def test_retrain_does_not_mutate_original():
    m = train(seq([A, B, C, A]))
    retrain_incremental(m, seq([A, C]))
    assert m.count(A, C) == 0


def test_retrain_length_mismatch():
    m = train(seq([A, B, A]))
    with pytest.raises(ModelError):
        retrain_incremental(m, [array_from_key("000", 0), array_from_key("001", 1)])


@pytest.mark.parametrize("seed", range(6))
def test_batch_equals_incremental_with_boundary(seed):
    rng = random.Random(seed)
    keys = []
    for _ in range(120):
        k = "".join(rng.choice("01") for _ in range(3))
        if not keys or keys[-1] != k:
            keys.append(k)
    cut = len(keys) // 2
    batch = train(seq(keys))
    first = train(seq(keys[:cut]))
    # appending with the boundary state included reproduces the batch counts
    incr = retrain_incremental(first, seq(keys[cut - 1 :]))
    assert incr.counts == batch.counts


# -- model invariants -------------------------------------------------------------------


def _random_model(rng, n=3, length=80):
    keys = []
    for _ in range(length):
        k = "".join(rng.choice("01") for _ in range(n))
        if not keys or keys[-1] != k:
            keys.append(k)
    if len(keys) < 2:
        keys = ["0" * n, "1" * n]
    return train(seq(keys)), keys


@pytest.mark.parametrize("seed", range(20))
def test_row_stochasticity(seed):
    rng = random.Random(seed)
    m, _ = _random_model(rng)
    for i in m.counts:
        total = math.fsum(m.transition_probability(i, j) for j in m.observed_states)
        assert abs(total - 1.0) < 1e-9
        # the epsilon=0 case is exact in rational arithmetic
        assert sum(Fraction(c, m.total_from(i)) for c in m.counts[i].values()) == 1


def test_order_sensitivity():
    keys = [A, B, C, A, B]
    fwd = train(seq(keys))
    rev = train(seq(list(reversed(keys))))
    fwd_pairs = Counter(zip(keys, keys[1:]))
    rev_pairs = Counter(zip(keys[::-1], keys[::-1][1:]))
    assert fwd_pairs != rev_pairs  # contains an asymmetric pair
    assert fwd.counts != rev.counts


def test_markov_property_classify_ignores_history():
    m1 = train(seq([A, B, C, A, B]))
    m2 = train(seq([C, A, B, C, A, B, C, A, B]))
    # identical pair embedded in different histories, same per-model verdict
    for m in (m1, m2):
        v1 = _classify(m, A, B)
        v2 = _classify(m, A, B)
        assert v1 == v2


@pytest.mark.parametrize("seed", range(10))
def test_default_classify_equals_set_membership_oracle(seed):
    rng = random.Random(seed)
    m, keys = _random_model(rng, n=3)
    observed_pairs = set(zip(keys, keys[1:]))
    states = set(keys)
    for i in ("000", "001", "010", "011", "100", "101", "110", "111"):
        for j in ("000", "001", "010", "011", "100", "101", "110", "111"):
            if i == j:
                continue
            v = _classify(m, i, j)
            should_be_benign = (i, j) in observed_pairs and j in states
            assert (v.label is Label.BENIGN) == should_be_benign


@pytest.mark.parametrize("seed", range(8))
def test_monotone_learning(seed):
    rng = random.Random(seed)
    m, keys = _random_model(rng)
    benign_pairs = [
        (i, j) for i, j in zip(keys, keys[1:]) if _classify(m, i, j).label is Label.BENIGN
    ]
    extra = []
    for _ in range(30):
        k = "".join(rng.choice("01") for _ in range(3))
        if not extra or extra[-1] != k:
            extra.append(k)
    m2 = retrain_incremental(m, seq(extra))
    for i, j in benign_pairs:
        assert _classify(m2, i, j).label is Label.BENIGN


def test_classify_sequence_length():
    arrays = seq([A, B, A, C, A])
    m = train(arrays)
    assert len(classify_sequence(m, DetectorConfig(), arrays)) == len(arrays) - 1


def test_config_validation():
    with pytest.raises(ModelError):
        DetectorConfig(tau=1.0)
    with pytest.raises(ModelError):
        DetectorConfig(epsilon_smoothing=-0.1)
