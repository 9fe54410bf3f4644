import numpy as np
import pytest

from mubench import (
    Dataset,
    TrainConfig,
    UnlearnEngine,
    UnlearnRequest,
    combine,
    evaluate,
    gen_synthetic,
    sample_request_ids,
    split_dataset,
)
from mubench.errors import (
    AlreadyRevoked,
    DispatchError,
    InvalidArgument,
    NotFound,
    TrainingDiverged,
)


# ------------------------------------------------------------------- training
def test_train_saves_all_checkpoints(trained_engine):
    assert sorted(trained_engine.store.checkpoints) == [0, 1, 2, 3]


def test_train_records_only_below_threshold(trained_engine):
    assert trained_engine.threshold == 2
    slices = {key[0] for key in trained_engine.store.increments}
    assert slices == {1}
    assert len(trained_engine.store.increments) == trained_engine.plan.num_batches(1)


def test_train_deterministic(tiny_dataset, tiny_config):
    a = UnlearnEngine.train(tiny_dataset, tiny_config)
    b = UnlearnEngine.train(tiny_dataset, tiny_config)
    assert a.model.params.bits_equal(b.model.params)
    for i in range(4):
        assert a.store.get_checkpoint(i).params.bits_equal(b.store.get_checkpoint(i).params)


def test_train_refuses_second_fit(trained_engine):
    with pytest.raises(InvalidArgument):
        trained_engine.fit()


def test_train_reaches_holdout_accuracy():
    source = gen_synthetic(2500, 20, seed=3)
    train, hold = split_dataset(source, 0.2, seed=11)
    cfg = TrainConfig(num_slices=4, epochs_per_slice=3, seed=0, phi=0.0)
    engine = UnlearnEngine.train(train, cfg)
    assert evaluate(engine.model.params, hold) >= 0.9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_detected(tiny_config):
    feats = np.ones((64, 4), dtype=np.float32)
    feats[3, 2] = np.inf
    bad = Dataset(feats, np.arange(64) % 2)
    cfg = TrainConfig(num_slices=2, batch_size=16, seed=0, phi=0.0)
    with pytest.raises(TrainingDiverged):
        UnlearnEngine.train(bad, cfg)


def test_telescoping_reconstruction(trained_engine):
    eng = trained_engine
    for i in {key[0] for key in eng.store.increments}:
        total = eng.store.get_checkpoint(i - 1).params.values.copy()
        for j in range(eng.plan.num_batches(i)):
            total += eng.store.get_increment(i, j + 1).delta.values
        err = np.abs(total - eng.store.get_checkpoint(i).params.values).max()
        assert err <= 1e-5


# ------------------------------------------------------------------------ prs
def test_prs_last_slice_retrains_only_last(trained_engine):
    eng = trained_engine
    victim = eng.plan.slice_ids(3)[0]
    out = eng.unlearn_prs(victim)
    assert out.strategy_executed == "prs"
    assert out.checkpoints_rewritten == [3]
    assert out.located_at[0] == 3


def test_prs_equals_scratch_retrain_slice1(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    victim = eng.plan.slice_ids(1)[0]
    out = eng.unlearn_prs(victim)

    oracle = UnlearnEngine(tiny_dataset, tiny_config)
    oracle.plan = oracle.plan.tombstone(victim)
    scratch = oracle.fit()
    assert out.params_after.bits_equal(scratch.params)
    for i in range(1, 4):
        assert eng.store.get_checkpoint(i).params.bits_equal(
            oracle.store.get_checkpoint(i).params
        )


def test_prs_double_revocation_errors(trained_engine):
    victim = trained_engine.plan.slice_ids(2)[0]
    trained_engine.unlearn_prs(victim)
    with pytest.raises(AlreadyRevoked):
        trained_engine.unlearn_prs(victim)


def test_prs_rerecords_increments_for_recorded_slices(trained_engine):
    eng = trained_engine
    before = {k: rec.delta.copy() for k, rec in eng.store.increments.items()}
    victim = eng.plan.slice_ids(1)[3]
    eng.unlearn_prs(victim)
    after = eng.store.increments
    assert {k[0] for k in after} == {1}
    changed = any(
        k not in before or not after[k].delta.bits_equal(before[k]) for k in after
    )
    assert changed


# ----------------------------------------------------------------------- dpus
def test_dpus_subtract_and_restore(trained_engine):
    eng = trained_engine
    final_params = eng.model.params.copy()
    victim = eng.plan.slice_ids(1)[5]
    out = eng.unlearn_dpus(victim)
    assert out.strategy_executed == "dpus"
    delta = eng.store.get_increment(*out.located_at).delta
    expected = final_params.values - delta.values
    assert np.array_equal(out.params_after.values, expected)
    assert combine(out.params_after, delta, "+").bits_equal(final_params)


def test_dpus_consume_once(trained_engine):
    eng = trained_engine
    first = eng.plan.slice_ids(1)[0]
    out1 = eng.unlearn_dpus(first)
    same_batch = eng.store.recorded_batches[out1.located_at[0]][out1.located_at[1] - 1]
    second = next(x for x in same_batch if x != first)
    frozen = eng.model.params.copy()
    out2 = eng.unlearn_dpus(second)
    assert out2.strategy_executed == "noop-consumed"
    assert eng.model.params.bits_equal(frozen)
    assert second in eng.plan.tombstones


def test_dpus_dispatch_guard(trained_engine):
    eng = trained_engine
    late = eng.plan.slice_ids(3)[0]
    with pytest.raises(DispatchError):
        eng.unlearn_dpus(late)


def test_dpus_force_requires_record(trained_engine):
    late = trained_engine.plan.slice_ids(3)[0]
    with pytest.raises(NotFound):
        trained_engine.unlearn_dpus(late, force=True)


# ------------------------------------------------------------------------- hs
def test_hs_dispatch_by_slice(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    early = eng.plan.slice_ids(1)[0]
    at_threshold = eng.plan.slice_ids(2)[0]  # t = 2; rule is strict i < t
    late = eng.plan.slice_ids(3)[0]
    assert eng.unlearn_hs(early).strategy_executed == "dpus"
    assert eng.unlearn_hs(at_threshold).strategy_executed == "prs"
    assert eng.unlearn_hs(late).strategy_executed == "prs"


def test_hs_matches_direct_prs_bitwise(tiny_dataset, tiny_config):
    base = UnlearnEngine.train(tiny_dataset, tiny_config)
    other = base.clone()
    victim = base.plan.slice_ids(3)[7]
    a = base.unlearn_hs(victim)
    b = other.unlearn_prs(victim)
    assert a.params_after.bits_equal(b.params_after)


# ------------------------------------------------------------------------ ohs
def test_ohs_above_threshold_equals_prs(tiny_dataset, tiny_config):
    a = UnlearnEngine.train(tiny_dataset, tiny_config)
    b = a.clone()
    victim = a.plan.slice_ids(3)[2]
    out_a = a.unlearn_ohs(victim)
    out_b = b.unlearn_prs(victim)
    assert out_a.strategy_executed == "prs"
    assert out_a.params_after.bits_equal(out_b.params_after)


def test_ohs_subtracts_then_retrains_trailing_slice(tiny_dataset, tiny_config):
    """depth 1: retrain the last slice from the S-1 checkpoint minus the batch delta.

    Reconstructed by hand on a clone; checkpoint S-1 itself stays pristine.
    """
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    twin = eng.clone()
    s = eng.config.num_slices
    pristine_base = eng.store.get_checkpoint(s - 1).params.copy()
    victim = eng.plan.slice_ids(1)[4]
    out = eng.unlearn_ohs(victim, depth=1)
    assert out.strategy_executed == "ohs"
    assert out.checkpoints_rewritten == [s]
    assert eng.store.get_checkpoint(s - 1).params.bits_equal(pristine_base)
    assert eng.store.get_increment(*out.located_at).consumed

    delta = twin.store.get_increment(*out.located_at).delta
    start = combine(twin.store.get_checkpoint(s - 1).params, delta, "-")
    state = twin.store.get_checkpoint(s - 1).opt_state.copy()
    twin.plan = twin.plan.tombstone(victim)
    expected, _ = twin._train_slice(start, state, s, record=False)
    assert out.params_after.bits_equal(expected)


def test_ohs_depth_zero_degenerates_to_dpus(tiny_dataset, tiny_config):
    a = UnlearnEngine.train(tiny_dataset, tiny_config)
    b = a.clone()
    victim = a.plan.slice_ids(1)[9]
    out_a = a.unlearn_ohs(victim, depth=0)
    out_b = b.unlearn_dpus(victim)
    assert out_a.strategy_executed == "dpus"
    assert out_a.params_after.bits_equal(out_b.params_after)


def test_ohs_consumed_record_still_retrains(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    first = eng.plan.slice_ids(1)[0]
    out1 = eng.unlearn_ohs(first)
    same_batch = eng.store.recorded_batches[out1.located_at[0]][out1.located_at[1] - 1]
    second = next(x for x in same_batch if x != first)
    out2 = eng.unlearn_ohs(second)
    assert out2.strategy_executed == "ohs"
    assert out2.checkpoints_rewritten == [2, 3]
    assert second in eng.plan.tombstones


def test_ohs_full_depth_tracks_prs_accuracy():
    """depth = S: subtract at checkpoint 0, retrain everything; accuracy stays
    within one point of pure partial retraining."""
    source = gen_synthetic(2500, 20, seed=6)
    train, hold = split_dataset(source, 0.2, seed=1)
    # t = 3 for S = 4: per-slice 500, costs 5000/4500/3500/2000
    cfg = TrainConfig(num_slices=4, epochs_per_slice=1, seed=0, phi=3500.0)
    prs_eng = UnlearnEngine.train(train, cfg)
    ohs_eng = UnlearnEngine.train(train, cfg, ohs_depth=4)
    assert ohs_eng.model.params.bits_equal(prs_eng.model.params)
    ids = sample_request_ids(prs_eng.plan, 30, seed=4)
    prs_eng.process_stream([UnlearnRequest(i, "prs") for i in ids], hold)
    report = ohs_eng.process_stream([UnlearnRequest(i, "ohs") for i in ids], hold)
    assert all(r.strategy_executed in ("ohs", "prs") for r in report.rows)
    acc_prs = evaluate(prs_eng.model.params, hold)
    acc_ohs = evaluate(ohs_eng.model.params, hold)
    assert abs(acc_prs - acc_ohs) <= 0.01


# --------------------------------------------------------------------- stream
def test_stream_row_per_request(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    ids = sample_request_ids(eng.plan, 100, seed=3)
    report = eng.process_stream([UnlearnRequest(i, "hs") for i in ids], tiny_dataset)
    assert len(report.rows) == 100
    assert report.final_accuracy is not None
    assert report.avg_unlearn_time_s > 0
    assert not report.partial


def test_stream_empty_requests(trained_engine, tiny_dataset):
    report = trained_engine.process_stream([], tiny_dataset)
    assert report.rows == []
    assert report.pre_accuracy == report.final_accuracy


def test_stream_prs_equals_hs_on_last_slice(tiny_dataset, tiny_config):
    a = UnlearnEngine.train(tiny_dataset, tiny_config)
    b = a.clone()
    ids = list(a.plan.slice_ids(3)[:12])
    a.process_stream([UnlearnRequest(i, "prs") for i in ids])
    b.process_stream([UnlearnRequest(i, "hs") for i in ids])
    assert a.model.params.bits_equal(b.model.params)


def test_stream_aborts_partial_on_error(trained_engine, tiny_dataset):
    ids = [5, 5]  # duplicate: second is already revoked
    report = trained_engine.process_stream(
        [UnlearnRequest(i, "hs") for i in ids], tiny_dataset
    )
    assert report.partial
    assert len(report.rows) == 1
    assert "5" in report.error


def test_stream_dispatch_soundness(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    ids = sample_request_ids(eng.plan, 60, seed=9)
    slices = {i: eng.plan.locate(i)[0] for i in ids}
    report = eng.process_stream([UnlearnRequest(i, "hs") for i in ids])
    for row, i in zip(report.rows, ids):
        if slices[i] < eng.threshold:
            assert row.strategy_executed in ("dpus", "noop-consumed")
        else:
            assert row.strategy_executed == "prs"


def test_stream_tombstone_exclusion(tiny_dataset, tiny_config):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    ids = sample_request_ids(eng.plan, 25, seed=2)
    eng.process_stream([UnlearnRequest(i, "hs") for i in ids])
    live = set(eng.plan.live_ids().tolist())
    assert live.isdisjoint(ids)
    for i in range(1, 4):
        for j in range(eng.plan.num_batches(i)):
            assert set(eng.plan.batch_ids(i, j + 1)).isdisjoint(ids)


# ------------------------------------------------------------------ plumbing
def test_sample_request_ids_distinct_and_deterministic(trained_engine):
    ids_a = sample_request_ids(trained_engine.plan, 50, seed=13)
    ids_b = sample_request_ids(trained_engine.plan, 50, seed=13)
    assert ids_a == ids_b
    assert len(set(ids_a)) == 50
    with pytest.raises(InvalidArgument):
        sample_request_ids(trained_engine.plan, 10_000, seed=0)


def test_request_validates_strategy():
    with pytest.raises(InvalidArgument):
        UnlearnRequest(0, "magic")


def test_from_store_fingerprint_guard(tiny_dataset, tiny_config, tmp_path):
    eng = UnlearnEngine.train(tiny_dataset, tiny_config)
    eng.store.persist(tmp_path)
    from mubench import StateStore

    loaded = StateStore.load(tmp_path)
    other = gen_synthetic(600, 8, 2)
    with pytest.raises(InvalidArgument):
        UnlearnEngine.from_store(other, loaded)
