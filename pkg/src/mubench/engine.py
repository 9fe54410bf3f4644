"""Sliced training with increment recording, and the four revocation strategies.

Training walks the slices in order, checkpointing parameters plus optimizer
state after each one; for slices below the dispatch threshold it also records
the summed per-batch parameter increment. Revocations are then served by:

* ``prs``  - roll back to the checkpoint before the sample's slice, drop the
  sample, retrain the suffix (the always-retrain flavor doubles as the SISA
  baseline, shards fixed at one);
* ``dpus`` - subtract the sample's batch increment from the final parameters;
* ``hs``   - dispatch to dpus below the threshold, prs at or above it;
* ``ohs``  - subtract the batch increment from an earlier checkpoint's
  parameters, then retrain the trailing slices from that amended start.

All mutation (training, unlearning, store writes) is serialized on the engine
instance; parameter snapshots handed out are safe to read concurrently.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostConfig, threshold as compute_threshold
from .data import Dataset, SlicePlan, make_slice_plan
from .errors import (
    DispatchError,
    InvalidArgument,
    MuError,
    NumericError,
    TrainingDiverged,
)
from .nn import (
    AdamHyper,
    Batch,
    ModelLayout,
    OptimizerState,
    ParameterVector,
    adam_step,
    combine,
    evaluate,
    init_params,
    loss_grad,
)
from .report import MetricsReport, RequestRow
from .store import Checkpoint, StateStore

F64 = np.float64

STRATEGIES = ("prs", "dpus", "hs", "ohs")


@dataclass
class TrainConfig:
    """Sliced-training hyperparameters; defaults follow the benchmark setup
    (batch size 128, learning rate 0.005, Adam)."""

    num_slices: int = 4
    batch_size: int = 128
    learning_rate: float = 0.005
    epochs_per_slice: int = 1
    seed: int = 0
    phi: float = 0.0
    hidden_dims: tuple[int, ...] = (128, 128)

    def validate(self) -> None:
        if self.num_slices < 1:
            raise InvalidArgument("num_slices must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.epochs_per_slice < 1:
            raise InvalidArgument("epochs_per_slice must be >= 1")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")
        if self.phi < 0:
            raise InvalidArgument("phi must be non-negative")

    def hyper(self) -> AdamHyper:
        return AdamHyper(learning_rate=self.learning_rate)


@dataclass
class Model:
    params: ParameterVector
    layout: ModelLayout
    plan_version: int
    provenance: dict

    def copy(self) -> "Model":
        return Model(self.params.copy(), self.layout, self.plan_version, dict(self.provenance))


@dataclass(frozen=True)
class UnlearnRequest:
    sample_id: int
    requested_strategy: str = "hs"

    def __post_init__(self) -> None:
        if self.requested_strategy not in STRATEGIES:
            raise InvalidArgument(
                f"requested_strategy must be one of {STRATEGIES}, "
                f"got {self.requested_strategy!r}"
            )


@dataclass
class UnlearnOutcome:
    strategy_executed: str  # prs | dpus | ohs | noop-consumed
    located_at: tuple[int, int]
    wall_time: float
    params_after: ParameterVector
    checkpoints_rewritten: list[int] = field(default_factory=list)


def sample_request_ids(plan: SlicePlan, count: int, seed: int) -> list[int]:
    """Draw distinct live ids uniformly without replacement."""
    live = plan.live_ids()
    if count > live.size:
        raise InvalidArgument(f"cannot draw {count} requests from {live.size} live ids")
    picked = np.random.default_rng(seed).choice(live, size=count, replace=False)
    return [int(x) for x in picked]


class UnlearnEngine:
    """Owns the dataset view, slice plan, state store and current model."""

    def __init__(self, dataset: Dataset, config: TrainConfig, ohs_depth: int | None = None):
        config.validate()
        if config.num_slices > dataset.n:
            raise InvalidArgument("num_slices cannot exceed the dataset size")
        self.dataset = dataset
        self.config = config
        self.layout = ModelLayout(dataset.feature_dim, config.hidden_dims, 2)
        decision = compute_threshold(
            CostConfig(n=dataset.n, num_slices=config.num_slices, phi=config.phi)
        )
        self.threshold = decision.t
        self.default_ohs_depth = decision.r if ohs_depth is None else int(ohs_depth)
        if not 0 <= self.default_ohs_depth <= config.num_slices:
            raise InvalidArgument("ohs_depth must be in [0, num_slices]")
        self.plan = make_slice_plan(dataset, config.num_slices, config.batch_size, config.seed)
        self.plan_version = 0
        self.store = StateStore(
            layout=self.layout,
            num_slices=config.num_slices,
            threshold=self.threshold,
            n=dataset.n,
            batch_size=config.batch_size,
            seeds={"train": config.seed},
            hyper=config.hyper(),
            epochs_per_slice=config.epochs_per_slice,
            phi=config.phi,
        )
        self.model: Model | None = None

    # ---- construction helpers -----------------------------------------
    @classmethod
    def train(cls, dataset: Dataset, config: TrainConfig, ohs_depth: int | None = None):
        engine = cls(dataset, config, ohs_depth=ohs_depth)
        engine.fit()
        return engine

    @classmethod
    def from_store(cls, dataset: Dataset, store: StateStore, ohs_depth: int | None = None):
        """Rebuild a live engine around a loaded store."""
        if store.n != dataset.n:
            raise InvalidArgument(
                f"store was trained on n={store.n}, dataset has n={dataset.n}"
            )
        if store.dataset_fingerprint and store.dataset_fingerprint != dataset.fingerprint():
            raise InvalidArgument("dataset fingerprint does not match the store")
        config = TrainConfig(
            num_slices=store.num_slices,
            batch_size=store.batch_size,
            learning_rate=store.hyper.learning_rate,
            epochs_per_slice=store.epochs_per_slice,
            seed=int(store.seeds["train"]),
            phi=store.phi,
            hidden_dims=tuple(store.layout.hidden_dims),
        )
        engine = cls(dataset, config, ohs_depth=ohs_depth)
        engine.store = store
        engine.threshold = store.threshold
        engine.plan_version = store.plan_version
        for sid in store.tombstones:
            engine.plan = engine.plan.tombstone(sid)
        final = store.get_checkpoint(store.num_slices)
        engine.model = Model(
            final.params.copy(),
            store.layout,
            store.plan_version,
            {"dataset": dataset.name, "config": asdict(config)},
        )
        return engine

    def clone(self) -> "UnlearnEngine":
        dup = UnlearnEngine.__new__(UnlearnEngine)
        dup.dataset = self.dataset
        dup.config = self.config
        dup.layout = self.layout
        dup.threshold = self.threshold
        dup.default_ohs_depth = self.default_ohs_depth
        dup.plan = self.plan
        dup.plan_version = self.plan_version
        dup.store = self.store.clone()
        dup.model = self.model.copy() if self.model is not None else None
        return dup

    # ---- training -------------------------------------------------------
    def fit(self) -> Model:
        if self.model is not None:
            raise InvalidArgument("engine is already trained")
        cfg = self.config
        params = init_params(self.layout, cfg.seed)
        state = OptimizerState.fresh(self.layout, cfg.hyper())
        self.store.set_tombstones(self.plan.tombstones)
        self.store.put_checkpoint(Checkpoint(0, params.copy(), state.copy(), self.plan_version))
        for i in range(1, cfg.num_slices + 1):
            params, state = self._train_slice(params, state, i, record=i < self.threshold)
            self.store.put_checkpoint(
                Checkpoint(i, params.copy(), state.copy(), self.plan_version)
            )
        self.store.dataset_fingerprint = self.dataset.fingerprint()
        self.model = Model(
            params.copy(),
            self.layout,
            self.plan_version,
            {"dataset": self.dataset.name, "config": asdict(cfg)},
        )
        return self.model

    def _train_slice(
        self, params: ParameterVector, state: OptimizerState, slice_index: int, record: bool
    ) -> tuple[ParameterVector, OptimizerState]:
        """Run epochs_per_slice passes over one slice; optionally ledger deltas.

        Batch membership is fixed by the plan; each (slice, epoch) pass only
        shuffles the visit order, so a batch's summed delta stays attributable
        across epochs. The shuffle stream is derived from (seed, slice, epoch)
        and never from request history, which keeps suffix retraining
        bit-reproducible regardless of which revocation triggered it.
        """
        cfg = self.config
        nb = self.plan.num_batches(slice_index)
        acc = {j: np.zeros(self.layout.param_count, dtype=F64) for j in range(nb)} if record else None
        for epoch in range(1, cfg.epochs_per_slice + 1):
            order = np.random.default_rng((cfg.seed, slice_index, epoch)).permutation(nb)
            for j0 in (int(j) for j in order):
                ids = np.asarray(self.plan.batch_ids(slice_index, j0 + 1), dtype=np.int64)
                batch = Batch(self.dataset.features[ids], self.dataset.labels[ids], ids)
                loss, grad = loss_grad(params, batch)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss in slice {slice_index}, epoch {epoch}"
                    )
                before = params.values.astype(F64) if record else None
                try:
                    params, state = adam_step(params, state, grad)
                except NumericError as exc:
                    raise TrainingDiverged(
                        f"non-finite gradient in slice {slice_index}, epoch {epoch}"
                    ) from exc
                if record:
                    acc[j0] += params.values.astype(F64) - before
        if record:
            self.store.drop_increments(slice_index)
            for j0 in range(nb):
                delta = ParameterVector(acc[j0].astype(np.float32), self.layout)
                self.store.record_increment(slice_index, j0 + 1, delta)
            self.store.set_recorded_batches(slice_index, self.plan.slices[slice_index - 1])
        return params, state

    def _retrain_from(
        self,
        start_slice: int,
        params: ParameterVector | None = None,
        state: OptimizerState | None = None,
    ) -> list[int]:
        """Retrain slices start_slice..S from checkpoint start_slice-1, or from
        an explicitly supplied starting point (the amended one OHS builds)."""
        if params is None or state is None:
            cp = self.store.get_checkpoint(start_slice - 1)
            params, state = cp.params.copy(), cp.opt_state.copy()
        self.plan_version += 1
        for k in range(start_slice, self.config.num_slices + 1):
            params, state = self._train_slice(params, state, k, record=k < self.threshold)
            self.store.put_checkpoint(
                Checkpoint(k, params.copy(), state.copy(), self.plan_version)
            )
        self.store.plan_version = self.plan_version
        self.model.params = params.copy()
        self.model.plan_version = self.plan_version
        return list(range(start_slice, self.config.num_slices + 1))

    def _tombstone(self, sample_id: int) -> None:
        self.plan = self.plan.tombstone(sample_id)
        self.store.set_tombstones(self.plan.tombstones)

    def _require_model(self) -> Model:
        if self.model is None:
            raise InvalidArgument("engine is not trained yet")
        return self.model

    # ---- strategies -------------------------------------------------------
    def unlearn_prs(self, sample_id: int) -> UnlearnOutcome:
        """Partial retraining: tombstone, roll back, retrain the suffix."""
        self._require_model()
        t0 = time.perf_counter()
        i, j = self.plan.locate(sample_id)
        self._tombstone(sample_id)
        rewritten = self._retrain_from(i)
        return UnlearnOutcome(
            "prs", (i, j), time.perf_counter() - t0, self.model.params.copy(), rewritten
        )

    def unlearn_dpus(self, sample_id: int, force: bool = False) -> UnlearnOutcome:
        """Direct parameter update: final params minus the sample's batch delta.

        The ledger is addressed by recording-time batch membership, since
        tombstoning re-chunks the live plan. A batch's delta is subtracted at
        most once; a later request hitting a consumed batch only tombstones.
        """
        model = self._require_model()
        t0 = time.perf_counter()
        i, _ = self.plan.locate(sample_id)
        if i >= self.threshold and not force:
            raise DispatchError(
                f"sample {sample_id} sits in slice {i} >= threshold {self.threshold}; "
                "direct update requires force=True there"
            )
        j = self.store.recorded_batch_index(i, sample_id)
        record = self.store.get_increment(i, j)
        if record.consumed:
            self._tombstone(sample_id)
            return UnlearnOutcome(
                "noop-consumed", (i, j), time.perf_counter() - t0, model.params.copy(), []
            )
        updated = combine(model.params, record.delta, "-")
        self.store.mark_consumed(i, j)
        self._tombstone(sample_id)
        model.params = updated
        return UnlearnOutcome(
            "dpus", (i, j), time.perf_counter() - t0, updated.copy(), []
        )

    def unlearn_hs(self, sample_id: int) -> UnlearnOutcome:
        """Hybrid: direct update strictly below the threshold, else retraining."""
        self._require_model()
        t0 = time.perf_counter()
        i, _ = self.plan.locate(sample_id)
        if i < self.threshold:
            outcome = self.unlearn_dpus(sample_id)
        else:
            outcome = self.unlearn_prs(sample_id)
        outcome.wall_time = time.perf_counter() - t0
        return outcome

    def unlearn_ohs(self, sample_id: int, depth: int | None = None) -> UnlearnOutcome:
        """Optimized hybrid: subtract at checkpoint S-r, retrain the last r slices.

        The subtraction amends the retraining starting point only; checkpoint
        S-r itself stays pristine and exactly the trailing checkpoints are
        rewritten. depth r = 0 degenerates to the direct update; samples at or
        above the threshold take plain retraining.
        """
        self._require_model()
        t0 = time.perf_counter()
        r = self.default_ohs_depth if depth is None else int(depth)
        if not 0 <= r <= self.config.num_slices:
            raise InvalidArgument("ohs depth must be in [0, num_slices]")
        i, _ = self.plan.locate(sample_id)
        if i >= self.threshold:
            outcome = self.unlearn_prs(sample_id)
            outcome.wall_time = time.perf_counter() - t0
            return outcome
        if r == 0:
            outcome = self.unlearn_dpus(sample_id, force=True)
            outcome.wall_time = time.perf_counter() - t0
            return outcome
        base = self.config.num_slices - r
        j = self.store.recorded_batch_index(i, sample_id)
        record = self.store.get_increment(i, j)
        base_cp = self.store.get_checkpoint(base)
        if record.consumed:
            start = base_cp.params.copy()
        else:
            start = combine(base_cp.params, record.delta, "-")
            self.store.mark_consumed(i, j)
        self._tombstone(sample_id)
        rewritten = self._retrain_from(base + 1, params=start, state=base_cp.opt_state.copy())
        return UnlearnOutcome(
            "ohs", (i, j), time.perf_counter() - t0, self.model.params.copy(), rewritten
        )

    # ---- replay ---------------------------------------------------------
    def dispatch(self, request: UnlearnRequest) -> UnlearnOutcome:
        if request.requested_strategy == "prs":
            return self.unlearn_prs(request.sample_id)
        if request.requested_strategy == "dpus":
            return self.unlearn_dpus(request.sample_id, force=True)
        if request.requested_strategy == "hs":
            return self.unlearn_hs(request.sample_id)
        return self.unlearn_ohs(request.sample_id)

    def process_stream(
        self,
        requests: Sequence[UnlearnRequest],
        eval_dataset: Dataset | None = None,
        strategy_label: str | None = None,
        config_hash: str | None = None,
    ) -> MetricsReport:
        """Serve requests in arrival order; abort on error with a partial report."""
        model = self._require_model()
        label = strategy_label or (requests[0].requested_strategy if requests else "hs")
        report = MetricsReport(
            strategy=label,
            num_slices=self.config.num_slices,
            phi=self.config.phi,
            t=self.threshold,
            r=self.default_ohs_depth,
            config_hash=config_hash,
        )
        if eval_dataset is not None:
            report.pre_accuracy = evaluate(model.params, eval_dataset)
        for idx, request in enumerate(requests):
            try:
                outcome = self.dispatch(request)
            except MuError as exc:
                report.partial = True
                report.error = f"request {idx} (sample {request.sample_id}): {exc}"
                break
            report.rows.append(
                RequestRow(
                    idx,
                    outcome.strategy_executed,
                    outcome.located_at[0],
                    outcome.located_at[1],
                    outcome.wall_time,
                )
            )
        if eval_dataset is not None:
            report.final_accuracy = evaluate(model.params, eval_dataset)
        return report
