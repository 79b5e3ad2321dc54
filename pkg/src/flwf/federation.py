"""Synchronous federated rounds: broadcast, local updates, FedAvg, teachers.

Every round r proceeds as: each client receives the current server model,
draws its round data from the shared pool, optionally mixes in stored
exemplars, picks its loss mode, trains locally for E epochs, and returns
its parameters; the server then aggregates them with size-and-hint
weighted FedAvg.  The client's own previous-round model and the incoming
server model serve as the two distillation teachers; both are frozen for
the whole round (their logits are computed once, before any SGD step,
and their digests are asserted unchanged afterwards).

Client updates are pure functions of their inputs, so they may run
sequentially or on a thread pool without changing a single bit of the
result: all randomness comes from per-(purpose, client, round) seed
streams derived from the one experiment seed.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .config import ClientConfig, CsvSource, ScenarioConfig, SyntheticSource
from .continual import (ExemplarStore, compose_training_batch, current_task,
                        select_loss_mode, update_exemplars)
from .datasets import (DatasetPool, RoundBatch, TestSet, draw_round_data,
                       draw_test_set, generate_synthetic, load_csv)
from .metrics import SERVER, MetricsLedger, RoundRecord, predict
from .network import (ModelParams, TrainConfig, forward, init_params,
                      params_digest, train_local)

# Purposes of the derived seed streams; a stream is identified by the
# tuple (experiment seed, purpose, client index, round), so adding a
# client or a round never perturbs any other stream.
SEED_DATA_GEN = 0
SEED_TEST_DRAW = 1
SEED_INIT = 2
SEED_ROUND_DRAW = 3
SEED_COMPOSE = 4
SEED_TRAIN = 5
SEED_EXEMPLAR = 6


def stream_seed(experiment_seed: int, purpose: int, client: int = 0,
                round_index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence((experiment_seed, purpose, client, round_index))


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int.from_bytes(seq.generate_state(4, np.uint32).tobytes(), "little")


@dataclass
class ClientRuntime:
    """Mutable per-client state carried across rounds."""

    index: int
    cfg: ClientConfig
    store: ExemplarStore
    params: ModelParams | None = None  # previous-round model; None before round 1

    @property
    def name(self) -> str:
        return self.cfg.name


@dataclass
class ServerState:
    params: ModelParams
    round_index: int = 0


@dataclass
class RoundReport:
    """What one round produced, keyed by client name."""

    round_index: int
    params: dict[str, ModelParams] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)
    modes: dict[str, str] = field(default_factory=dict)
    loss_traces: dict[str, list[float]] = field(default_factory=dict)
    draw_sources: dict[str, np.ndarray] = field(default_factory=dict)


def client_update(server_params: ModelParams, client_teacher: ModelParams | None,
                  batch: RoundBatch, train_cfg: TrainConfig,
                  spec: losses.LossSpec, loss_trace: list | None = None
                  ) -> tuple[ModelParams, str]:
    """One local update: student starts from the server model, teachers are
    frozen, and the returned mode is what was actually trained with.

    A flwf1 spec without a client teacher (round 1) falls back to plain
    fine-tuning; a flwf2 spec without one trains against the server
    teacher alone.  Teacher logits arriving pre-filled in ``spec`` are an
    error: they are computed here, once, from the frozen teachers.
    """
    if server_params is None:
        raise ValueError("client_update needs the server model")
    if len(batch) == 0:
        raise ValueError("client_update needs a nonempty batch")
    if spec.teacher_client_logits is not None or spec.teacher_server_logits is not None:
        raise ValueError("teacher logits are computed inside client_update")

    if spec.mode == losses.MODE_FLWF1 and client_teacher is None:
        spec = losses.LossSpec(mode=losses.MODE_FINE_TUNE)
    if spec.mode == losses.MODE_FLWF1:
        spec = dataclasses.replace(
            spec, teacher_client_logits=forward(client_teacher, batch.features))
    elif spec.mode == losses.MODE_FLWF2:
        fills = {"teacher_server_logits": forward(server_params, batch.features)}
        if client_teacher is not None:
            fills["teacher_client_logits"] = forward(client_teacher, batch.features)
        spec = dataclasses.replace(spec, **fills)

    frozen = [params_digest(server_params)]
    if client_teacher is not None:
        frozen.append(params_digest(client_teacher))

    student = train_local(server_params.copy(), batch, train_cfg, spec,
                          loss_trace=loss_trace)

    after = [params_digest(server_params)]
    if client_teacher is not None:
        after.append(params_digest(client_teacher))
    assert frozen == after, "teacher parameters changed during local training"
    return student, spec.mode


def fedavg(params_list, sizes) -> ModelParams:
    """Size-weighted element-wise average of the clients' models.

    Computed in delta form around the first model so that aggregating
    identical models returns them exactly.
    """
    params_list = list(params_list)
    sizes = np.asarray(list(sizes), dtype=float)
    if not params_list:
        raise ValueError("fedavg needs at least one model")
    if len(sizes) != len(params_list):
        raise ValueError("one size per model required")
    if (sizes <= 0).any():
        raise ValueError("sizes must be positive")
    base = params_list[0]
    for other in params_list[1:]:
        if not base.same_architecture(other):
            raise ValueError("fedavg models must share one architecture")
    weights = sizes / sizes.sum()
    assert abs(weights.sum() - 1.0) <= 1e-12
    out = base.copy()
    for params, w in zip(params_list[1:], weights[1:]):
        for target, base_w, source in zip(out.weights, base.weights, params.weights):
            for key in target:
                target[key] += w * (source[key] - base_w[key])
    return out


def _loss_spec_for(cfg: ClientConfig, mode: str) -> losses.LossSpec:
    if mode == losses.MODE_FINE_TUNE:
        return losses.LossSpec(mode=mode)
    if mode == losses.MODE_FLWF1:
        return losses.LossSpec(mode=mode, alpha=cfg.alpha,
                               temperature=cfg.temperature)
    return losses.LossSpec(mode=mode, alpha=cfg.alpha, beta=cfg.beta,
                           temperature=cfg.temperature)


def run_round(scenario: ScenarioConfig, server: ServerState,
              clients: list[ClientRuntime], pool: DatasetPool, test: TestSet,
              ledger: MetricsLedger, round_index: int,
              parallel: bool = False) -> tuple[ServerState, RoundReport]:
    """One full communication round; mutates clients (params, stores) and
    the ledger, returns the next server state."""
    if round_index != server.round_index + 1:
        raise ValueError(f"round {round_index} does not follow "
                         f"server round {server.round_index}")
    report = RoundReport(round_index=round_index)

    # Pool draws happen sequentially so row consumption stays ordered; the
    # training jobs themselves are scheduling-independent.
    staged = []
    for client in clients:
        t, task = current_task(client.cfg.tasks, round_index)
        fresh = draw_round_data(
            pool, task.classes, scenario.round_data_size,
            seed=stream_seed(scenario.seed, SEED_ROUND_DRAW, client.index, round_index))
        batch = fresh
        if client.cfg.use_exemplars:
            batch = compose_training_batch(
                fresh, client.store, t,
                seed=stream_seed(scenario.seed, SEED_COMPOSE, client.index, round_index))
        if client.cfg.algo == losses.MODE_FINE_TUNE:
            mode = losses.MODE_FINE_TUNE
        else:
            mode = select_loss_mode(client.cfg.policy, batch, client.cfg.algo)
        staged.append((client, t, fresh, batch, mode))

    def train_one(entry):
        client, t, fresh, batch, mode = entry
        train_cfg = TrainConfig(
            learning_rate=scenario.learning_rate,
            batch_size=scenario.batch_size,
            epochs=scenario.epochs,
            dropout_rate=scenario.dropout,
            rng_seed=_seed_int(stream_seed(scenario.seed, SEED_TRAIN,
                                           client.index, round_index)))
        trace: list[float] = []
        params, used_mode = client_update(
            server.params, client.params, batch, train_cfg,
            _loss_spec_for(client.cfg, mode), loss_trace=trace)
        return params, used_mode, trace

    if parallel and len(staged) > 1:
        with ThreadPoolExecutor(max_workers=len(staged)) as pool_exec:
            outcomes = list(pool_exec.map(train_one, staged))
    else:
        outcomes = [train_one(entry) for entry in staged]

    for (client, t, fresh, batch, _), (params, used_mode, trace) in zip(staged, outcomes):
        report.params[client.name] = params
        report.sizes[client.name] = len(fresh)
        report.modes[client.name] = used_mode
        report.loss_traces[client.name] = trace
        report.draw_sources[client.name] = fresh.source_indices.copy()

    aggregated = fedavg(
        [report.params[c.name] for c in clients],
        [c.cfg.weight * report.sizes[c.name] for c in clients])

    for (client, t, fresh, _, _), (params, _, _) in zip(staged, outcomes):
        client.params = params  # next round's client teacher
        if client.cfg.use_exemplars:
            client.store = update_exemplars(
                client.store, t, fresh,
                seed=stream_seed(scenario.seed, SEED_EXEMPLAR,
                                 client.index, round_index))
        ledger.append(RoundRecord(
            owner=client.name, round_index=round_index,
            predictions=predict(params, test.features),
            current_task=t,
            learnt_classes=client.cfg.tasks.classes_started_by(round_index)))
    ledger.append(RoundRecord(
        owner=SERVER, round_index=round_index,
        predictions=predict(aggregated, test.features)))

    return ServerState(params=aggregated, round_index=round_index), report


@dataclass
class ExperimentResult:
    scenario: ScenarioConfig
    server: ServerState
    clients: list[ClientRuntime]
    ledger: MetricsLedger
    reports: list[RoundReport]
    test: TestSet


def build_pool(scenario: ScenarioConfig) -> DatasetPool:
    if isinstance(scenario.data, SyntheticSource):
        return generate_synthetic(
            n_classes=scenario.n_classes,
            per_class=scenario.data.per_class,
            feature_dim=scenario.data.feature_dim,
            separation=scenario.data.separation,
            seed=stream_seed(scenario.seed, SEED_DATA_GEN))
    assert isinstance(scenario.data, CsvSource)
    return load_csv(scenario.data.path, n_classes=scenario.n_classes)


def run_experiment(scenario: ScenarioConfig, parallel: bool = False) -> ExperimentResult:
    """Execute the whole scenario: R rounds plus the round-0 evaluation of
    the freshly initialized server model.  Deterministic per seed."""
    pool = build_pool(scenario)
    test = draw_test_set(pool, scenario.test_per_class,
                         seed=stream_seed(scenario.seed, SEED_TEST_DRAW))
    server = ServerState(params=init_params(
        scenario.layers, scenario.input_shape,
        seed=stream_seed(scenario.seed, SEED_INIT)))

    task_classes = {}
    task_rounds = {}
    if scenario.rounds > 0:
        for c in scenario.clients:
            task_classes[c.name] = tuple(t.classes for t in c.tasks.tasks)
            task_rounds[c.name] = tuple(t.rounds for t in c.tasks.tasks)
    ledger = MetricsLedger(
        test_labels=test.labels,
        n_classes=scenario.n_classes,
        total_rounds=scenario.rounds,
        task_classes=task_classes,
        task_rounds=task_rounds)

    clients = [ClientRuntime(index=i, cfg=c,
                             store=ExemplarStore(capacity=scenario.exemplar_capacity))
               for i, c in enumerate(scenario.clients)]

    ledger.append(RoundRecord(owner=SERVER, round_index=0,
                              predictions=predict(server.params, test.features)))

    reports: list[RoundReport] = []
    for r in range(1, scenario.rounds + 1):
        server, report = run_round(scenario, server, clients, pool, test,
                                   ledger, r, parallel=parallel)
        reports.append(report)
    return ExperimentResult(scenario=scenario, server=server, clients=clients,
                            ledger=ledger, reports=reports, test=test)
