"""Round protocol: aggregation, client updates, scheduling, determinism."""

import dataclasses

import numpy as np
import pytest

from flwf import losses
from flwf.config import ClientConfig, ScenarioConfig, SyntheticSource
from flwf.continual import StrategyPolicy, TaskSequence, TaskSpec
from flwf.datasets import RoundBatch
from flwf.federation import (SEED_COMPOSE, SEED_DATA_GEN, SEED_EXEMPLAR,
                             SEED_INIT, SEED_ROUND_DRAW, SEED_TEST_DRAW,
                             SEED_TRAIN, ClientRuntime, ServerState,
                             client_update, fedavg, run_experiment, run_round,
                             stream_seed, _seed_int)
from flwf.metrics import SERVER
from flwf.network import (KIND_DENSE, KIND_DROPOUT, KIND_RELU,
                          KIND_SOFTMAX_OUTPUT, LayerConfig, ModelParams,
                          TrainConfig, init_params, params_equal)

LAYERS = (LayerConfig(KIND_DENSE, units=16), LayerConfig(KIND_RELU),
          LayerConfig(KIND_DROPOUT, rate=0.2), LayerConfig(KIND_DENSE, units=3),
          LayerConfig(KIND_SOFTMAX_OUTPUT))
INPUT = (8,)


def model(seed):
    return init_params(LAYERS, INPUT, seed=seed)


def brute_average(params_list, sizes):
    w = np.asarray(sizes, dtype=float)
    w = w / w.sum()
    out = params_list[0].copy()
    for i in range(len(out.weights)):
        for key in out.weights[i]:
            out.weights[i][key] = sum(
                wi * p.weights[i][key] for wi, p in zip(w, params_list))
    return out


def max_abs_gap(a: ModelParams, b: ModelParams) -> float:
    return max(np.abs(wa[k] - wb[k]).max()
               for wa, wb in zip(a.weights, b.weights) for k in wa)


def tiny_clients(algo="flwf2", use_exemplars=False):
    flwf2 = algo == losses.MODE_FLWF2
    split = TaskSequence((TaskSpec((1,), 1), TaskSpec((2,), 1)))
    joint = TaskSequence((TaskSpec((0, 1, 2), 2),))
    return (
        ClientConfig(name="c1", weight=1.0, algo=algo, tasks=split,
                     alpha=0.4, beta=0.3 if flwf2 else None,
                     policy=StrategyPolicy(mode="hybrid"),
                     use_exemplars=use_exemplars),
        ClientConfig(name="cg", weight=4.0, algo=algo, tasks=joint,
                     alpha=0.4, beta=0.3 if flwf2 else None,
                     policy=StrategyPolicy(mode="hybrid"),
                     use_exemplars=use_exemplars),
    )


def tiny_scenario(seed=0, rounds=2, algo="flwf2", use_exemplars=False,
                  clients=None):
    return ScenarioConfig(
        label="tiny", seed=seed, rounds=rounds, epochs=2, batch_size=16,
        learning_rate=0.05, dropout=0.2, n_classes=3, input_shape=INPUT,
        layers=LAYERS, total_clients=2,
        clients=clients if clients is not None else tiny_clients(algo, use_exemplars),
        data=SyntheticSource(per_class=80, feature_dim=8, separation=1.5),
        round_data_size=24, test_per_class=10, exemplar_capacity=5)


# -- seed streams -------------------------------------------------------------


def test_stream_seeds_are_distinct_across_coordinates():
    coords = [(s, p, c, r) for s in (0, 1) for p in range(7)
              for c in (0, 1) for r in (0, 1, 2)]
    ints = [_seed_int(stream_seed(*co)) for co in coords]
    assert len(set(ints)) == len(ints)


def test_stream_seed_is_reproducible():
    a = _seed_int(stream_seed(3, SEED_TRAIN, 1, 4))
    b = _seed_int(stream_seed(3, SEED_TRAIN, 1, 4))
    assert a == b


# -- fedavg ---------------------------------------------------------------------


def test_fedavg_matches_brute_force_weighted_mean():
    rng = np.random.default_rng(0)
    for trial in range(10):
        models = [model(seed=100 + 10 * trial + i) for i in range(3)]
        sizes = rng.integers(1, 200, size=3)
        got = fedavg(models, sizes)
        want = brute_average(models, sizes)
        assert max_abs_gap(got, want) < 1e-12


def test_fedavg_of_identical_models_is_exact():
    base = model(seed=7)
    out = fedavg([base, base.copy(), base.copy()], [3, 5, 2])
    assert params_equal(out, base)


def test_fedavg_two_party_hand_weights():
    a, b = model(seed=1), model(seed=2)
    got = fedavg([a, b], [1.0 * 120, 4.0 * 120])  # hint x draw size -> 0.2 / 0.8
    for wa, wb, wg in zip(a.weights, b.weights, got.weights):
        for key in wa:
            assert np.allclose(wg[key], wa[key] + 0.8 * (wb[key] - wa[key]),
                               atol=1e-15)


def test_fedavg_permutation_invariance():
    models = [model(seed=i) for i in (11, 12, 13, 14)]
    sizes = [5, 1, 9, 3]
    base = fedavg(models, sizes)
    rng = np.random.default_rng(1)
    for _ in range(5):
        order = rng.permutation(4)
        shuffled = fedavg([models[i] for i in order], [sizes[i] for i in order])
        assert max_abs_gap(base, shuffled) < 1e-12


def test_fedavg_stays_inside_convex_hull():
    models = [model(seed=i) for i in (21, 22, 23)]
    out = fedavg(models, [2, 3, 4])
    for i in range(len(out.weights)):
        for key in out.weights[i]:
            stack = np.stack([m.weights[i][key] for m in models])
            assert (out.weights[i][key] >= stack.min(axis=0) - 1e-12).all()
            assert (out.weights[i][key] <= stack.max(axis=0) + 1e-12).all()


def test_fedavg_input_validation():
    with pytest.raises(ValueError):
        fedavg([], [])
    with pytest.raises(ValueError):
        fedavg([model(seed=0)], [1, 2])
    with pytest.raises(ValueError):
        fedavg([model(seed=0), model(seed=1)], [1, 0])
    other = init_params((LayerConfig(KIND_DENSE, units=3),
                         LayerConfig(KIND_SOFTMAX_OUTPUT)), INPUT, seed=0)
    with pytest.raises(ValueError):
        fedavg([model(seed=0), other], [1, 1])


# -- client_update ------------------------------------------------------------------


def make_batch(seed, labels=(0, 1, 2)):
    rng = np.random.default_rng(seed)
    y = np.array(list(labels) * 8)
    return RoundBatch(rng.normal(size=(len(y), 8)), y, 3)


def train_cfg(epochs=2, seed=5):
    return TrainConfig(learning_rate=0.05, batch_size=16, epochs=epochs,
                       dropout_rate=0.2, rng_seed=seed)


def test_client_update_zero_epochs_returns_fresh_copy_of_server():
    server = model(seed=3)
    out, mode = client_update(server, None, make_batch(0), train_cfg(epochs=0),
                              losses.LossSpec(mode=losses.MODE_FINE_TUNE))
    assert params_equal(out, server)
    assert out is not server
    assert mode == losses.MODE_FINE_TUNE


def test_client_update_fine_tune_ignores_teachers():
    server = model(seed=3)
    teacher = model(seed=4)
    batch = make_batch(1)
    with_teacher, _ = client_update(server, teacher, batch, train_cfg(),
                                    losses.LossSpec(mode=losses.MODE_FINE_TUNE))
    without, _ = client_update(server, None, batch, train_cfg(),
                               losses.LossSpec(mode=losses.MODE_FINE_TUNE))
    assert params_equal(with_teacher, without)


def test_client_update_flwf1_without_teacher_falls_back_to_fine_tune():
    server = model(seed=3)
    batch = make_batch(2)
    spec = losses.LossSpec(mode=losses.MODE_FLWF1, alpha=0.4, temperature=2.0)
    got, mode = client_update(server, None, batch, train_cfg(), spec)
    assert mode == losses.MODE_FINE_TUNE
    want, _ = client_update(server, None, batch, train_cfg(),
                            losses.LossSpec(mode=losses.MODE_FINE_TUNE))
    assert params_equal(got, want)


def test_client_update_flwf2_with_full_label_weight_matches_fine_tune():
    # alpha = 1 zeroes both distillation coefficients, so the same seed
    # must give the same trajectory as plain fine-tuning
    server = model(seed=3)
    teacher = model(seed=4)
    batch = make_batch(3)
    spec = losses.LossSpec(mode=losses.MODE_FLWF2, alpha=1.0, beta=0.0,
                           temperature=2.0)
    got, mode = client_update(server, teacher, batch, train_cfg(), spec)
    assert mode == losses.MODE_FLWF2
    want, _ = client_update(server, None, batch, train_cfg(),
                            losses.LossSpec(mode=losses.MODE_FINE_TUNE))
    assert max_abs_gap(got, want) < 1e-12


def test_client_update_changes_the_student_but_not_the_inputs():
    server = model(seed=3)
    teacher = model(seed=4)
    server_before = server.copy()
    teacher_before = teacher.copy()
    batch = make_batch(4, labels=(1,))
    spec = losses.LossSpec(mode=losses.MODE_FLWF2, alpha=0.4, beta=0.3,
                           temperature=2.0)
    out, mode = client_update(server, teacher, batch, train_cfg(), spec)
    assert mode == losses.MODE_FLWF2
    assert not params_equal(out, server)
    assert params_equal(server, server_before)
    assert params_equal(teacher, teacher_before)


def test_client_update_rejects_prefilled_teacher_logits():
    server = model(seed=3)
    batch = make_batch(5)
    spec = losses.LossSpec(mode=losses.MODE_FLWF2, alpha=0.4, beta=0.3,
                           temperature=2.0,
                           teacher_server_logits=np.zeros((len(batch), 3)))
    with pytest.raises(ValueError):
        client_update(server, None, batch, train_cfg(), spec)


def test_client_update_rejects_empty_batch():
    batch = RoundBatch(np.zeros((0, 8)), np.zeros(0, dtype=int), 3)
    with pytest.raises(ValueError):
        client_update(model(seed=0), None, batch, train_cfg(),
                      losses.LossSpec(mode=losses.MODE_FINE_TUNE))


# -- run_round -----------------------------------------------------------------------


def fresh_runtime(scenario):
    from flwf.continual import ExemplarStore
    from flwf.datasets import draw_test_set
    from flwf.federation import build_pool
    from flwf.metrics import MetricsLedger

    pool = build_pool(scenario)
    test = draw_test_set(pool, scenario.test_per_class,
                         seed=stream_seed(scenario.seed, SEED_TEST_DRAW))
    server = ServerState(params=init_params(
        scenario.layers, scenario.input_shape,
        seed=stream_seed(scenario.seed, SEED_INIT)))
    ledger = MetricsLedger(
        test_labels=test.labels, n_classes=scenario.n_classes,
        total_rounds=scenario.rounds,
        task_classes={c.name: tuple(t.classes for t in c.tasks.tasks)
                      for c in scenario.clients},
        task_rounds={c.name: tuple(t.rounds for t in c.tasks.tasks)
                     for c in scenario.clients})
    clients = [ClientRuntime(index=i, cfg=c,
                             store=ExemplarStore(capacity=scenario.exemplar_capacity))
               for i, c in enumerate(scenario.clients)]
    return pool, test, server, ledger, clients


def test_run_round_enforces_round_ordering():
    scenario = tiny_scenario()
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    with pytest.raises(ValueError):
        run_round(scenario, server, clients, pool, test, ledger, 2)


def test_run_round_single_client_aggregate_is_that_client():
    clients_cfg = (ClientConfig(
        name="solo", weight=2.5, algo="flwf1",
        tasks=TaskSequence((TaskSpec((1,), 1), TaskSpec((2,), 1))),
        alpha=0.4, policy=StrategyPolicy(mode="distill-all")),)
    scenario = dataclasses.replace(tiny_scenario(), clients=clients_cfg,
                                   total_clients=1)
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    server, report = run_round(scenario, server, clients, pool, test, ledger, 1)
    assert params_equal(server.params, report.params["solo"])
    assert params_equal(server.params, clients[0].params)


def test_run_round_aggregate_uses_weight_hints():
    scenario = tiny_scenario()
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    before = server.params
    server, report = run_round(scenario, server, clients, pool, test, ledger, 1)
    want = brute_average([report.params["c1"], report.params["cg"]],
                         [1.0 * report.sizes["c1"], 4.0 * report.sizes["cg"]])
    assert max_abs_gap(server.params, want) < 1e-12
    assert report.sizes == {"c1": 24, "cg": 24}
    assert not params_equal(server.params, before)


def test_run_round_schedules_tasks_and_modes():
    scenario = tiny_scenario(algo="flwf1")
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    server, r1 = run_round(scenario, server, clients, pool, test, ledger, 1)
    server, r2 = run_round(scenario, server, clients, pool, test, ledger, 2)
    # c1 draws task 1 (class 1) then task 2 (class 2); single-class batches
    # stay unbalanced, but round 1 has no client teacher yet
    assert ledger.record_for("c1", 1).current_task == 1
    assert ledger.record_for("c1", 2).current_task == 2
    assert r1.modes["c1"] == "fine-tune"
    assert r2.modes["c1"] == "flwf1"
    # the generalized client always draws balanced batches, so the hybrid
    # policy keeps it on plain fine-tuning
    assert r1.modes["cg"] == r2.modes["cg"] == "fine-tune"
    assert ledger.record_for("c1", 1).learnt_classes == (1,)
    assert ledger.record_for("c1", 2).learnt_classes == (1, 2)
    assert ledger.record_for("cg", 2).learnt_classes == (0, 1, 2)


def test_run_round_draws_match_task_classes():
    scenario = tiny_scenario()
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    server, report = run_round(scenario, server, clients, pool, test, ledger, 1)
    c1_rows = report.draw_sources["c1"]
    assert (pool.labels[c1_rows] == 1).all()
    cg_rows = report.draw_sources["cg"]
    assert set(pool.labels[cg_rows]) == {0, 1, 2}


def test_run_round_exemplar_refresh_happens_after_training():
    scenario = tiny_scenario(use_exemplars=True)
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    c1 = clients[0]
    server, r1 = run_round(scenario, server, clients, pool, test, ledger, 1)
    # round 1: the store was empty during composition, so the trained batch
    # was the 24 fresh rows (2 epochs x ceil(24/16) = 4 steps)
    assert len(r1.loss_traces["c1"]) == 4
    assert c1.store.tasks_seen() == (1,)
    stored = {tuple(row) for row in c1.store.entries[1][0]}
    drawn = {tuple(row) for row in pool.features[r1.draw_sources["c1"]]}
    assert stored <= drawn
    # round 2: task 1 exemplars join the fresh task-2 rows (29 rows -> 2
    # chunks per epoch), and the store gains task 2 afterwards
    server, r2 = run_round(scenario, server, clients, pool, test, ledger, 2)
    assert len(r2.loss_traces["c1"]) == 4
    assert c1.store.tasks_seen() == (1, 2)


def test_run_round_without_exemplars_leaves_stores_empty():
    scenario = tiny_scenario(use_exemplars=False)
    pool, test, server, ledger, clients = fresh_runtime(scenario)
    run_round(scenario, server, clients, pool, test, ledger, 1)
    assert all(c.store.entries == {} for c in clients)


# -- run_experiment --------------------------------------------------------------


def test_run_experiment_is_deterministic():
    a = run_experiment(tiny_scenario(seed=9))
    b = run_experiment(tiny_scenario(seed=9))
    assert a.ledger.to_json() == b.ledger.to_json()
    assert params_equal(a.server.params, b.server.params)
    for ca, cb in zip(a.clients, b.clients):
        assert params_equal(ca.params, cb.params)


def test_run_experiment_seed_changes_the_run():
    a = run_experiment(tiny_scenario(seed=9))
    b = run_experiment(tiny_scenario(seed=10))
    assert a.ledger.to_json() != b.ledger.to_json()


def test_run_experiment_parallel_equals_serial():
    serial = run_experiment(tiny_scenario(seed=11), parallel=False)
    threaded = run_experiment(tiny_scenario(seed=11), parallel=True)
    assert serial.ledger.to_json() == threaded.ledger.to_json()
    assert params_equal(serial.server.params, threaded.server.params)


def test_run_experiment_zero_rounds_evaluates_initial_server_only():
    scenario = tiny_scenario(rounds=0)
    result = run_experiment(scenario)
    assert result.reports == []
    assert result.ledger.owners() == (SERVER,)
    assert [r.round_index for r in result.ledger.records] == [0]
    assert all(c.params is None for c in result.clients)


def test_run_experiment_ledger_covers_all_owners_and_rounds():
    result = run_experiment(tiny_scenario(seed=12))
    assert set(result.ledger.owners()) == {SERVER, "c1", "cg"}
    for owner in ("c1", "cg"):
        rounds = sorted(r.round_index for r in result.ledger.records
                        if r.owner == owner)
        assert rounds == [1, 2]
    server_rounds = sorted(r.round_index for r in result.ledger.records
                           if r.owner == SERVER)
    assert server_rounds == [0, 1, 2]
    # aggregates are computable straight off the finished ledger
    assert 0.0 <= result.ledger.general_accuracy("c1") <= 1.0
    assert 0.0 <= result.ledger.personal_accuracy("cg") <= 1.0
