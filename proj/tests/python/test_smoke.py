"""Smoke tests for the python bindings: environment stepping, reward values,
normalization statistics, and a miniature end-to-end pipeline run."""

import json
import math
import os
import tempfile

import numpy as np
import pytest

import mbpars


def test_env_episode_roundtrip():
    grid = mbpars.build_grid(mbpars.GridConfig())
    assert grid.n_buses == 6
    train, test = mbpars.default_task_sets(grid)
    assert len(train) == 9
    assert len(test) == 24

    task = train[0]
    state = mbpars.reset(grid, task)
    assert state.t == 0.0
    assert np.allclose(state.load_frac, 1.0)

    zero = np.zeros(len(grid.controlled))
    for _ in range(80):
        state = mbpars.step(state, zero, grid)
    assert state.done
    # The fault leaves the no-shed grid depressed below the recovery level.
    assert min(state.voltage) < 0.95

    obs = mbpars.observe(state)
    assert obs.shape == (13,)


def test_env_determinism():
    grid = mbpars.build_grid(mbpars.GridConfig())
    task = mbpars.Task(load_scale=1.15, fault_bus=2)
    a = np.full(3, -0.05)
    s1 = mbpars.reset(grid, task)
    s2 = mbpars.reset(grid, task)
    for _ in range(40):
        s1 = mbpars.step(s1, a, grid)
        s2 = mbpars.step(s2, a, grid)
    assert np.array_equal(s1.voltage, s2.voltage)
    assert np.array_equal(s1.load_frac, s2.load_frac)


def test_reward_hand_values():
    params = mbpars.RewardParams()
    t_pf = 1.1
    # Soft-penalty band edge and the shaped branch.
    v = np.array([1.0, 1.0, 0.95 - params.dead_band])
    assert mbpars.step_reward(v, np.zeros(1), 0, t_pf + 4.5, t_pf, params) == -1000.0
    v = np.array([1.0, 1.0, 1.0])
    shed = np.array([0.05])
    r = mbpars.step_reward(v, shed, 0, t_pf + 2.0, t_pf, params)
    assert math.isclose(r, -params.c2 * 0.05)
    assert mbpars.delta_v(0.85, t_pf + 1.0, t_pf) == pytest.approx(-0.05)
    assert mbpars.episode_return([-1.0, -2.0, -3.0]) == -6.0


def test_running_stats():
    stats = mbpars.RunningStats(1)
    for x in (1.0, 2.0, 3.0):
        stats.update(np.array([x]))
    assert stats.mean()[0] == pytest.approx(2.0)
    assert stats.stddev()[0] == pytest.approx(math.sqrt(2.0 / 3.0))
    z = stats.normalize(np.array([3.0]))[0]
    assert z == pytest.approx(1.2247448, rel=1e-6)


def test_uvls_and_bounded_policy():
    grid = mbpars.build_grid(mbpars.GridConfig())
    uvls = mbpars.UvlsController(mbpars.UvlsRule(), grid.controlled, grid.n_buses)
    state = mbpars.reset(grid, mbpars.Task(fault_bus=0))
    shed_seen = False
    while not state.done:
        action = uvls.action(mbpars.observe(state))
        assert action.min() >= -0.2 and action.max() <= 0.0
        shed_seen = shed_seen or action.min() < 0.0
        state = mbpars.step(state, action, grid)
    assert shed_seen
    assert min(state.voltage) >= 0.95  # UVLS clears the default task


def test_surrogate_bounds():
    model = mbpars.make_surrogate(6, 3, [16, 8], 5, 1.0, 3)
    s = np.random.default_rng(0).uniform(0.0, 1.2, size=9)
    a = np.full(3, -0.1)
    ctx = np.array([0.0, 1.0, 0.1, 0.5])
    delta = mbpars.predict_delta(model, s, a, ctx)
    assert delta.shape == (9,)
    assert np.abs(delta).max() <= 1.0


def test_mini_pipeline(tmp_path):
    config = {
        "seed": 5,
        "out_dir": str(tmp_path / "run"),
        "backend": "model_based",
        "use_imitation": True,
        "workers": 2,
        "tasks": {
            "preset": "explicit",
            "train": [
                {"load_scale": 1.0, "fault_bus": 0, "fault_start": 1.0, "fault_duration": 0.1},
                {"load_scale": 1.15, "fault_bus": 2, "fault_start": 1.0, "fault_duration": 0.1},
            ],
            "test": [
                {"load_scale": 0.92, "fault_bus": 1, "fault_start": 1.0, "fault_duration": 0.1},
            ],
        },
        "dataset": {"episodes_per_task": 3, "noise_std": 0.03, "M": 5},
        "surrogate": {"hidden": [24, 12], "delta_max": 1.0, "epochs": 3,
                      "retrain_epochs": 2, "UF": 2, "lr": 2e-3,
                      "batch_size": 128, "optimizer": "adam"},
        "policy": {"hidden": 10, "bc_epochs": 3, "bc_lr": 2e-3,
                   "bc_batch_episodes": 3, "tbptt": 20},
        "pars": {"N": 4, "b": 2, "m": 1, "H": 2, "p_tasks": 2,
                 "alpha_with_il": 0.01, "nu_with_il": 0.02},
    }
    cfg = mbpars.parse_config_json(json.dumps(config))
    dataset = mbpars.cmd_gen_data(cfg)
    assert os.path.exists(dataset)
    surrogate = mbpars.cmd_train_surrogate(cfg, dataset)
    bc = mbpars.cmd_imitate(cfg, dataset)
    report = mbpars.cmd_train_policy(cfg, surrogate, bc, dataset)
    with open(report) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0].startswith("iteration,wall_seconds,mean_eval_reward")
    assert len(lines) == 1 + 2  # header + H

    table = mbpars.cmd_evaluate(cfg, str(tmp_path / "run" / "policy_final.json"))
    assert os.path.exists(table)


def test_config_rejects_unknown_keys():
    with pytest.raises(mbpars.ConfigError):
        mbpars.parse_config_json('{"sedd": 1}')
