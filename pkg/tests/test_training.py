import math

import numpy as np
import pytest

from alttrack.config import LossConfig, RunConfig, parse_config
from alttrack.decoder import init_params
from alttrack.numeric import DivergenceError, ParamStore, Tensor
from alttrack.pipeline import training_set
from alttrack.training import (
    assign_targets,
    clip_gradients,
    lr_at,
    matching_cost,
    probe_loss,
    sequence_loss,
    total_loss,
    train,
    train_step,
)

TINY = ["model.d_k=8", "model.num_layers=2", "model.num_det_queries=6", "model.ffn_dim=8",
        "scenario.frames=4", "scenario.initial_objects=2", "scenario.max_objects=3", "scenario.obs_dim=8",
        "run.train_sequences=2", "optim.batch=1", "optim.steps=40", "optim.lr=5e-3"]


def tiny(*extra) -> RunConfig:
    return parse_config("", TINY + list(extra))


def test_identity_guided_and_hungarian_targets():
    # detections 0..2 matched by the supplied cost: 0->7, 1->none, 2->5
    cost = np.array([[9.0, 9.0, 0.0], [9.0, 9.0, 9.0], [0.0, 9.0, 9.0], [9.0, 0.0, 9.0]])
    t = assign_targets([5, 9, None], np.zeros((4, 9)), np.zeros(4), [5, 3, 7], np.zeros((3, 9)), cost=cost)
    assert t.track_gt == [5, None, None]
    assert t.det_gt == [7, None, 5, 3]
    expected = np.zeros((4, 3))
    expected[2, 0] = 1.0
    np.testing.assert_array_equal(t.Y, expected)


def test_aux_column_takes_every_unmatched_detection():
    cost = np.array([[0.0, 9.0], [9.0, 0.0], [9.0, 9.0]])
    t = assign_targets([4], np.zeros((3, 9)), np.zeros(3), [4, 8], np.zeros((2, 9)), aux=True, cost=cost)
    np.testing.assert_array_equal(t.Y, [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert t.has_aux()


def test_duplicate_ground_truth_rejected():
    with pytest.raises(ValueError):
        assign_targets([], np.zeros((1, 9)), np.zeros(1), [1, 1], np.zeros((2, 9)))


def test_matching_cost_hand_value():
    loss = LossConfig()
    gt = np.zeros((1, 9))
    det = np.zeros((1, 9))
    det[0, 0] = 2.0
    # p = 0.5: alpha 0.25, gamma 2 -> (0.25 - 0.75) * 0.25 * ln 2
    cls = -0.125 * math.log(2.0)
    assert matching_cost(det, np.zeros(1), gt, loss)[0, 0] == pytest.approx(2.0 * cls + 0.25 * 2.0)


def test_total_loss_weights_and_frame_gating():
    loss = LossConfig(lambda_cls=2.0, lambda_reg=0.5, lambda_asso=3.0, lambda_ce=0.1)
    one = {k: Tensor(1.0) for k in ("cls_D", "reg_D", "cls_T", "reg_T", "asso_FL", "asso_CE")}
    assert total_loss([(1, one)], loss).item() == pytest.approx(2.5)
    assert total_loss([(2, one)], loss).item() == pytest.approx(2.5 + 2.5 + 3.0 + 0.3)
    partial = dict(one, asso_CE=None, reg_T=None)
    assert total_loss([(1, one), (2, partial)], loss).item() == pytest.approx(2.5 + 2.5 + 2.0 + 3.0)


def test_sequence_loss_reports_every_frame_and_layer():
    cfg = tiny("model.aux_token=true")
    logs = training_set(cfg)
    params = init_params(cfg.model).constants()
    total, report = sequence_loss(params, cfg, logs[0].frames[:3])
    assert report.index == [(t, l) for t in (1, 2, 3) for l in (0, 1)]
    assert all("asso_FL" not in terms for terms in report.terms[:2])
    assert math.isfinite(total.item()) and total.item() == report.total


def test_lr_schedule_endpoints():
    cfg = tiny()
    assert lr_at(cfg, 0) == pytest.approx(5e-3)
    assert lr_at(cfg, 20) == pytest.approx(2.5e-3)
    assert lr_at(cfg, 40) == pytest.approx(0.0, abs=1e-18)


def test_gradient_clipping_rescales_to_max_norm():
    store = ParamStore()
    store.add("a", np.zeros(2))
    store.grads["a"][:] = [3.0, 4.0]
    assert clip_gradients(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store.grads["a"], [0.6, 0.8])


def test_short_training_reduces_probe_loss():
    cfg = tiny()
    logs = training_set(cfg)
    store = init_params(cfg.model)
    before = probe_loss(store, cfg, logs)
    train(store, cfg, logs)
    assert probe_loss(store, cfg, logs) < 0.8 * before


def test_training_is_deterministic():
    cfg = tiny("optim.steps=3")
    logs = training_set(cfg)
    a, b = init_params(cfg.model), init_params(cfg.model)
    train(a, cfg, logs)
    train(b, cfg, logs)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_absurd_learning_rate_diverges():
    cfg = tiny()
    logs = training_set(cfg)
    store = init_params(cfg.model)
    with pytest.raises(DivergenceError):
        for _ in range(5):
            train_step(store, cfg, logs[0].frames[:3], lr=1e300)
