"""Finite-difference audit of every differentiable block, on small seeded inputs."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import association as asso
from . import decoder as dec
from .config import RunConfig
from .numeric import (
    GradCheckResult,
    Layer,
    Tensor,
    concat,
    cross_entropy_rows,
    focal_loss_logits,
    grad_check,
    linear,
    mlp_forward,
    reshape,
    softmax_rows,
)
from .simworld import generate_scenario
from .training import sequence_loss

TOLERANCE = 1e-5
UNROLL_TOLERANCE = 1e-4


@dataclass
class AuditRow:
    block: str
    result: GradCheckResult
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.result.passed(self.tolerance)


def _u(rng, *shape, s=1.0):
    return rng.uniform(-s, s, size=shape)


def _block_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    d, n_d, n_t, n_o = 4, 3, 2, 3
    obs_pos = _u(rng, n_o, 3, s=3.0)
    cases = []

    cases.append(("linear", lambda x, W, b: linear(x, W, b), [_u(rng, 3, d), _u(rng, d, 5), _u(rng, 5)]))

    def mlp(x, W0, b0, W1, b1):
        return mlp_forward(x, [Layer(W0, b0), Layer(W1, b1)])

    # hidden biases kept away from the ReLU kink
    cases.append(("mlp", mlp, [_u(rng, 3, d), _u(rng, d, 5), _u(rng, 5) + 2.0, _u(rng, 5, 2), _u(rng, 2)]))

    mask = np.array([[True, False, True], [True, True, True]])
    cases.append(("softmax", lambda S: softmax_rows(S, mask), [_u(rng, 2, 3, s=2.0)]))

    def sa(x, pos, Wq, Wk, Wv):
        return dec.self_attention(x, {"Wq": Wq, "Wk": Wk, "Wv": Wv}, pos)

    cases.append(("self_attention", sa, [_u(rng, 4, d), _u(rng, 4, d)] + [_u(rng, d, d) for _ in range(3)]))

    def oca(x, refs, obs, Wq, Wk, Wv, Wp, sink, sharp):
        p = {"Wq": Wq, "Wk": Wk, "Wv": Wv, "Wp": Wp, "sink": sink, "sharp": sharp}
        return dec.observation_cross_attention(x, refs, obs, obs_pos, p, tau_pos=2.0)

    cases.append(("observation_cross_attention", oca,
                  [_u(rng, 2, d), _u(rng, 2, 3, s=3.0), _u(rng, n_o, d)] + [_u(rng, d, d) for _ in range(3)]
                  + [_u(rng, 3, d), _u(rng, 1, d), np.array([0.3])]))

    def epe(tb, db, W0, b0, W1, b1, aux):
        return asso.build_edge_pos_encoding(tb, db, [Layer(W0, b0), Layer(W1, b1)], aux_embedding=aux)

    # yaw differences kept away from the wrap point and |.| away from zero
    tb = _u(rng, n_t, 9) + np.arange(n_t)[:, None] * 3.0
    db = _u(rng, n_d, 9) - 5.0
    tb[:, 6], db[:, 6] = rng.uniform(-1, 1, n_t), rng.uniform(-1, 1, n_d) + 0.05
    cases.append(("edge_pos_encoding", epe,
                  [tb, db, _u(rng, 9, d, s=0.3), _u(rng, d) + 2.0, _u(rng, d, d), _u(rng, d), _u(rng, 1, d)]))

    def eca(q, keys, edges, Wq, Wk, Wv, We1, We2):
        p = {"Wq": Wq, "Wk": Wk, "Wv": Wv, "We1": We1, "We2": We2}
        q_new, e_new, _ = asso.edge_augmented_cross_attention(q, keys, edges, p)
        return _pack(q_new, e_new)

    cases.append(("edge_cross_attention", eca,
                  [_u(rng, n_d, d), _u(rng, n_t + 1, d), _u(rng, n_d, n_t + 1, d)]
                  + [_u(rng, d, d) for _ in range(3)] + [_u(rng, d, 1), _u(rng, 1, d)]))

    def head(edges, W0, b0, W1, b1):
        return asso.affinity_scores(edges, [Layer(W0, b0), Layer(W1, b1)])

    cases.append(("affinity_head", head,
                  [_u(rng, n_d, n_t, d), _u(rng, d, d), _u(rng, d) + 2.0, _u(rng, d, 1), _u(rng, 1)]))

    y = (rng.random((n_d, n_t)) < 0.4).astype(float)
    cases.append(("focal_loss", lambda x: focal_loss_logits(x, y, 0.5, 1.0), [_u(rng, n_d, n_t, s=3.0)]))
    cases.append(("focal_loss_gamma2", lambda x: focal_loss_logits(x, y, 0.25, 2.0), [_u(rng, n_d, n_t, s=3.0)]))

    Y = np.zeros((n_d, n_t + 1))
    Y[np.arange(n_d), rng.integers(0, n_t + 1, n_d)] = 1.0
    cases.append(("ce_loss", lambda S: cross_entropy_rows(S, Y), [_u(rng, n_d, n_t + 1, s=2.0)]))
    return cases


def _pack(q_new: Tensor, e_new: Tensor) -> Tensor:
    n_d, d = q_new.shape
    return concat([reshape(q_new, (n_d * d,)), reshape(e_new, (e_new.data.size,))], axis=0)


def unroll_config() -> RunConfig:
    """Tiny model and scenario for the full two-frame unroll."""
    cfg = RunConfig()
    return cfg.replace(model__d_k=4, model__num_layers=2, model__num_det_queries=4, model__ffn_dim=6,
                       model__aux_token=True, scenario__frames=2, scenario__initial_objects=2,
                       scenario__birth_rate=0.0, scenario__death_prob=0.0, scenario__occlusion_prob=0.0,
                       scenario__clutter_rate=1.0, scenario__obs_dim=4, scenario__seed=3)


def unroll_case(cfg: RunConfig | None = None, seed: int = 0):
    cfg = cfg or unroll_config()
    log = generate_scenario(cfg.scenario)
    store = dec.init_params(cfg.model, seed)
    names = list(store.params)

    def f(*arrays: Tensor) -> Tensor:
        total, _ = sequence_loss(dict(zip(names, arrays)), cfg, log.frames)
        return total

    return f, [store.params[n] for n in names]


def run_audit(seed: int = 0, unroll_entries: int = 4) -> list[AuditRow]:
    """Audit every block; the full unroll samples ``unroll_entries`` coordinates per parameter."""
    rng = np.random.default_rng([seed, 0x6C])
    rows = []
    for name, f, inputs in _block_cases(rng):
        t0 = time.perf_counter()
        res = grad_check(f, inputs, seed=seed)
        rows.append(AuditRow(name, res, TOLERANCE, time.perf_counter() - t0))
    t0 = time.perf_counter()
    f, inputs = unroll_case(seed=seed)
    res = grad_check(f, inputs, seed=seed, max_entries=unroll_entries)
    rows.append(AuditRow("full_unroll_T2", res, UNROLL_TOLERANCE, time.perf_counter() - t0))
    return rows


def audit_table(rows: list[AuditRow]) -> str:
    lines = [f"{'block':<30} {'max_rel_err':>12} {'tol':>8} {'checked':>8}  status"]
    for r in rows:
        status = "PASS" if r.passed else "FAIL" + (f" ({r.result.failure})" if r.result.failure else "")
        lines.append(f"{r.block:<30} {r.result.max_rel_error:>12.3e} {r.tolerance:>8.0e} "
                     f"{r.result.checked:>8d}  {status}")
    return "\n".join(lines)
