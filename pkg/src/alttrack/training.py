"""Target assignment, loss terms and the mini-sequence training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import LossConfig, RunConfig
from .decoder import FrameOutput, decode_frame, initial_queries
from .geometry import wrap_angle
from .numeric import (
    DivergenceError,
    NonFiniteError,
    ParamStore,
    Tensor,
    add,
    adamw_step,
    concat_rows,
    cross_entropy_rows,
    detach,
    focal_loss,
    focal_loss_logits,
    l1_box_loss,
    scale,
    sigmoid_np,
    take_rows,
)
from .simworld import Frame, ScenarioLog
from .tracker import Track, associate_train, hungarian, update_tracks

log = logging.getLogger(__name__)

TERMS = ("cls_D", "reg_D", "cls_T", "reg_T", "asso_FL", "asso_CE")


@dataclass
class AssignmentTargets:
    track_gt: list[int | None]
    det_gt: list[int | None]
    Y: np.ndarray                 # [N_D, N_K]
    det_match: list[tuple[int, int]] = field(default_factory=list)  # (det index, gt index)

    def has_aux(self) -> bool:
        return self.Y.shape[1] == len(self.track_gt) + 1


def matching_cost(det_boxes: np.ndarray, det_logits: np.ndarray, gt_boxes: np.ndarray,
                  loss: LossConfig) -> np.ndarray:
    """[N_D, N_GT] cost: weighted focal classification cost plus weighted box L1."""
    p = sigmoid_np(np.asarray(det_logits, dtype=np.float64))
    cls = focal_loss(p, 1.0, loss.cls_alpha, loss.cls_gamma) - focal_loss(p, 0.0, loss.cls_alpha, loss.cls_gamma)
    diff = np.asarray(det_boxes, dtype=np.float64)[:, None, :] - np.asarray(gt_boxes, dtype=np.float64)[None]
    diff[..., 6] = wrap_angle(diff[..., 6])
    return loss.lambda_cls * cls[:, None] + loss.lambda_reg * np.abs(diff).sum(axis=-1)


def assign_targets(track_gt_prev: Sequence[int | None], det_boxes: np.ndarray, det_logits: np.ndarray,
                   gt_ids: Sequence[int], gt_boxes: np.ndarray, loss: LossConfig | None = None,
                   aux: bool = False, cost: np.ndarray | None = None) -> AssignmentTargets:
    """Identity-guided targets for track queries and Hungarian targets for detections.

    Detection queries are matched against every ground-truth object of the
    frame, including those already followed by a track query.  ``cost`` may
    replace the default matching cost.
    """
    loss = loss or LossConfig()
    gt_ids = [int(g) for g in gt_ids]
    if len(set(gt_ids)) != len(gt_ids):
        raise ValueError("assign_targets: duplicate ground-truth ids in one frame")
    present = set(gt_ids)
    track_gt = [g if (g is not None and g in present) else None for g in track_gt_prev]
    n_d = len(det_logits)
    det_gt: list[int | None] = [None] * n_d
    det_match: list[tuple[int, int]] = []
    if gt_ids and n_d:
        C = matching_cost(det_boxes, det_logits, gt_boxes, loss) if cost is None else np.asarray(cost)
        for j, g in hungarian(C):
            det_gt[j] = gt_ids[g]
            det_match.append((j, g))
    n_t = len(track_gt)
    Y = np.zeros((n_d, n_t + (1 if aux else 0)))
    col = {g: i for i, g in enumerate(track_gt) if g is not None}
    for j, g in enumerate(det_gt):
        if g is not None and g in col:
            Y[j, col[g]] = 1.0
        elif aux:
            Y[j, n_t] = 1.0
    return AssignmentTargets(track_gt, det_gt, Y, sorted(det_match))


def ce_association_loss(S_raw, Y) -> Tensor:
    """Categorical cross-entropy of row-softmaxed affinities against one-hot rows (summed)."""
    S = S_raw if isinstance(S_raw, Tensor) else Tensor(S_raw)
    return cross_entropy_rows(S, Y)


@dataclass
class LossReport:
    terms: list[dict[str, float]] = field(default_factory=list)   # one per (frame, layer)
    index: list[tuple[int, int]] = field(default_factory=list)
    total: float = 0.0

    def summed(self) -> dict[str, float]:
        out = {k: 0.0 for k in TERMS}
        for t in self.terms:
            for k, v in t.items():
                out[k] += v
        return out


def total_loss(terms: Sequence[tuple[int, dict[str, Tensor | None]]], loss: LossConfig) -> Tensor:
    """Weighted sequence loss.

    ``terms`` holds ``(frame_index, {term: scalar})`` entries, one per decoder
    layer and frame (frame indices start at 1).  Detection terms count for
    every frame; track and association terms from frame 2 on.  The
    association term is ``asso_FL + lambda_ce * asso_CE``.
    """
    parts: list[Tensor] = []
    for t, d in terms:
        for key, w in (("cls_D", loss.lambda_cls), ("reg_D", loss.lambda_reg)):
            if d.get(key) is not None:
                parts.append(scale(d[key], w))
        if t < 2:
            continue
        for key, w in (("cls_T", loss.lambda_cls), ("reg_T", loss.lambda_reg),
                       ("asso_FL", loss.lambda_asso), ("asso_CE", loss.lambda_asso * loss.lambda_ce)):
            if d.get(key) is not None:
                parts.append(scale(d[key], w))
    if not parts:
        return Tensor(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def layer_terms(layer, targets: AssignmentTargets, gt_index: dict[int, int], gt_boxes: np.ndarray,
                loss: LossConfig, with_tracks: bool) -> dict[str, Tensor | None]:
    terms: dict[str, Tensor | None] = {}
    n_d = layer.det_logits.shape[0]
    y_det = np.array([g is not None for g in targets.det_gt], dtype=np.float64)
    terms["cls_D"] = scale(focal_loss_logits(layer.det_logits, y_det, loss.cls_alpha, loss.cls_gamma),
                           1.0 / max(1.0, y_det.sum()))
    matched = [j for j in range(n_d) if targets.det_gt[j] is not None]
    if matched:
        tgt = gt_boxes[[gt_index[targets.det_gt[j]] for j in matched]]
        terms["reg_D"] = scale(l1_box_loss(take_rows(layer.det_boxes, matched), tgt), 1.0 / len(matched))
    if not with_tracks or layer.affinity is None:
        return terms
    y_trk = np.array([g is not None for g in targets.track_gt], dtype=np.float64)
    terms["cls_T"] = scale(focal_loss_logits(layer.track_logits, y_trk, loss.cls_alpha, loss.cls_gamma),
                           1.0 / max(1.0, y_trk.sum()))
    kept = [i for i, g in enumerate(targets.track_gt) if g is not None]
    if kept:
        tgt = gt_boxes[[gt_index[targets.track_gt[i]] for i in kept]]
        terms["reg_T"] = scale(l1_box_loss(take_rows(layer.track_boxes, kept), tgt), 1.0 / len(kept))
    Y = targets.Y
    terms["asso_FL"] = scale(focal_loss_logits(layer.affinity, Y, loss.asso_alpha, loss.asso_gamma),
                             1.0 / max(1.0, Y.sum()))
    if targets.has_aux():
        terms["asso_CE"] = scale(ce_association_loss(layer.affinity, Y), 1.0 / n_d)
    return terms


def obs_tensor(frame: Frame) -> Tensor:
    return Tensor(frame.obs_emb)


def frame_targets(frame: Frame) -> tuple[list[int], np.ndarray]:
    """Visible ground truth of a frame in the vehicle frame."""
    vis = frame.visible_mask()
    ids = [int(i) for i in frame.gt_ids[vis]]
    boxes = frame.gt_ego_boxes()[vis] if len(ids) else np.zeros((0, 9))
    return ids, boxes


def sequence_loss(params: dict[str, Tensor], cfg: RunConfig, frames: Sequence[Frame],
                  num_layers: int | None = None) -> tuple[Tensor, LossReport]:
    """Unrolled loss over consecutive frames with ground-truth-guided track updates."""
    mcfg, loss = cfg.model, cfg.loss
    tracks: list[Track] = []
    aux = None
    next_id = 0
    collected: list[tuple[int, dict[str, Tensor | None]]] = []
    report = LossReport()
    for t, frame in enumerate(frames):
        gt_ids, gt_boxes = frame_targets(frame)
        gt_index = {g: k for k, g in enumerate(gt_ids)}
        if tracks:
            emb = concat_rows([tr.embedding for tr in tracks])
            refs = Tensor(np.stack([tr.refpoint for tr in tracks]))
        else:
            emb = refs = None
        queries = initial_queries(params, mcfg, emb, refs, aux)
        out = decode_frame(params, mcfg, queries, obs_tensor(frame), frame.obs_pos.reshape(-1, 3),
                           num_layers)
        prev_gt = [tr.gt_id for tr in tracks]
        targets = None
        for l, layer in enumerate(out.layers):
            # matching sees detached outputs
            targets = assign_targets(prev_gt, detach(layer.det_boxes).data, detach(layer.det_logits).data, gt_ids,
                                     gt_boxes, loss, aux=mcfg.aux_token)
            terms = layer_terms(layer, targets, gt_index, gt_boxes, loss, with_tracks=t >= 1)
            collected.append((t + 1, terms))
            report.index.append((t + 1, l))
            report.terms.append({k: v.item() for k, v in terms.items() if v is not None})
        last = out.last
        res = associate_train(targets.track_gt, targets.det_gt, [tr.id for tr in tracks])
        nxt = frames[t + 1] if t + 1 < len(frames) else frame
        tracks, next_id = update_tracks(
            tracks, res, out.queries.det_embeddings, detach(last.det_boxes).data,
            sigmoid_np(detach(last.det_logits).data), out.queries.track_embeddings,
            detach(last.track_boxes).data, next_id, cfg.tracker.w_t,
            max_age=0, dt=cfg.scenario.dt, pose_t=frame.ego, pose_next=nxt.ego,
            det_gt_ids=targets.det_gt)
        if mcfg.aux_token and mcfg.aux_propagate:
            aux = out.queries.aux_token
    total = total_loss(collected, loss)
    report.total = total.item()
    return total, report


def sample_windows(logs: Sequence[ScenarioLog], length: int) -> list[tuple[int, int]]:
    return [(k, s) for k, lg in enumerate(logs) for s in range(len(lg) - length + 1)]


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in store.grads.values()))
    if not math.isfinite(norm):
        raise DivergenceError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        for g in store.grads.values():
            g *= max_norm / norm
    return norm


def train_step(store: ParamStore, cfg: RunConfig, frames: Sequence[Frame] | Sequence[Sequence[Frame]],
               lr: float | None = None) -> LossReport:
    """One optimiser step on one or more mini-sequences (full backpropagation through all frames).

    Gradients of several mini-sequences are averaged; the returned report is the first one's
    with ``total`` replaced by the batch mean.
    """
    batch = [frames] if frames and isinstance(frames[0], Frame) else list(frames)
    store.zero_grad()
    reports = []
    for window in batch:
        leaves = store.tensors()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                total, report = sequence_loss(leaves, cfg, window)
        except NonFiniteError as exc:
            raise DivergenceError(f"step {store.step}: {exc}") from None
        if not math.isfinite(report.total):
            raise DivergenceError(f"non-finite loss at step {store.step}")
        scale(total, 1.0 / len(batch)).backward()
        store.collect(leaves)
        reports.append(report)
    report = reports[0]
    report.total = float(np.mean([r.total for r in reports]))
    clip_gradients(store, cfg.optim.grad_clip)
    o = cfg.optim
    adamw_step(store, o.lr if lr is None else lr, (o.beta1, o.beta2), o.weight_decay)
    return report


def lr_at(cfg: RunConfig, step: int) -> float:
    o = cfg.optim
    if not o.cosine or o.steps <= 0:
        return o.lr
    return 0.5 * o.lr * (1.0 + math.cos(math.pi * min(step, o.steps) / o.steps))


def probe_loss(store: ParamStore, cfg: RunConfig, logs: Sequence[ScenarioLog]) -> float:
    """Mean sequence loss over the first window of every scenario (no gradients)."""
    params = store.constants()
    T = cfg.optim.seq_len
    values = [sequence_loss(params, cfg, lg.frames[:T])[1].total for lg in logs if len(lg) >= T]
    return float(np.mean(values)) if values else 0.0


def train(store: ParamStore, cfg: RunConfig, logs: Sequence[ScenarioLog], steps: int | None = None,
          on_step: Callable[[int, LossReport, float], None] | None = None) -> list[LossReport]:
    """Sample random mini-sequences and take ``steps`` optimiser steps."""
    steps = cfg.optim.steps if steps is None else steps
    windows = sample_windows(logs, cfg.optim.seq_len)
    if not windows:
        raise ValueError("train: no scenario is long enough for one mini-sequence")
    rng = np.random.default_rng([cfg.run.seed, 0x7A1])
    history = []
    for step in range(steps):
        picks = rng.integers(len(windows), size=cfg.optim.batch)
        batch = [logs[k].frames[s:s + cfg.optim.seq_len] for k, s in (windows[int(i)] for i in picks)]
        lr = lr_at(cfg, step)
        report = train_step(store, cfg, batch, lr)
        history.append(report)
        if on_step is not None:
            on_step(step, report, lr)
    return history
