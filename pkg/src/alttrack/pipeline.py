"""End-to-end glue: scenario sets, online tracking and evaluation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .decoder import decode_frame, init_params, initial_queries
from .metrics import EvalReport, FrameBoxes, amota
from .numeric import ParamStore, Tensor, concat_rows
from .simworld import ScenarioLog, generate_scenario
from .tracker import AssociationResult, Track, TrackRecord, associate_infer, emitted, update_tracks
from .training import obs_tensor, train


def scenario_set(cfg: RunConfig, count: int, seed_offset: int = 0) -> list[ScenarioLog]:
    base = cfg.scenario.seed + cfg.run.seed * 100_003 + seed_offset
    return [generate_scenario(dataclasses.replace(cfg.scenario, seed=base + k)) for k in range(count)]


def training_set(cfg: RunConfig) -> list[ScenarioLog]:
    return scenario_set(cfg, cfg.run.train_sequences)


def evaluation_set(cfg: RunConfig) -> list[ScenarioLog]:
    return scenario_set(cfg, cfg.run.eval_sequences, cfg.run.eval_seed_offset)


class OnlineTracker:
    """Frame-by-frame inference with learned association and track lifecycle."""

    def __init__(self, store: ParamStore, cfg: RunConfig):
        self.params = store.constants()
        self.cfg = cfg
        self.tracks: list[Track] = []
        self.next_id = 0
        self.aux: Tensor | None = None
        self.last_result: AssociationResult | None = None
        # raw affinities and detection scores of the most recent frame
        self.last_affinity: np.ndarray | None = None
        self.last_scores: np.ndarray | None = None

    def step(self, frame, next_pose=None, dt: float | None = None) -> list[TrackRecord]:
        cfg = self.cfg
        mcfg, tcfg = cfg.model, cfg.tracker
        if self.tracks:
            emb = concat_rows([t.embedding for t in self.tracks])
            refs = Tensor(np.stack([t.refpoint for t in self.tracks]))
        else:
            emb = refs = None
        queries = initial_queries(self.params, mcfg, emb, refs, self.aux)
        out = decode_frame(self.params, mcfg, queries, obs_tensor(frame), frame.obs_pos.reshape(-1, 3))
        last = out.last
        ids = [t.id for t in self.tracks]
        scores = last.det_scores
        if self.tracks:
            res = associate_infer(last.affinity.data, scores, tcfg.tau_s, tcfg.tau_new, ids,
                                  has_aux=queries.aux_token is not None)
        else:
            unmatched = list(range(len(scores)))
            res = AssociationResult([], [], unmatched, [j for j in unmatched if scores[j] > tcfg.tau_new])
        self.last_result = res
        self.last_affinity = None if last.affinity is None else last.affinity.data
        self.last_scores = scores
        self.tracks, self.next_id = update_tracks(
            self.tracks, res, out.queries.det_embeddings, last.det_boxes.data, scores,
            out.queries.track_embeddings, last.track_boxes.data, self.next_id, tcfg.w_t,
            tcfg.max_age, cfg.scenario.dt if dt is None else dt, frame.ego,
            frame.ego if next_pose is None else next_pose)
        if mcfg.aux_token and mcfg.aux_propagate:
            self.aux = out.queries.aux_token
        return emitted(self.tracks, frame.index, frame.ego)


def run_tracker(store: ParamStore, cfg: RunConfig, log: ScenarioLog) -> list[TrackRecord]:
    tracker = OnlineTracker(store, cfg)
    records: list[TrackRecord] = []
    for k, frame in enumerate(log.frames):
        nxt = log.frames[k + 1].ego if k + 1 < len(log.frames) else frame.ego
        records.extend(tracker.step(frame, nxt))
    return records


def predictions_by_frame(records: Sequence[TrackRecord], num_frames: int) -> list[FrameBoxes]:
    buckets: list[list[TrackRecord]] = [[] for _ in range(num_frames)]
    for r in records:
        buckets[r.frame].append(r)
    out = []
    for b in buckets:
        if not b:
            out.append(FrameBoxes.empty())
            continue
        out.append(FrameBoxes(np.array([r.track_id for r in b]), np.stack([r.box[:3] for r in b]),
                              np.array([r.score for r in b])))
    return out


def ground_truth_by_frame(log: ScenarioLog) -> list[FrameBoxes]:
    """Visible objects per frame, world-frame centers."""
    out = []
    for frame in log.frames:
        vis = frame.visible_mask()
        out.append(FrameBoxes(frame.gt_ids[vis], frame.gt_boxes[vis, :3] if vis.any() else np.zeros((0, 3))))
    return out


def evaluate_records(records: Sequence[TrackRecord], log: ScenarioLog, cfg: RunConfig) -> EvalReport:
    return amota(predictions_by_frame(records, len(log.frames)), ground_truth_by_frame(log), cfg.eval)


def evaluate_many(per_sequence: Sequence[tuple[Sequence[TrackRecord], ScenarioLog]], cfg: RunConfig) -> EvalReport:
    """Pool several sequences into one evaluation (track ids are made unique per sequence)."""
    preds, gts = [], []
    for k, (records, log) in enumerate(per_sequence):
        shifted = [TrackRecord(r.frame, r.track_id + k * 1_000_000, r.box, r.score) for r in records]
        preds.extend(predictions_by_frame(shifted, len(log.frames)))
        for fb in ground_truth_by_frame(log):
            preds_gt = FrameBoxes(fb.ids + k * 1_000_000, fb.centers)
            gts.append(preds_gt)
    return amota(preds, gts, cfg.eval)


def fit(cfg: RunConfig, logs: Sequence[ScenarioLog] | None = None,
        on_step=None) -> tuple[ParamStore, list]:
    """Fresh seeded parameters trained on ``logs`` (default: the configured training set)."""
    logs = training_set(cfg) if logs is None else logs
    store = init_params(cfg.model, cfg.model.seed + cfg.run.seed)
    history = train(store, cfg, logs, on_step=on_step)
    return store, history


def track_all(store: ParamStore, cfg: RunConfig, logs: Sequence[ScenarioLog]) -> list[list[TrackRecord]]:
    return [run_tracker(store, cfg, log) for log in logs]


@dataclass
class ABRow:
    variant: str
    seed: int
    report: EvalReport


@dataclass
class ABResult:
    rows: list[ABRow] = field(default_factory=list)

    def variant(self, name: str) -> list[ABRow]:
        return [r for r in self.rows if r.variant == name]

    def mean_amota(self, name: str) -> float:
        return float(np.mean([r.report.amota for r in self.variant(name)]))

    def median_ids(self, name: str) -> float:
        return float(np.median([r.report.ids for r in self.variant(name)]))

    def table(self) -> str:
        head = f"{'variant':<8} {'seed':>4} {'AMOTA':>7} {'AMOTP':>7} {'MOTA':>7} {'IDS':>5} {'FP':>5} {'FN':>5}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            e = r.report
            lines.append(f"{r.variant:<8} {r.seed:>4} {e.amota:>7.3f} {e.amotp:>7.3f} {e.mota:>7.3f} "
                         f"{e.ids:>5d} {e.fp:>5d} {e.fn:>5d}")
        lines.append("-" * len(head))
        for name in AB_VARIANTS:
            if self.variant(name):
                lines.append(f"{name:<8} {'mean':>4} {self.mean_amota(name):>7.3f}"
                             f"{'':>17} {self.median_ids(name):>5.1f}  (IDS: median)")
        if all(self.variant(n) for n in AB_VARIANTS):
            lines.append(f"delta AMOTA (++ - base) {self.mean_amota('++') - self.mean_amota('base'):+.4f}, "
                         f"delta median IDS {self.median_ids('++') - self.median_ids('base'):+.1f}")
        return "\n".join(lines)


AB_VARIANTS = ("base", "++")


def ab_experiment(cfg: RunConfig, seeds: Sequence[int] | None = None, on_row=None) -> ABResult:
    """Train and evaluate the base model and the auxiliary-token variant for every seed.

    Both variants of one seed see the same training and evaluation scenarios.
    """
    seeds = list(range(cfg.run.ab_seeds)) if seeds is None else list(seeds)
    result = ABResult()
    for seed in seeds:
        for name in AB_VARIANTS:
            run_cfg = cfg.replace(run__seed=seed, model__aux_token=(name == "++"))
            store, _ = fit(run_cfg)
            logs = evaluation_set(run_cfg)
            report = evaluate_many(list(zip(track_all(store, run_cfg, logs), logs)), run_cfg)
            row = ABRow(name, seed, report)
            result.rows.append(row)
            if on_row is not None:
                on_row(row)
    return result
