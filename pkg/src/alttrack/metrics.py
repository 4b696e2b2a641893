"""CLEAR-MOT counting and recall-averaged tracking metrics (AMOTA / AMOTP).

Matching uses bird's-eye-view center distance.  A ground-truth object keeps
the prediction it was last matched to whenever that track id is still present
and within the threshold; remaining pairs are matched greedily by distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import EvalConfig


@dataclass
class FrameBoxes:
    ids: np.ndarray
    centers: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.size == 0:
            self.centers = np.zeros((len(self.ids), 3))
        else:
            self.centers = centers.reshape(len(self.ids), -1)
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return len(self.ids)

    def select(self, keep: np.ndarray) -> "FrameBoxes":
        return FrameBoxes(self.ids[keep], self.centers[keep],
                          None if self.scores is None else self.scores[keep])

    @classmethod
    def empty(cls) -> "FrameBoxes":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros(0))


@dataclass
class FrameMatch:
    pairs: list[tuple[int, int]]      # (gt index, prediction index)
    false_positives: list[int]
    misses: list[int]
    distances: list[float]


def _bev_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    d = a[:, None, :2] - b[None, :, :2]
    return np.sqrt((d * d).sum(axis=-1))


def match_frame(pred: FrameBoxes, gt: FrameBoxes, threshold: float,
                previous: dict[int, int] | None = None) -> FrameMatch:
    dist = _bev_dist(gt.centers, pred.centers)
    pred_index = {int(t): k for k, t in enumerate(pred.ids)}
    gt_used: set[int] = set()
    pred_used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    if previous:
        for g, oid in enumerate(gt.ids):
            hid = previous.get(int(oid))
            k = pred_index.get(hid) if hid is not None else None
            if k is not None and k not in pred_used and dist[g, k] <= threshold:
                pairs.append((g, k))
                gt_used.add(g)
                pred_used.add(k)
    cands = [(dist[g, k], g, k) for g in range(len(gt)) for k in range(len(pred))
             if g not in gt_used and k not in pred_used and dist[g, k] <= threshold]
    for _, g, k in sorted(cands):
        if g in gt_used or k in pred_used:
            continue
        pairs.append((g, k))
        gt_used.add(g)
        pred_used.add(k)
    pairs.sort()
    return FrameMatch(pairs, [k for k in range(len(pred)) if k not in pred_used],
                      [g for g in range(len(gt)) if g not in gt_used],
                      [float(dist[g, k]) for g, k in pairs])


@dataclass
class ClearMot:
    num_gt: int
    tp: int
    fp: int
    fn: int
    ids: int
    distances: list[float]
    tp_scores: list[float]
    per_frame: list[tuple[int, int, int, int]] = field(default_factory=list)  # tp, fp, fn, ids

    @property
    def mota(self) -> float:
        if self.num_gt == 0:
            return 0.0
        return 1.0 - (self.fn + self.fp + self.ids) / self.num_gt

    @property
    def motp(self) -> float:
        return float(np.mean(self.distances)) if self.distances else math.nan

    @property
    def recall(self) -> float:
        return self.tp / self.num_gt if self.num_gt else 0.0


def clear_mot(preds: Sequence[FrameBoxes], gts: Sequence[FrameBoxes], threshold: float) -> ClearMot:
    if len(preds) != len(gts):
        raise ValueError(f"clear_mot: {len(preds)} prediction frames vs {len(gts)} ground-truth frames")
    last: dict[int, int] = {}
    tp = fp = fn = ids = n_gt = 0
    distances: list[float] = []
    tp_scores: list[float] = []
    per_frame = []
    for pred, gt in zip(preds, gts):
        m = match_frame(pred, gt, threshold, last)
        sw = 0
        for (g, k), dist in zip(m.pairs, m.distances):
            oid, hid = int(gt.ids[g]), int(pred.ids[k])
            if oid in last and last[oid] != hid:
                sw += 1
            last[oid] = hid
            distances.append(dist)
            if pred.scores is not None:
                tp_scores.append(float(pred.scores[k]))
        n_gt += len(gt)
        tp += len(m.pairs)
        fp += len(m.false_positives)
        fn += len(m.misses)
        ids += sw
        per_frame.append((len(m.pairs), len(m.false_positives), len(m.misses), sw))
    return ClearMot(n_gt, tp, fp, fn, ids, distances, tp_scores, per_frame)


def motar(stats: ClearMot) -> float:
    """Recall-normalised MOTA at the recall actually achieved; nan if recall is zero."""
    P = stats.num_gt
    r = stats.recall
    if r * P == 0:
        return math.nan
    value = 1.0 - (stats.ids + stats.fp + stats.fn - (1.0 - r) * P) / (r * P)
    return max(0.0, value)


@dataclass
class CurvePoint:
    target_recall: float
    threshold: float
    motar: float
    mota: float
    motp: float
    recall: float


@dataclass
class EvalReport:
    amota: float
    amotp: float
    best_recall: float
    mota: float
    ids: int
    fp: int
    fn: int
    tp: int
    recall: float
    num_gt: int
    curve: list[CurvePoint]

    def summary(self) -> dict[str, float]:
        return {"AMOTA": self.amota, "AMOTP": self.amotp, "RECALL_AT_BEST": self.best_recall,
                "MOTA": self.mota, "IDS": self.ids, "FP": self.fp, "FN": self.fn, "TP": self.tp,
                "Recall": self.recall, "GT": self.num_gt}


def filter_by_score(preds: Sequence[FrameBoxes], threshold: float) -> list[FrameBoxes]:
    return [p.select(p.scores >= threshold) for p in preds]


def score_thresholds(tp_scores: Sequence[float], num_gt: int, cfg: EvalConfig):
    """Score cutoffs that reach each recall of the evaluation grid (nan if unreachable)."""
    grid = np.linspace(cfg.min_recall, 1.0, cfg.num_thresholds).round(12)
    if len(tp_scores) == 0 or num_gt == 0:
        return grid, np.full(len(grid), np.nan)
    scores = np.sort(np.asarray(tp_scores, dtype=np.float64))[::-1]
    rec = np.arange(1, len(scores) + 1) / num_gt
    thresholds = np.interp(grid, rec, scores, right=0.0)
    thresholds[grid > rec.max()] = np.nan
    return grid, thresholds


def amota(preds: Sequence[FrameBoxes], gts: Sequence[FrameBoxes],
          cfg: EvalConfig | None = None) -> EvalReport:
    """Average MOTAR over the recall grid; unreachable recalls count as 0 (AMOTP: threshold)."""
    cfg = cfg or EvalConfig()
    base = clear_mot(preds, gts, cfg.dist_threshold)
    grid, thresholds = score_thresholds(base.tp_scores, base.num_gt, cfg)
    curve: list[CurvePoint] = []
    best: ClearMot | None = None
    best_recall = math.nan
    cache: dict[float, ClearMot] = {}
    for r, thr in zip(grid, thresholds):
        if np.isnan(thr):
            curve.append(CurvePoint(float(r), math.nan, math.nan, math.nan, math.nan, math.nan))
            continue
        stats = cache.get(float(thr))
        if stats is None:
            stats = clear_mot(filter_by_score(preds, thr), gts, cfg.dist_threshold)
            cache[float(thr)] = stats
        curve.append(CurvePoint(float(r), float(thr), motar(stats), stats.mota, stats.motp, stats.recall))
        if best is None or stats.mota > best.mota:
            best, best_recall = stats, float(r)
    motars = np.array([c.motar for c in curve])
    motps = np.array([c.motp for c in curve])
    amota_v = float(np.where(np.isnan(motars), 0.0, motars).mean())
    amotp_v = float(np.where(np.isnan(motps), cfg.dist_threshold, motps).mean())
    if best is None:
        best = clear_mot([FrameBoxes.empty() for _ in gts], gts, cfg.dist_threshold)
        best_recall = 0.0
    return EvalReport(amota_v, amotp_v, best_recall, best.mota, best.ids, best.fp, best.fn,
                      best.tp, best.recall, base.num_gt, curve)
