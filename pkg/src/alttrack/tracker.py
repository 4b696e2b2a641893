"""Track management: bipartite matching, association rules and track lifecycle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import EgoPose, boxes_to_world, ego_compensate, propagate_reference
from .numeric import ContractError, Tensor, add, scale, sigmoid_np, take_rows

INFEASIBLE = 1e6


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of min(n, m) pairs.

    Shortest augmenting path with row/column potentials (O(n^2 m)).  Ties are
    resolved by scanning columns in increasing order, so results are
    deterministic.  Returns ``(row, col)`` pairs sorted by row.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise ContractError(f"hungarian: expects a matrix, got shape {C.shape}")
    if not np.isfinite(C).all():
        raise ContractError("hungarian: costs must be finite")
    n, m = C.shape
    if n == 0 or m == 0:
        return []
    transposed = n > m
    if transposed:
        C = C.T
        n, m = m, n
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)  # match[j] = row (1-based) owning column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            np.add.at(u, match[used], delta)
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    pairs = [(int(match[j]) - 1, j - 1) for j in range(1, m + 1) if match[j] != 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


@dataclass
class AssociationResult:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_dets: list[int]
    spawn: list[int] = field(default_factory=list)

    def is_partition(self, track_ids: Sequence[int], num_dets: int) -> bool:
        tracks = [t for t, _ in self.matches] + list(self.unmatched_tracks)
        dets = [d for _, d in self.matches] + list(self.unmatched_dets)
        return sorted(tracks) == sorted(track_ids) and sorted(dets) == list(range(num_dets))


def associate_infer(affinity, det_scores, tau_s: float = 0.3, tau_new: float = 0.4,
                    track_ids: Sequence[int] | None = None, has_aux: bool = False) -> AssociationResult:
    """Hungarian matching on sigmoid affinities with rejection below ``tau_s``.

    The auxiliary column, when present, never produces a match.  Unmatched
    detections whose score exceeds ``tau_new`` are listed in ``spawn``.
    """
    S = np.asarray(affinity, dtype=np.float64)
    scores = np.asarray(det_scores, dtype=np.float64).reshape(-1)
    n_d = scores.shape[0]
    if S.ndim != 2:
        S = S.reshape(n_d, -1) if S.size else S.reshape(n_d, int(has_aux))
    if S.shape[0] != n_d:
        raise ContractError(f"associate_infer: affinity rows {S.shape[0]} != detections {n_d}")
    n_t = S.shape[1] - (1 if has_aux else 0)
    if n_t < 0:
        raise ContractError("associate_infer: aux column declared but matrix has no columns")
    ids = list(range(n_t)) if track_ids is None else list(track_ids)
    if len(ids) != n_t:
        raise ContractError(f"associate_infer: {len(ids)} track ids for {n_t} track columns")
    prob = sigmoid_np(S[:, :n_t])
    feasible = prob >= tau_s
    cost = np.where(feasible, 1.0 - prob, INFEASIBLE)
    matches = []
    if n_t and n_d:
        for j, i in hungarian(cost):
            if feasible[j, i]:
                matches.append((ids[i], j))
    matched_t = {t for t, _ in matches}
    matched_d = {d for _, d in matches}
    unmatched_t = [t for t in ids if t not in matched_t]
    unmatched_d = [j for j in range(n_d) if j not in matched_d]
    spawn = [j for j in unmatched_d if scores[j] > tau_new]
    return AssociationResult(sorted(matches, key=lambda p: p[1]), unmatched_t, unmatched_d, spawn)


def associate_train(track_gt_ids: Sequence[int | None], det_gt_ids: Sequence[int | None],
                    track_ids: Sequence[int] | None = None) -> AssociationResult:
    """Pair track and detection queries that were assigned the same ground truth.

    Tracks without a ground truth are unmatched (and get terminated by the
    caller); detections holding an identity no track holds are spawned.
    """
    for name, ids in (("track", track_gt_ids), ("detection", det_gt_ids)):
        held = [g for g in ids if g is not None]
        if len(held) != len(set(held)):
            raise ContractError(f"associate_train: duplicate ground-truth id among {name} queries")
    ids = list(range(len(track_gt_ids))) if track_ids is None else list(track_ids)
    det_of = {g: j for j, g in enumerate(det_gt_ids) if g is not None}
    matches, unmatched_t = [], []
    for tid, g in zip(ids, track_gt_ids):
        if g is not None and g in det_of:
            matches.append((tid, det_of[g]))
        else:
            unmatched_t.append(tid)
    matched_d = {d for _, d in matches}
    tracked = {g for g in track_gt_ids if g is not None}
    unmatched_d = [j for j in range(len(det_gt_ids)) if j not in matched_d]
    spawn = [j for j in unmatched_d if det_gt_ids[j] is not None and det_gt_ids[j] not in tracked]
    return AssociationResult(sorted(matches, key=lambda p: p[1]), unmatched_t, unmatched_d, spawn)


ACTIVE = "active"
INACTIVE = "inactive"


@dataclass
class Track:
    id: int
    embedding: Tensor
    box: np.ndarray
    refpoint: np.ndarray
    score: float
    misses: int = 0
    state: str = ACTIVE
    gt_id: int | None = None


def update_tracks(tracks: Sequence[Track], result: AssociationResult, det_embeddings: Tensor,
                  det_boxes: np.ndarray, det_scores: np.ndarray, track_embeddings: Tensor,
                  track_boxes: np.ndarray, next_id: int, w_t: float = 0.0, max_age: int = 5,
                  dt: float = 0.5, pose_t: EgoPose | None = None, pose_next: EgoPose | None = None,
                  det_gt_ids: Sequence[int | None] | None = None) -> tuple[list[Track], int]:
    """Apply one association result and move surviving tracks to the next frame.

    Matched tracks take ``w_t * track + (1 - w_t) * detection`` as embedding and
    the detection box.  Unmatched tracks keep their own prediction, count a
    miss and die after ``max_age`` consecutive misses.  Spawned detections get
    fresh ids.  Reference points of survivors are advanced with constant
    velocity and moved into the next vehicle frame.
    """
    pos = {t.id: k for k, t in enumerate(tracks)}
    det_boxes = np.asarray(det_boxes, dtype=np.float64)
    track_boxes = np.asarray(track_boxes, dtype=np.float64)
    out: list[Track] = []
    for tid, j in result.matches:
        k = pos[tid]
        det_row = take_rows(det_embeddings, [j])
        if w_t == 0.0:
            emb = det_row
        else:
            emb = add(scale(take_rows(track_embeddings, [k]), w_t), scale(det_row, 1.0 - w_t))
        old = tracks[k]
        gt = det_gt_ids[j] if det_gt_ids is not None else old.gt_id
        out.append(Track(tid, emb, det_boxes[j].copy(), det_boxes[j, :3].copy(),
                         float(det_scores[j]), 0, ACTIVE, gt))
    for tid in result.unmatched_tracks:
        k = pos[tid]
        old = tracks[k]
        misses = old.misses + 1
        if misses > max_age:
            continue
        out.append(Track(tid, take_rows(track_embeddings, [k]), track_boxes[k].copy(),
                         track_boxes[k, :3].copy(), old.score, misses, INACTIVE, old.gt_id))
    for j in result.spawn:
        gt = det_gt_ids[j] if det_gt_ids is not None else None
        out.append(Track(next_id, take_rows(det_embeddings, [j]), det_boxes[j].copy(),
                         det_boxes[j, :3].copy(), float(det_scores[j]), 0, ACTIVE, gt))
        next_id += 1
    for t in out:
        ref = propagate_reference(t.box[:3], t.box[7:9], dt)
        if pose_t is not None and pose_next is not None:
            ref = ego_compensate(ref, pose_t, pose_next)
        t.refpoint = ref
    return out, next_id


@dataclass
class TrackRecord:
    frame: int
    track_id: int
    box: np.ndarray
    score: float


def emitted(tracks: Sequence[Track], frame: int, pose: EgoPose | None) -> list[TrackRecord]:
    """Records for tracks that are active in this frame, boxes in the world frame."""
    live = [t for t in tracks if t.state == ACTIVE]
    if not live:
        return []
    boxes = np.stack([t.box for t in live])
    if pose is not None:
        boxes = boxes_to_world(boxes, pose)
    return [TrackRecord(frame, t.id, boxes[k], t.score) for k, t in enumerate(live)]
