"""Seeded synthetic bird's-eye-view world.

Objects are born uniformly in a square arena, move with constant velocity
plus Gaussian velocity noise, and die randomly or when they leave the arena.
The ego vehicle drives with constant speed and yaw rate.  Every visible
object emits one observation token in the vehicle frame: its noisy center and
a fixed random linear encoding of its noisy 9-parameter box.  Clutter tokens
model false positives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .geometry import BOX_DIM, BoxState, EgoPose, boxes_to_ego

CLUTTER = -1
# per-parameter scaling applied before the random encoding
_FEATURE_SCALE = np.array([0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.2])


@dataclass
class ObservationEncoder:
    """Fixed random linear map from a 9-vector box to an ``obs_dim`` token."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, obs_dim: int) -> "ObservationEncoder":
        rng = np.random.default_rng([seed, 0xE7C0])
        return cls(rng.standard_normal((BOX_DIM, obs_dim)) / 3.0, rng.standard_normal(obs_dim) * 0.1)

    def encode(self, boxes: np.ndarray) -> np.ndarray:
        b = np.asarray(boxes, dtype=np.float64).reshape(-1, BOX_DIM)
        return (b * _FEATURE_SCALE) @ self.weight + self.bias


@dataclass
class Frame:
    index: int
    ego: EgoPose
    gt_ids: np.ndarray
    gt_boxes: np.ndarray          # world frame, [N, 9]
    obs_pos: np.ndarray           # vehicle frame, [M, 3]
    obs_emb: np.ndarray           # [M, obs_dim]
    obs_src: np.ndarray           # source GT id or CLUTTER

    @property
    def visible_ids(self) -> np.ndarray:
        return np.array(sorted(set(int(s) for s in self.obs_src if s != CLUTTER)), dtype=np.int64)

    def visible_mask(self) -> np.ndarray:
        vis = set(int(s) for s in self.obs_src if s != CLUTTER)
        return np.array([int(i) in vis for i in self.gt_ids], dtype=bool)

    def gt_ego_boxes(self) -> np.ndarray:
        if len(self.gt_ids) == 0:
            return np.zeros((0, BOX_DIM))
        return boxes_to_ego(self.gt_boxes, self.ego)


@dataclass
class ScenarioLog:
    config: ScenarioConfig
    frames: list[Frame] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def window(self, start: int, length: int) -> "ScenarioLog":
        return ScenarioLog(self.config, self.frames[start:start + length])


def _spawn(rng: np.random.Generator, cfg: ScenarioConfig, center=None) -> np.ndarray:
    if center is None:
        center = (rng.uniform(-cfg.arena, cfg.arena), rng.uniform(-cfg.arena, cfg.arena))
    size = (rng.uniform(1.6, 2.2), rng.uniform(3.8, 5.0), rng.uniform(1.4, 1.8))
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    v = (speed * math.cos(heading), speed * math.sin(heading))
    return np.array([center[0], center[1], size[2] / 2.0, *size, heading, *v])


def observe(gt_ids, gt_boxes, visible, ego: EgoPose, cfg: ScenarioConfig,
            encoder: ObservationEncoder, rng: np.random.Generator):
    """Observation tokens for one frame: (positions, embeddings, source ids)."""
    ids = np.asarray(gt_ids, dtype=np.int64)
    boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, BOX_DIM)
    vis = np.asarray(visible, dtype=bool)
    ego_boxes = boxes_to_ego(boxes[vis], ego) if vis.any() else np.zeros((0, BOX_DIM))
    noisy = ego_boxes.copy()
    n = len(noisy)
    if n:
        noisy[:, 0:3] += rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_pos
        noisy[:, 3:6] = np.maximum(noisy[:, 3:6] + rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_size, 0.1)
        noisy[:, 6] += rng.normal(0.0, 1.0, n) * cfg.sigma_yaw
        noisy[:, 7:9] += rng.normal(0.0, 1.0, (n, 2)) * cfg.sigma_vel
    src = ids[vis]
    n_clutter = int(rng.poisson(cfg.clutter_rate)) if cfg.clutter_rate > 0 else 0
    if n_clutter:
        clutter = np.stack([_spawn(rng, cfg) for _ in range(n_clutter)])
        noisy = np.concatenate([noisy, clutter])
        src = np.concatenate([src, np.full(n_clutter, CLUTTER, dtype=np.int64)])
    pos = noisy[:, 0:3].copy()
    emb = encoder.encode(noisy) if len(noisy) else np.zeros((0, cfg.obs_dim))
    return pos, emb, src.astype(np.int64)


def generate_scenario(cfg: ScenarioConfig, initial: list[BoxState] | None = None) -> ScenarioLog:
    """Deterministic scenario for ``cfg`` (including ``cfg.seed``).

    ``initial`` replaces the randomly drawn objects present at frame 0.
    """
    rng = np.random.default_rng([cfg.seed, 0x51])
    obs_rng = np.random.default_rng([cfg.seed, 0x0B5])
    encoder = ObservationEncoder.from_seed(cfg.encoder_seed, cfg.obs_dim)
    next_id = 0
    ids: list[int] = []
    boxes: list[np.ndarray] = []
    occluded_left: list[int] = []
    if initial is None:
        initial_vecs = [_spawn(rng, cfg) for _ in range(min(cfg.initial_objects, cfg.max_objects))]
    else:
        initial_vecs = [b.to_vector() for b in initial]
    for vec in initial_vecs:
        ids.append(next_id)
        boxes.append(vec)
        occluded_left.append(0)
        next_id += 1
    ego_xy = np.zeros(2)
    ego_yaw = 0.0
    log = ScenarioLog(cfg)
    for t in range(cfg.frames):
        if t > 0:
            # motion, deaths and births
            survivors = []
            for oid, box, occ in zip(ids, boxes, occluded_left):
                box = box.copy()
                if cfg.process_noise > 0:
                    box[7:9] += rng.normal(0.0, cfg.process_noise, 2) * math.sqrt(cfg.dt)
                box[0:2] += box[7:9] * cfg.dt
                if np.hypot(box[7], box[8]) > 1e-9:
                    box[6] = math.atan2(box[8], box[7])
                dies = cfg.death_prob > 0 and rng.random() < cfg.death_prob
                if dies or abs(box[0]) > cfg.arena or abs(box[1]) > cfg.arena:
                    continue
                survivors.append((oid, box, occ))
            ids = [s[0] for s in survivors]
            boxes = [s[1] for s in survivors]
            occluded_left = [s[2] for s in survivors]
            births = int(rng.poisson(cfg.birth_rate)) if cfg.birth_rate > 0 else 0
            for _ in range(births):
                if len(ids) >= cfg.max_objects:
                    break
                ids.append(next_id)
                boxes.append(_spawn(rng, cfg))
                occluded_left.append(0)
                next_id += 1
            heading = ego_yaw
            ego_xy = ego_xy + cfg.ego_speed * cfg.dt * np.array([math.cos(heading), math.sin(heading)])
            ego_yaw = ego_yaw + cfg.ego_yaw_rate * cfg.dt
        visible = []
        for k in range(len(ids)):
            if occluded_left[k] > 0:
                occluded_left[k] -= 1
                visible.append(False)
            elif cfg.occlusion_prob > 0 and rng.random() < cfg.occlusion_prob:
                occluded_left[k] = cfg.occlusion_spell - 1
                visible.append(False)
            else:
                visible.append(True)
        ego = EgoPose((ego_xy[0], ego_xy[1], 0.0), ego_yaw)
        gt_ids = np.array(ids, dtype=np.int64)
        gt_boxes = np.stack(boxes) if boxes else np.zeros((0, BOX_DIM))
        pos, emb, src = observe(gt_ids, gt_boxes, visible, ego, cfg, encoder, obs_rng)
        log.frames.append(Frame(t, ego, gt_ids, gt_boxes, pos, emb, src))
    return log


def scenario_stats(log: ScenarioLog) -> dict[str, float]:
    n_gt = sum(len(f.gt_ids) for f in log.frames)
    n_obs = sum(len(f.obs_src) for f in log.frames)
    n_clutter = sum(int((f.obs_src == CLUTTER).sum()) for f in log.frames)
    ids = set()
    for f in log.frames:
        ids.update(int(i) for i in f.gt_ids)
    return {"frames": len(log.frames), "objects": len(ids), "gt_boxes": n_gt,
            "tokens": n_obs, "clutter_tokens": n_clutter}
