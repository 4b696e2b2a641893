"""Alternating detection/association decoder.

Each layer runs, in order: self-attention over all queries, attention from
track and detection queries to the observation tokens (the stand-in for
image features), box and score heads, and the edge-augmented cross-attention
from detections to tracks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .association import (
    affinity_scores,
    build_edge_pos_encoding,
    edge_augmented_cross_attention,
)
from .config import ModelConfig
from .numeric import (
    ContractError,
    Layer,
    ParamStore,
    Tensor,
    _result,
    add,
    concat,
    concat_rows,
    detach,
    layer_norm,
    linear,
    matmul,
    matmul_nt,
    mlp_forward,
    reshape,
    scale,
    sigmoid_np,
    softmax_rows,
    take_cols,
    take_rows,
)

STAGES = ("self_attention", "observation_cross_attention", "predict_heads",
          "edge_pos_encoding", "edge_cross_attention")

_PAD_CENTER = np.zeros((3, 9))
_PAD_CENTER[0, 0] = _PAD_CENTER[1, 1] = _PAD_CENTER[2, 2] = 1.0


def edge_input_dim(cfg: ModelConfig) -> int:
    return {"box": 9, "center": 3, "appearance": cfg.d_k, "none": 1}[cfg.pos_encoding]


def init_params(cfg: ModelConfig, seed: int | None = None) -> ParamStore:
    """Seeded parameter set: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d = cfg.d_k
    store = ParamStore()
    n_d = cfg.num_det_queries
    store.add("det.query", rng.uniform(-1, 1, size=(n_d, d)) / math.sqrt(d))
    # Position encodings whose leading coordinates are an even spread of
    # reference points over the arena; the linear map reads them back out.
    pos = rng.uniform(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), size=(n_d, d))
    pos[:, :2] = rng.uniform(-1.0, 1.0, size=(n_d, 2))
    pos[:, 2] = 0.0
    store.add("det.pos", pos)
    ref_w = np.zeros((d, 3))
    ref_w[0, 0] = ref_w[1, 1] = cfg.init_spread
    store.add("det.ref.W", ref_w)
    store.add("det.ref.b", np.zeros(3))
    store.add("aux.token", rng.uniform(-1, 1, size=(1, d)) / math.sqrt(d))
    for l in range(cfg.num_layers):
        p = f"L{l}."
        for name in ("sa.Wq", "sa.Wk", "sa.Wv"):
            store.add(p + name, rng.uniform(-1, 1, size=(d, d)) / math.sqrt(d))
        store.add_linear(rng, p + "sa.pos", 3, d)
        for name in ("obs.Wq", "obs.Wk", "obs.Wv"):
            store.add(p + name, rng.uniform(-1, 1, size=(d, d)) / math.sqrt(d))
        store.add(p + "obs.Wp", rng.uniform(-1, 1, size=(3, d)) / math.sqrt(3))
        store.add(p + "obs.sink", rng.uniform(-1, 1, size=(1, d)) / math.sqrt(d))
        store.add(p + "obs.sharp", np.zeros(1))
        store.add_linear(rng, p + "ffn.0", d, cfg.ffn_dim)
        store.add_linear(rng, p + "ffn.1", cfg.ffn_dim, d)
        for norm in ("n1", "n2", "n3"):
            store.add(p + norm + ".g", np.ones(d))
            store.add(p + norm + ".b", np.zeros(d))
        for name in ("edge.Wq", "edge.Wk", "edge.Wv"):
            store.add(p + name, rng.uniform(-1, 1, size=(d, d)) / math.sqrt(d))
        store.add(p + "edge.We1", rng.uniform(-1, 1, size=(d, 1)) / math.sqrt(d))
        store.add(p + "edge.We2", rng.uniform(-1, 1, size=(1, d)))
        store.add_linear(rng, p + "edge.pos.0", edge_input_dim(cfg), d)
        store.add_linear(rng, p + "edge.pos.1", d, d)
        store.add(p + "edge.aux", rng.uniform(-1, 1, size=(d,)) / math.sqrt(d))
    store.add_linear(rng, "head.box.0", d, d)
    store.add_linear(rng, "head.box.1", d, 9)
    store.add_linear(rng, "head.score.0", d, d)
    store.add_linear(rng, "head.score.1", d, 1)
    store.add_linear(rng, "head.aff.0", d, d)
    store.add_linear(rng, "head.aff.1", d, 1)
    return store


def mlp_layers(params: Mapping[str, Tensor], prefix: str, n: int) -> list[Layer]:
    return [Layer(params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]) for i in range(n)]


# ------------------------------------------------------------ stage ops


def self_attention(x: Tensor, p: Mapping[str, Tensor], pos: Tensor | None = None,
                   mask: np.ndarray | None = None) -> Tensor:
    """Single-head scaled dot-product self-attention with a residual.

    ``pos`` (same shape as ``x``) is added to queries and keys only.
    ``mask[i, j]`` False forbids row ``i`` from attending to row ``j``.
    """
    if x.shape[0] < 1:
        raise ContractError("self_attention: needs at least one query")
    d = x.shape[1]
    qk_in = x if pos is None else add(x, pos)
    q = matmul(qk_in, p["Wq"])
    k = matmul(qk_in, p["Wk"])
    attn = softmax_rows(scale(matmul_nt(q, k), 1.0 / math.sqrt(d)), mask)
    return add(x, matmul(attn, matmul(x, p["Wv"])))


def query_type_mask(n_track: int, n_det: int, n_aux: int, block_det_to_track: bool,
                    block_track_to_det: bool) -> np.ndarray | None:
    if not (block_det_to_track or block_track_to_det):
        return None
    n = n_track + n_det + n_aux
    kind = np.array([0] * n_track + [1] * n_det + [2] * n_aux)
    mask = np.ones((n, n), dtype=bool)
    if block_det_to_track:
        mask[np.ix_(kind == 1, kind == 0)] = False
    if block_track_to_det:
        mask[np.ix_(kind == 0, kind == 1)] = False
    return mask


def neg_distance_bias(refs: Tensor, positions: np.ndarray, tau: float,
                      log_sharpness: Tensor | None = None) -> Tensor:
    """-exp(s) ||ref_i - pos_k|| / tau, differentiable in the reference points and s."""
    P = np.asarray(positions, dtype=np.float64)
    diff = refs.data[:, None, :] - P[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1) + 1e-12)
    k = 1.0 if log_sharpness is None else float(np.exp(log_sharpness.data.reshape(-1)[0]))
    out = -k * dist / tau

    def back(g):
        g_ref = (-(k * g / (tau * dist))[:, :, None] * diff).sum(axis=1)
        if log_sharpness is None:
            return (g_ref,)
        return g_ref, np.array([(g * out).sum()]).reshape(log_sharpness.shape)

    parents = (refs,) if log_sharpness is None else (refs, log_sharpness)
    return _result(out, parents, back)


def relative_aggregate(attn: Tensor, positions: np.ndarray, refs: Tensor) -> Tensor:
    """sum_k attn[i, k] (pos_k - ref_i)."""
    P = np.asarray(positions, dtype=np.float64)
    A, R = attn.data, refs.data
    mass = A.sum(axis=1, keepdims=True)

    def back(g):
        ga = g @ P.T - (g * R).sum(axis=1, keepdims=True)
        return ga, -mass * g

    return _result(A @ P - mass * R, (attn, refs), back)


def observation_cross_attention(x: Tensor, refs: Tensor, obs: Tensor, obs_pos: np.ndarray,
                                p: Mapping[str, Tensor], tau_pos: float, pos_scale: float = 10.0,
                                sink: bool = True, return_attention: bool = False):
    """Queries attend to observation tokens, biased toward nearby ones.

    Logits are ``q.k / sqrt(d) - ||ref - obs_pos|| / tau_pos``.  Values are the
    projected token plus a projection of the token position relative to the
    query's reference point.  With ``sink`` a learned background key with a
    zero value absorbs attention when nothing is close.
    """
    n_obs = obs.shape[0]
    if n_obs == 0 or x.shape[0] == 0:
        return (x, None) if return_attention else x
    d = x.shape[1]
    q = matmul(x, p["Wq"])
    logits = add(scale(matmul_nt(q, matmul(obs, p["Wk"])), 1.0 / math.sqrt(d)),
                 neg_distance_bias(refs, obs_pos, tau_pos, p.get("sharp")))
    if sink:
        sink_logit = scale(matmul_nt(q, p["sink"]), 1.0 / math.sqrt(d))
        attn_full = softmax_rows(concat([sink_logit, logits], axis=1))
        attn = take_cols(attn_full, list(range(1, n_obs + 1)))
    else:
        attn = softmax_rows(logits)
    values = matmul(attn, matmul(obs, p["Wv"]))
    # displacement toward the attended observations, normalised over tokens only
    near = softmax_rows(logits) if sink else attn
    rel = matmul(scale(relative_aggregate(near, obs_pos, refs), 1.0 / pos_scale), p["Wp"])
    out = add(x, add(values, rel))
    return (out, attn) if return_attention else out


def predict_heads(x: Tensor, refs: Tensor, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Box vectors (center = reference point + offset) and score logits."""
    raw = mlp_forward(x, mlp_layers(params, "head.box", 2))
    boxes = add(raw, matmul(refs, Tensor(_PAD_CENTER)))
    logits = reshape(mlp_forward(x, mlp_layers(params, "head.score", 2)), (x.shape[0],))
    return boxes, logits


def _sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


# ------------------------------------------------------------- containers


@dataclass
class QuerySet:
    det_embeddings: Tensor
    det_refpoints: Tensor
    track_embeddings: Tensor
    track_refpoints: Tensor
    aux_token: Tensor | None = None

    def __post_init__(self):
        if self.det_embeddings.shape[0] != self.det_refpoints.shape[0]:
            raise ContractError("every detection query needs one reference point")
        if self.track_embeddings.shape[0] != self.track_refpoints.shape[0]:
            raise ContractError("every track query needs one reference point")

    @property
    def num_tracks(self) -> int:
        return self.track_embeddings.shape[0]

    @property
    def num_dets(self) -> int:
        return self.det_embeddings.shape[0]


@dataclass
class LayerOutput:
    det_boxes: Tensor
    det_logits: Tensor
    track_boxes: Tensor
    track_logits: Tensor
    affinity: Tensor | None

    @property
    def det_scores(self) -> np.ndarray:
        return sigmoid_np(self.det_logits.data)

    @property
    def track_scores(self) -> np.ndarray:
        return sigmoid_np(self.track_logits.data)


@dataclass
class FrameOutput:
    layers: list[LayerOutput]
    queries: QuerySet
    edges: Tensor | None
    trace: list[tuple[int, str]] = field(default_factory=list)

    @property
    def last(self) -> LayerOutput:
        return self.layers[-1]


def initial_queries(params: Mapping[str, Tensor], cfg: ModelConfig, track_embeddings: Tensor | None,
                    track_refpoints: Tensor | None, aux: Tensor | None = None) -> QuerySet:
    """Detection queries for a new frame plus the given track queries."""
    d = cfg.d_k
    det_ref = linear(params["det.pos"], params["det.ref.W"], params["det.ref.b"])
    if track_embeddings is None:
        track_embeddings = Tensor(np.zeros((0, d)))
        track_refpoints = Tensor(np.zeros((0, 3)))
    if cfg.aux_token and aux is None:
        aux = params["aux.token"]
    return QuerySet(params["det.query"], det_ref, track_embeddings, track_refpoints,
                    aux if cfg.aux_token else None)


def decode_frame(params: Mapping[str, Tensor], cfg: ModelConfig, queries: QuerySet,
                 obs: Tensor, obs_pos: np.ndarray, num_layers: int | None = None,
                 trace: bool = False) -> FrameOutput:
    """Run the stacked decoder on one frame."""
    L = cfg.num_layers if num_layers is None else num_layers
    if L < 1:
        raise ContractError("decode_frame: needs at least one layer")
    n_t, n_d = queries.num_tracks, queries.num_dets
    d = cfg.d_k
    det, trk, aux = queries.det_embeddings, queries.track_embeddings, queries.aux_token
    det_ref, trk_ref = queries.det_refpoints, queries.track_refpoints
    use_aux_sa = aux is not None and cfg.aux_self_attn
    n_aux = 1 if use_aux_sa else 0
    mask = query_type_mask(n_t, n_d, n_aux, cfg.block_det_to_track, cfg.block_track_to_det)
    edges: Tensor | None = None
    outputs: list[LayerOutput] = []
    stages: list[tuple[int, str]] = []
    for l in range(L):
        p = f"L{l}."
        # 1. self-attention among all queries
        parts = [trk, det] + ([aux] if use_aux_sa else [])
        x = concat_rows(parts)
        refs = concat_rows([trk_ref, det_ref])
        pos = linear(scale(refs, 1.0 / cfg.pos_scale), params[p + "sa.pos.W"], params[p + "sa.pos.b"])
        if n_aux:
            pos = concat_rows([pos, Tensor(np.zeros((1, d)))])
        x = self_attention(x, _sub(params, p + "sa."), pos, mask)
        if cfg.layer_norm:
            x = layer_norm(x, params[p + "n1.g"], params[p + "n1.b"])
        if n_aux:
            aux = take_rows(x, [n_t + n_d])
        x = take_rows(x, list(range(n_t + n_d)))
        stages.append((l, STAGES[0]))
        # 2. attention to observation tokens (aux token excluded)
        x = observation_cross_attention(x, refs, obs, obs_pos, _sub(params, p + "obs."),
                                        cfg.tau_pos, cfg.pos_scale, cfg.obs_sink)
        if cfg.layer_norm:
            x = layer_norm(x, params[p + "n2.g"], params[p + "n2.b"])
            h = mlp_forward(x, mlp_layers(params, p + "ffn", 2))
            x = layer_norm(add(x, h), params[p + "n3.g"], params[p + "n3.b"])
        stages.append((l, STAGES[1]))
        # 3. box and score heads
        boxes, logits = predict_heads(x, refs, params)
        trk = take_rows(x, list(range(n_t)))
        det = take_rows(x, list(range(n_t, n_t + n_d)))
        trk_boxes = take_rows(boxes, list(range(n_t)))
        det_boxes = take_rows(boxes, list(range(n_t, n_t + n_d)))
        trk_logits = take_rows(logits, list(range(n_t)))
        det_logits = take_rows(logits, list(range(n_t, n_t + n_d)))
        stages.append((l, STAGES[2]))
        affinity = None
        if n_t > 0:
            # 4. edge position encoding added to the running edge features
            aux_col = params[p + "edge.aux"] if aux is not None else None
            e_pos = build_edge_pos_encoding(trk_boxes, det_boxes, mlp_layers(params, p + "edge.pos", 2),
                                            aux_col, cfg.pos_encoding, trk, det)
            edges = e_pos if (edges is None or not cfg.edge_iteration) else add(edges, e_pos)
            stages.append((l, STAGES[3]))
            # 5. detections attend to tracks (and the aux key) through the edges
            keys = trk if aux is None else concat_rows([trk, aux])
            det, edges, _ = edge_augmented_cross_attention(det, keys, edges, _sub(params, p + "edge."))
            affinity = affinity_scores(edges, mlp_layers(params, "head.aff", 2))
            stages.append((l, STAGES[4]))
        outputs.append(LayerOutput(det_boxes, det_logits, trk_boxes, trk_logits, affinity))
        new_refs = detach(take_cols(boxes, [0, 1, 2]))
        trk_ref = take_rows(new_refs, list(range(n_t)))
        det_ref = take_rows(new_refs, list(range(n_t, n_t + n_d)))
    final = QuerySet(det, det_ref, trk, trk_ref, aux)
    return FrameOutput(outputs, final, edges, stages if trace else [])
