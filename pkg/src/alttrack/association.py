"""Learned data association between detection and track queries.

Edges between every (detection, track) pair carry a ``d_k`` feature.  Each
decoder layer adds an encoding of the pairwise box difference to the edges,
lets detections attend to tracks with the edge features biasing the logits,
and writes the attention back into the edges.  An optional auxiliary key
stands for "no existing track".
"""
from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .geometry import YAW
from .numeric import (
    ContractError,
    Layer,
    Tensor,
    _result,
    add,
    concat,
    linear,
    matmul,
    matmul_nt,
    mlp_forward,
    reshape,
    repeat_rows,
    scale,
    softmax_rows,
    take_cols,
    wrap_angle,
)

POS_ENCODINGS = ("box", "center", "none", "appearance")


def pairwise_abs_diff_op(track: Tensor, det: Tensor, yaw_col: int | None = YAW) -> Tensor:
    """Differentiable [N_D, N_T, F] tensor of |track_i - det_j| (yaw wrapped)."""
    if track.data.ndim != 2 or det.data.ndim != 2 or track.shape[1] != det.shape[1]:
        raise ContractError(f"pairwise_abs_diff_op: shapes {track.shape} and {det.shape}")
    d = track.data[None, :, :] - det.data[:, None, :]
    if yaw_col is not None:
        d[..., yaw_col] = wrap_angle(d[..., yaw_col])
    s = np.sign(d)

    def back(g):
        gs = g * s
        return gs.sum(axis=0), -gs.sum(axis=1)

    return _result(np.abs(d), (track, det), back)


def edge_input(variant: str, track_boxes: Tensor, det_boxes: Tensor,
               track_emb: Tensor | None = None, det_emb: Tensor | None = None) -> Tensor | None:
    """Pairwise input features for the edge position encoding of one variant."""
    if variant == "box":
        return pairwise_abs_diff_op(track_boxes, det_boxes)
    if variant == "center":
        return take_cols(pairwise_abs_diff_op(track_boxes, det_boxes), [0, 1, 2])
    if variant == "appearance":
        if track_emb is None or det_emb is None:
            raise ContractError("appearance encoding needs query embeddings")
        return pairwise_abs_diff_op(track_emb, det_emb, yaw_col=None)
    if variant == "none":
        return None
    raise ContractError(f"unknown edge position encoding {variant!r}")


def build_edge_pos_encoding(track_boxes: Tensor, det_boxes: Tensor, mlp: Sequence[Layer],
                            aux_embedding: Tensor | None = None, variant: str = "box",
                            track_emb: Tensor | None = None,
                            det_emb: Tensor | None = None) -> Tensor:
    """E_pos[j, i] = MLP(diff(track i, det j)); an aux column gets a learned vector."""
    n_t, n_d = track_boxes.shape[0], det_boxes.shape[0]
    if n_t == 0 or n_d == 0:
        raise ContractError("build_edge_pos_encoding: needs at least one track and detection")
    d_k = mlp[-1].W.shape[1]
    feats = edge_input(variant, track_boxes, det_boxes, track_emb, det_emb)
    if feats is None:
        enc = Tensor(np.zeros((n_d, n_t, d_k)))
    else:
        enc = mlp_forward(feats, mlp)
    if aux_embedding is None:
        return enc
    aux_col = repeat_rows(reshape(aux_embedding, (1, 1, d_k)), n_d)
    return concat([enc, aux_col], axis=1)


def edge_augmented_cross_attention(q_det: Tensor, keys: Tensor, edges: Tensor,
                                   p: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """One single-head edge-augmented cross-attention step.

    ``p`` holds ``Wq``, ``Wk``, ``Wv`` (d_k x d_k), ``We1`` (d_k x 1) and
    ``We2`` (1 x d_k).  Returns the updated detection queries, the updated
    edges and the attention matrix [N_D, N_K].
    """
    n_d, d_k = q_det.shape
    n_k = keys.shape[0]
    if n_k == 0:
        raise ContractError("edge_augmented_cross_attention: no keys")
    if edges.shape != (n_d, n_k, d_k):
        raise ContractError(f"edge tensor {edges.shape} does not match ({n_d}, {n_k}, {d_k})")
    q = matmul(q_det, p["Wq"])
    k = matmul(keys, p["Wk"])
    logits = add(scale(matmul_nt(q, k), 1.0 / math.sqrt(d_k)),
                 reshape(linear(edges, p["We1"]), (n_d, n_k)))
    attn = softmax_rows(logits)
    q_new = add(q_det, matmul(attn, matmul(keys, p["Wv"])))
    e_new = add(edges, linear(reshape(attn, (n_d, n_k, 1)), p["We2"]))
    return q_new, e_new, attn


def affinity_scores(edges: Tensor, head: Sequence[Layer]) -> Tensor:
    """Raw affinities S = MLP(E) with shape [N_D, N_K]."""
    n_d, n_k, _ = edges.shape
    return reshape(mlp_forward(edges, head), (n_d, n_k))
