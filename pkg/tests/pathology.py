"""Scripted fixture: one detection that matches no track, all affinities low."""
import numpy as np

from alttrack.association import affinity_scores, build_edge_pos_encoding, edge_augmented_cross_attention
from alttrack.config import ModelConfig
from alttrack.decoder import init_params, mlp_layers
from alttrack.numeric import ParamStore, Tensor, adamw_step, concat_rows, softmax_np
from alttrack.training import ce_association_loss

N_T = 4
LOW = -4.0


def fixture(seed: int = 0):
    cfg = ModelConfig(d_k=8, num_layers=1, num_det_queries=1, ffn_dim=8, aux_token=True)
    full = init_params(cfg, seed)
    store = ParamStore()
    for k, v in full.params.items():
        if k.startswith("L0.edge.") or k.startswith("head.aff."):
            store.add(k, v.copy())
    store.params["head.aff.1.b"][:] = LOW
    rng = np.random.default_rng(seed)
    trk_boxes = np.column_stack([rng.uniform(-10, 10, (N_T, 2)), np.zeros(N_T), np.ones((N_T, 3)),
                                 np.zeros((N_T, 3))])
    det_box = np.array([[15.0, 15.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]])
    trk_emb = rng.uniform(-1, 1, (N_T, cfg.d_k))
    det_emb = rng.uniform(-1, 1, (1, cfg.d_k))
    return store, (trk_boxes, det_box, trk_emb, det_emb, full.params["aux.token"].copy())


def affinities(p: dict[str, Tensor], data, with_aux: bool) -> Tensor:
    trk_boxes, det_box, trk_emb, det_emb, aux_token = data
    aux_col = p["L0.edge.aux"] if with_aux else None
    edges = build_edge_pos_encoding(Tensor(trk_boxes), Tensor(det_box), mlp_layers(p, "L0.edge.pos", 2), aux_col)
    keys = Tensor(trk_emb) if not with_aux else concat_rows([Tensor(trk_emb), Tensor(aux_token)])
    sub = {k[len("L0.edge."):]: v for k, v in p.items() if k.startswith("L0.edge.")}
    _, edges, _ = edge_augmented_cross_attention(Tensor(det_emb), keys, edges, sub)
    return affinity_scores(edges, mlp_layers(p, "head.aff", 2))


def max_track_attention(store: ParamStore, data, with_aux: bool) -> float:
    S = affinities(store.constants(), data, with_aux).data
    return float(softmax_np(S)[0, :N_T].max())


def train_aux_target(store: ParamStore, data, steps: int = 100, lr: float = 0.01) -> list[float]:
    Y = np.zeros((1, N_T + 1))
    Y[0, N_T] = 1.0
    losses = []
    for _ in range(steps):
        store.zero_grad()
        leaves = store.tensors()
        loss = ce_association_loss(affinities(leaves, data, True), Y)
        loss.backward()
        store.collect(leaves)
        losses.append(loss.item())
        adamw_step(store, lr, weight_decay=0.0)
    return losses


def run(seed: int = 0) -> dict[str, float]:
    store, data = fixture(seed)
    raw = affinities(store.constants(), data, False).data
    before = max_track_attention(store, data, False)
    losses = train_aux_target(store, data)
    return {"sigmoid_max": float(1 / (1 + np.exp(-raw.max()))), "no_aux": before,
            "aux": max_track_attention(store, data, True), "loss_first": losses[0], "loss_last": losses[-1],
            "bound": 1.0 / N_T}
