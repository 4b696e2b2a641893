"""Scenario builders shared by the metric tests and the acceptance suite.

Frames are lists of ``(id, x, y[, score])`` tuples.
"""
import numpy as np

from alttrack.metrics import FrameBoxes


def to_boxes(frames, with_scores=True):
    out = []
    for F in frames:
        ids = [f[0] for f in F]
        centers = [[f[1], f[2], 0.0] for f in F]
        scores = [f[3] for f in F] if with_scores else None
        out.append(FrameBoxes(np.array(ids, dtype=np.int64), np.array(centers).reshape(-1, 3),
                              None if scores is None else np.array(scores)))
    return out


def gt_of(frames):
    return to_boxes([[(g[0], g[1], g[2], 1.0) for g in F] for F in frames], with_scores=False)


def swap_case():
    # one object, four frames; the predicted id changes once
    gts = [[(7, 0.0, 0.0)], [(7, 1.0, 0.0)], [(7, 2.0, 0.0)], [(7, 3.0, 0.0)]]
    preds = [[(1, 0.1, 0.0, 0.9)], [(1, 1.1, 0.0, 0.9)], [(2, 2.1, 0.0, 0.9)], [(2, 3.1, 0.0, 0.9)]]
    return preds, gts


def random_case(rng, n_obj=4, n_frames=6):
    gts, preds = [], []
    pos = rng.uniform(-5, 5, size=(n_obj, 2))
    vel = rng.uniform(-1, 1, size=(n_obj, 2))
    next_id = 100
    hyp = {}
    for _ in range(n_frames):
        pos = pos + vel
        G, P = [], []
        for o in range(n_obj):
            if rng.random() < 0.8:
                G.append((o, float(pos[o, 0]), float(pos[o, 1])))
            if rng.random() < 0.75:
                if o not in hyp or rng.random() < 0.15:
                    hyp[o] = next_id
                    next_id += 1
                noise = rng.normal(0, 0.8, 2)
                P.append((hyp[o], float(pos[o, 0] + noise[0]), float(pos[o, 1] + noise[1]),
                          float(rng.choice([0.2, 0.5, 0.7, 0.9, rng.random()]))))
        for _ in range(rng.poisson(0.5)):
            P.append((next_id, float(rng.uniform(-8, 8)), float(rng.uniform(-8, 8)), float(rng.random())))
            next_id += 1
        gts.append(G)
        preds.append(P)
    return preds, gts
