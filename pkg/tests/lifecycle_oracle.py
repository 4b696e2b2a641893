"""Random association streams checked against a hand-written track automaton."""
import numpy as np

from alttrack.numeric import Tensor
from alttrack.tracker import ACTIVE, associate_infer, update_tracks

D = 2


def run_stream(rng: np.random.Generator, n_frames: int = 12, max_age: int = 5,
               tau_s: float = 0.3, tau_new: float = 0.4) -> list[str]:
    """Drive update_tracks with random affinities; return the list of violations."""
    tracks, next_id = [], 0
    # oracle state: id -> consecutive misses
    misses: dict[int, int] = {}
    problems = []
    for frame in range(n_frames):
        n_d = int(rng.integers(0, 5))
        ids = [t.id for t in tracks]
        aux = bool(rng.integers(2))
        S = rng.normal(0.0, 2.0, size=(n_d, len(ids) + int(aux)))
        scores = rng.choice([0.1, 0.4, 0.41, 0.9, 0.4000001, 0.3999999], size=n_d)
        res = associate_infer(S, scores, tau_s, tau_new, ids, has_aux=aux)
        if not res.is_partition(ids, n_d):
            problems.append(f"frame {frame}: not a partition")
        prob = 1.0 / (1.0 + np.exp(-S[:, :len(ids)])) if ids else np.zeros((n_d, 0))
        for tid, j in res.matches:
            if prob[j, ids.index(tid)] < tau_s:
                problems.append(f"frame {frame}: match below tau_s")
        expect_spawn = [j for j in res.unmatched_dets if scores[j] > tau_new]
        if res.spawn != expect_spawn:
            problems.append(f"frame {frame}: spawn {res.spawn} != {expect_spawn}")
        emb = Tensor(rng.normal(size=(n_d, D)))
        boxes = np.tile([0.0, 0, 0, 1, 1, 1, 0, 0, 0], (max(n_d, 1), 1))[:n_d]
        t_emb = Tensor(np.zeros((len(ids), D)))
        t_boxes = np.tile([0.0, 0, 0, 1, 1, 1, 0, 0, 0], (max(len(ids), 1), 1))[:len(ids)]
        tracks, next_id_new = update_tracks(tracks, res, emb, boxes, scores, t_emb, t_boxes,
                                            next_id, max_age=max_age)
        # oracle transition
        expected = {}
        matched = {t for t, _ in res.matches}
        for tid, m in misses.items():
            if tid in matched:
                expected[tid] = 0
            elif m + 1 <= max_age:
                expected[tid] = m + 1
        for k in range(len(res.spawn)):
            expected[next_id + k] = 0
        next_id = next_id_new
        misses = expected
        got = {t.id: t.misses for t in tracks}
        if got != expected:
            problems.append(f"frame {frame}: tracks {got} != oracle {expected}")
        for t in tracks:
            if (t.state == ACTIVE) != (t.misses == 0):
                problems.append(f"frame {frame}: track {t.id} state {t.state} with {t.misses} misses")
    return problems


def termination_frame(max_age: int = 5) -> int:
    """Number of consecutive misses after which a lone track disappears."""
    rng = np.random.default_rng(0)
    emb = Tensor(rng.normal(size=(1, D)))
    box = np.array([[0.0, 0, 0, 1, 1, 1, 0, 0, 0]])
    res = associate_infer(np.zeros((1, 0)), [0.9], track_ids=[])
    tracks, nid = update_tracks([], res, emb, box, [0.9], Tensor(np.zeros((0, D))), np.zeros((0, 9)), 0,
                                max_age=max_age)
    for k in range(1, 100):
        res = associate_infer(np.full((0, 1), -10.0), np.zeros(0), track_ids=[t.id for t in tracks])
        tracks, nid = update_tracks(tracks, res, Tensor(np.zeros((0, D))), np.zeros((0, 9)), np.zeros(0),
                                    Tensor(np.zeros((len(tracks), D))), np.tile(box, (len(tracks), 1)),
                                    nid, max_age=max_age)
        if not tracks:
            return k
    return -1
