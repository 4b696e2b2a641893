"""Plain-Python CLEAR-MOT / AMOTA reference used as a test oracle.

Written without numpy and without sharing code with alttrack.metrics.
Frames are lists of (id, x, y) for ground truth and (id, x, y, score) for
predictions.
"""
import math


def _dist(a, b):
    return math.hypot(a[1] - b[1], a[2] - b[2])


def count(preds, gts, thr=2.0):
    last = {}
    out = dict(tp=0, fp=0, fn=0, ids=0, gt=0, dists=[], tp_scores=[])
    for P, G in zip(preds, gts):
        taken_g, taken_p, pairs = set(), set(), []
        for gi, g in enumerate(G):
            if g[0] not in last:
                continue
            for pi, p in enumerate(P):
                if p[0] == last[g[0]] and pi not in taken_p and _dist(g, p) <= thr:
                    pairs.append((gi, pi))
                    taken_g.add(gi)
                    taken_p.add(pi)
                    break
        rest = []
        for gi, g in enumerate(G):
            for pi, p in enumerate(P):
                if gi not in taken_g and pi not in taken_p and _dist(g, p) <= thr:
                    rest.append((_dist(g, p), gi, pi))
        rest.sort()
        for _, gi, pi in rest:
            if gi in taken_g or pi in taken_p:
                continue
            pairs.append((gi, pi))
            taken_g.add(gi)
            taken_p.add(pi)
        for gi, pi in sorted(pairs):
            oid, hid = G[gi][0], P[pi][0]
            if oid in last and last[oid] != hid:
                out["ids"] += 1
            last[oid] = hid
            out["dists"].append(_dist(G[gi], P[pi]))
            out["tp_scores"].append(P[pi][3])
        out["tp"] += len(pairs)
        out["fp"] += len(P) - len(pairs)
        out["fn"] += len(G) - len(pairs)
        out["gt"] += len(G)
    return out


def _interp(x, xs, ys):
    # xs increasing; beyond the right end -> 0.0
    if x <= xs[0]:
        return ys[0]
    for k in range(1, len(xs)):
        if x == xs[k]:
            # a reached recall uses that detection's score exactly
            return ys[k]
        if x < xs[k]:
            w = (x - xs[k - 1]) / (xs[k] - xs[k - 1])
            return ys[k - 1] + w * (ys[k] - ys[k - 1])
    return 0.0


def amota(preds, gts, thr=2.0, n=40, rmin=0.1):
    base = count(preds, gts, thr)
    P = base["gt"]
    grid = [round(rmin + (1.0 - rmin) * k / (n - 1), 12) for k in range(n)]
    scores = sorted(base["tp_scores"], reverse=True)
    motars, motps = [], []
    for r in grid:
        if not scores or P == 0 or r > len(scores) / P:
            motars.append(0.0)
            motps.append(thr)
            continue
        cut = _interp(r, [(k + 1) / P for k in range(len(scores))], scores)
        kept = [[p for p in F if p[3] >= cut] for F in preds]
        c = count(kept, gts, thr)
        rec = c["tp"] / P
        if rec == 0:
            motars.append(0.0)
            motps.append(thr)
            continue
        m = 1.0 - (c["ids"] + c["fp"] + c["fn"] - (1.0 - rec) * P) / (rec * P)
        motars.append(max(0.0, m))
        motps.append(sum(c["dists"]) / len(c["dists"]))
    return sum(motars) / n, sum(motps) / n
