"""Plain-text artifact formats.

Every artifact starts with a ``# alttrack <kind> v1`` line followed by the
producing run config, one ``#| `` prefixed line per config line.  Floats are
written with 17 significant digits so that a write/read cycle is exact.

Scenario and results files may hold several sequences; each starts with a
``# sequence k ...`` line that also carries its frame count.

Scenario file, one line per frame::

    frame ego_x ego_y ego_z ego_yaw
          n_gt  (id x y z w l h yaw vx vy) * n_gt
          n_obs obs_dim (px py pz e_1 .. e_obs_dim src) * n_obs

``src`` is the emitting object id, or -1 for clutter.  Positions are in the
vehicle frame, ground-truth boxes in the world frame.

Results file, one line per emitted (frame, track), world frame::

    frame track_id x y z w l h yaw vx vy score

Report file: ``key: value`` lines, then a ``curve:`` line and one row per
recall grid point with columns ``recall threshold motar mota motp achieved``.

Training log: one line per optimiser step with columns
``step lr total cls_D reg_D cls_T reg_T asso_FL asso_CE``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import RunConfig, comment_block, parse_config, strip_comment_block
from .geometry import BOX_DIM, EgoPose
from .metrics import CurvePoint, EvalReport
from .simworld import Frame, ScenarioLog
from .tracker import TrackRecord
from .training import TERMS, LossReport

VERSION = 1
REPORT_KEYS = ("AMOTA", "AMOTP", "RECALL_AT_BEST", "MOTA", "IDS", "FP", "FN", "TP", "Recall", "GT")
CURVE_COLUMNS = ("recall", "threshold", "motar", "mota", "motp", "achieved")


class FormatError(ValueError):
    """Malformed or mismatched artifact."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header(kind: str, cfg: RunConfig) -> str:
    return f"# alttrack {kind} v{VERSION}\n" + comment_block(cfg.to_text())


def _read(path, kind: str) -> tuple[RunConfig, list[str], list[str]]:
    """(embedded config, other comment lines, data lines)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != f"# alttrack {kind} v{VERSION}":
        raise FormatError(f"{path}: not an alttrack {kind} file (v{VERSION})")
    block = [ln for ln in lines if ln.startswith("#| ")]
    cfg = parse_config(strip_comment_block(block))
    notes = [ln for ln in lines[1:] if ln.startswith("#") and not ln.startswith("#| ")]
    data = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    return cfg, notes, data


def _write(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


# ------------------------------------------------------------------ scenarios


def scenario_line(frame: Frame) -> str:
    parts = [str(frame.index), *(fmt(v) for v in frame.ego.to_vector())]
    parts.append(str(len(frame.gt_ids)))
    for oid, box in zip(frame.gt_ids, frame.gt_boxes):
        parts.append(str(int(oid)))
        parts.extend(fmt(v) for v in box)
    dim = frame.obs_emb.shape[1] if frame.obs_emb.ndim == 2 else 0
    parts += [str(len(frame.obs_src)), str(dim)]
    for pos, emb, src in zip(frame.obs_pos, frame.obs_emb, frame.obs_src):
        parts.extend(fmt(v) for v in pos)
        parts.extend(fmt(v) for v in emb)
        parts.append(str(int(src)))
    return " ".join(parts)


def write_scenarios(path, logs: Sequence[ScenarioLog], cfg: RunConfig) -> None:
    """Several sequences go into one file, separated by ``# sequence k`` lines."""
    out = [_header("scenario", cfg), f"# sequences {len(logs)}\n"]
    for k, log in enumerate(logs):
        out.append(f"# sequence {k} seed {log.config.seed} frames {len(log.frames)}\n")
        out.extend(scenario_line(f) + "\n" for f in log.frames)
    _write(path, "".join(out))


def parse_scenario_line(line: str, obs_dim: int) -> Frame:
    tok = line.split()
    try:
        k = 0
        index = int(tok[k]); k += 1
        ego = EgoPose.from_vector([float(v) for v in tok[k:k + 4]]); k += 4
        n_gt = int(tok[k]); k += 1
        ids, boxes = [], []
        for _ in range(n_gt):
            ids.append(int(tok[k]))
            boxes.append([float(v) for v in tok[k + 1:k + 1 + BOX_DIM]])
            k += 1 + BOX_DIM
        n_obs, dim = int(tok[k]), int(tok[k + 1]); k += 2
        if n_obs and dim != obs_dim:
            raise FormatError(f"frame {index}: token width {dim} != configured obs_dim {obs_dim}")
        pos, emb, src = [], [], []
        for _ in range(n_obs):
            pos.append([float(v) for v in tok[k:k + 3]])
            emb.append([float(v) for v in tok[k + 3:k + 3 + dim]])
            src.append(int(tok[k + 3 + dim]))
            k += 4 + dim
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed scenario line: {exc}") from None
    if k != len(tok):
        raise FormatError(f"frame {index}: {len(tok) - k} trailing fields")
    return Frame(index, ego, np.array(ids, dtype=np.int64),
                 np.array(boxes, dtype=np.float64).reshape(-1, BOX_DIM),
                 np.array(pos, dtype=np.float64).reshape(-1, 3),
                 np.array(emb, dtype=np.float64).reshape(-1, obs_dim),
                 np.array(src, dtype=np.int64))


def read_scenarios(path) -> tuple[list[ScenarioLog], RunConfig]:
    cfg, _, _ = _read(path, "scenario")
    logs: list[ScenarioLog] = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.startswith("# sequence "):
            seed = int(ln.split()[4])
            logs.append(ScenarioLog(dataclasses.replace(cfg.scenario, seed=seed)))
        elif ln.strip() and not ln.startswith("#"):
            if not logs:
                raise FormatError(f"{path}: frame line before any '# sequence' line")
            logs[-1].frames.append(parse_scenario_line(ln, cfg.scenario.obs_dim))
    return logs, cfg


# -------------------------------------------------------------------- results


def write_results(path, per_sequence: Sequence[tuple[Sequence[TrackRecord], int]], cfg: RunConfig) -> None:
    """``per_sequence`` holds (records, number of frames) per tracked sequence."""
    out = [_header("results", cfg), f"# sequences {len(per_sequence)}\n"]
    for k, (records, n_frames) in enumerate(per_sequence):
        out.append(f"# sequence {k} frames {n_frames}\n")
        for r in sorted(records, key=lambda r: (r.frame, r.track_id)):
            out.append(" ".join([str(r.frame), str(r.track_id), *(fmt(v) for v in r.box), fmt(r.score)]) + "\n")
    _write(path, "".join(out))


def read_results(path) -> tuple[list[tuple[list[TrackRecord], int]], RunConfig]:
    cfg, _, _ = _read(path, "results")
    seqs: list[tuple[list[TrackRecord], int]] = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.startswith("# sequence "):
            seqs.append(([], int(ln.split()[4])))
        elif ln.strip() and not ln.startswith("#"):
            tok = ln.split()
            if len(tok) != 3 + BOX_DIM or not seqs:
                raise FormatError(f"{path}: malformed results line {ln[:60]!r}")
            frame = int(tok[0])
            if not 0 <= frame < seqs[-1][1]:
                raise FormatError(f"{path}: frame {frame} outside sequence of {seqs[-1][1]} frames")
            box = np.array([float(v) for v in tok[2:2 + BOX_DIM]])
            seqs[-1][0].append(TrackRecord(frame, int(tok[1]), box, float(tok[-1])))
    return seqs, cfg


# --------------------------------------------------------------------- report


def report_text(report: EvalReport, cfg: RunConfig) -> str:
    out = [_header("report", cfg)]
    for key, value in report.summary().items():
        out.append(f"{key}: {value if isinstance(value, (int, np.integer)) else fmt(value)}\n")
    out.append("curve: " + " ".join(CURVE_COLUMNS) + "\n")
    for c in report.curve:
        out.append(" ".join(fmt(v) for v in (c.target_recall, c.threshold, c.motar, c.mota,
                                              c.motp, c.recall)) + "\n")
    return "".join(out)


def write_report(path, report: EvalReport, cfg: RunConfig) -> None:
    _write(path, report_text(report, cfg))


def read_report(path) -> tuple[dict[str, float], list[CurvePoint]]:
    _, _, data = _read(path, "report")
    values: dict[str, float] = {}
    curve: list[CurvePoint] = []
    in_curve = False
    for ln in data:
        if ln.startswith("curve:"):
            in_curve = True
        elif in_curve:
            curve.append(CurvePoint(*(float(v) for v in ln.split())))
        else:
            key, raw = ln.split(":", 1)
            values[key.strip()] = float(raw)
    return values, curve


# ---------------------------------------------------------------- training log


def training_log_header(cfg: RunConfig) -> str:
    return _header("trainlog", cfg) + "# step lr total " + " ".join(TERMS) + "\n"


def training_log_line(step: int, report: LossReport, lr: float) -> str:
    summed = report.summed()
    return " ".join([str(step), fmt(lr), fmt(report.total), *(fmt(summed[t]) for t in TERMS)]) + "\n"


def read_training_log(path) -> np.ndarray:
    _, _, data = _read(path, "trainlog")
    return np.array([[float(v) for v in ln.split()] for ln in data]).reshape(-1, 3 + len(TERMS))


# ------------------------------------------------------------------- manifests


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, cfg: RunConfig, inputs: Iterable = (), outputs: Iterable = (),
                   extra: dict | None = None) -> None:
    """JSON manifest: command, config digest, seed and sha256 of every input and output file."""
    data = {
        "command": command,
        "config_digest": cfg.digest(),
        "seed": cfg.run.seed,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
    }
    if extra:
        data.update({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in extra.items()})
    _write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")
