"""Command-line entry point: ``alttrack <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import formats
from .config import ConfigError, RunConfig, comment_block, load_config, parse_config
from .numeric import DivergenceError, load_checkpoint, save_checkpoint
from .pipeline import ab_experiment, evaluate_many, evaluation_set, fit, track_all, training_set
from .simworld import scenario_stats
from .training import probe_loss

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3

log = logging.getLogger("alttrack")


def _config(args) -> RunConfig:
    if args.config:
        return load_config(args.config, args.set)
    return parse_config("", args.set)


def _out(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out) if args.out else Path(cfg.run.output_dir) / default


def _manifest(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    logs = training_set(cfg) if args.split == "train" else evaluation_set(cfg)
    out = _out(args, cfg, f"scenarios_{args.split}.txt")
    formats.write_scenarios(out, logs, cfg)
    totals = {k: 0 for k in ("frames", "objects", "gt_boxes", "tokens", "clutter_tokens")}
    for lg in logs:
        for k, v in scenario_stats(lg).items():
            totals[k] += v
    print(f"sequences {len(logs)} " + " ".join(f"{k} {v}" for k, v in totals.items()))
    formats.write_manifest(_manifest(out), "simulate", cfg, outputs=[out], extra={"split": args.split})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    inputs = []
    if args.scenarios:
        logs, _ = formats.read_scenarios(args.scenarios)
        inputs.append(args.scenarios)
    else:
        logs = training_set(cfg)
    out = _out(args, cfg, "model.ckpt")
    log_path = out.with_suffix(".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(formats.training_log_header(cfg))

        def on_step(step, report, lr):
            fh.write(formats.training_log_line(step, report, lr))
            if cfg.optim.log_every and step % cfg.optim.log_every == 0:
                log.info("step %d loss %.4f lr %.2e", step, report.total, lr)

        store, _ = fit(cfg, logs, on_step)
    save_checkpoint(out, store, cfg.to_text())
    probe = probe_loss(store, cfg, logs)
    print(f"trained {cfg.optim.steps} steps, probe loss {probe:.6g}, checkpoint {out}")
    formats.write_manifest(_manifest(out), "train", cfg, inputs=inputs, outputs=[out, log_path],
                           extra={"probe_loss": probe})
    return EXIT_OK


def cmd_track(args) -> int:
    store, text = load_checkpoint(args.checkpoint)
    cfg = parse_config(text, args.set)
    logs, scen_cfg = formats.read_scenarios(args.scenarios)
    cfg.scenario = scen_cfg.scenario
    out = _out(args, cfg, "results.txt")
    per_seq = track_all(store, cfg, logs)
    formats.write_results(out, [(recs, len(lg.frames)) for recs, lg in zip(per_seq, logs)], cfg)
    print(f"tracked {len(logs)} sequences, {sum(len(r) for r in per_seq)} records -> {out}")
    formats.write_manifest(_manifest(out), "track", cfg, inputs=[args.checkpoint, args.scenarios], outputs=[out])
    return EXIT_OK


def cmd_eval(args) -> int:
    seqs, cfg = formats.read_results(args.results)
    if args.set:
        cfg = parse_config(cfg.to_text(), args.set)
    logs, _ = formats.read_scenarios(args.scenarios)
    if len(seqs) != len(logs):
        raise formats.FormatError(f"results hold {len(seqs)} sequences, scenarios {len(logs)}")
    for k, ((_, n), lg) in enumerate(zip(seqs, logs)):
        if n != len(lg.frames):
            raise formats.FormatError(f"sequence {k}: results cover {n} frames, scenario has {len(lg.frames)}")
    report = evaluate_many([(recs, lg) for (recs, _), lg in zip(seqs, logs)], cfg)
    out = _out(args, cfg, "report.txt")
    formats.write_report(out, report, cfg)
    print(" ".join(f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}" for k, v in report.summary().items()))
    formats.write_manifest(_manifest(out), "eval", cfg, inputs=[args.results, args.scenarios], outputs=[out])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradaudit import audit_table, run_audit
    rows = run_audit(seed=args.seed, unroll_entries=args.unroll_entries)
    print(audit_table(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAILURE


def cmd_ab(args) -> int:
    cfg = _config(args)
    result = ab_experiment(cfg, on_row=lambda r: log.info("%s seed %d AMOTA %.4f IDS %d", r.variant, r.seed,
                                                          r.report.amota, r.report.ids))
    table = result.table()
    out = _out(args, cfg, "ab_report.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("# alttrack ab v1\n" + comment_block(cfg.to_text()) + table + "\n", encoding="utf-8")
    print(table)
    formats.write_manifest(_manifest(out), "ab", cfg, outputs=[out], extra={
        "mean_amota_base": result.mean_amota("base"), "mean_amota_aux": result.mean_amota("++"),
        "median_ids_base": result.median_ids("base"), "median_ids_aux": result.median_ids("++")})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alttrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="run config file ([section] / key = value)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help="output path (default: under run.output_dir)")
        return p

    p = with_config(sub.add_parser("simulate", help="write a scenario file"))
    p.add_argument("--split", choices=("train", "eval"), default="train")
    p.set_defaults(func=cmd_simulate)

    p = with_config(sub.add_parser("train", help="train a model and write a checkpoint"))
    p.add_argument("--scenarios", help="scenario file (default: generate the configured training set)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a scenario file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a results file against its scenario file")
    p.add_argument("--results", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every differentiable block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unroll-entries", type=int, default=4,
                   help="coordinates sampled per parameter in the full unroll")
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("ab", help="base vs auxiliary-token variant over several seeds"))
    p.set_defaults(func=cmd_ab)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
