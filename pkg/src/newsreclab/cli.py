"""Command-line entry point.

Subcommands: `ingest` raw logs into a sessionized dataset, `run` a full
temporal evaluation, `sweep-beta` the novelty regularization weight, and
`report` per-hour CSVs into tidy long format plus rendered figures.

Exit codes: 0 success, 1 usage, 2 data/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="newsreclab",
                     description="session-based news recommendation lab")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ingest = sub.add_parser("ingest", help="sessionize a raw click log")
    p_ingest.add_argument("--log", required=True, help="NDJSON click log")
    p_ingest.add_argument("--catalog", required=True, help="NDJSON article catalog")
    p_ingest.add_argument("--out", required=True, help="output dataset directory")

    p_run = sub.add_parser("run", help="run the temporal evaluation")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--profile", default=None,
                       help="bundled hyper-parameter profile")

    p_sweep = sub.add_parser("sweep-beta",
                             help="sweep the novelty regularization weight")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--betas", default="0,0.1,0.2,0.3,0.4,0.5",
                         help="comma-separated beta values")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--profile", default=None)

    p_report = sub.add_parser("report",
                              help="tidy long-format CSV and figures")
    p_report.add_argument("reports", nargs="+", help="per-hour report CSVs")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.add_argument("--no-plots", action="store_true",
                          help="skip figure rendering")
    return parser


def cmd_ingest(args):
    from .corpus import (compute_stats, parse_catalog, parse_click_log,
                         save_dataset, sessionize_log, Dataset)

    with open(args.log, encoding="utf-8") as fh:
        pairs = parse_click_log(fh)
    if not pairs:
        raise ValueError(f"click log {args.log!r} contains no records")
    with open(args.catalog, encoding="utf-8") as fh:
        articles = parse_catalog(fh)
    counters = {}
    sessions = sessionize_log(pairs, counters=counters)
    if not sessions:
        raise ValueError("no sessions survived preprocessing")
    missing = {c.article_id for s in sessions for c in s.clicks} - set(articles)
    if missing:
        raise ValueError(
            f"{len(missing)} clicked articles missing from catalog, "
            f"e.g. {sorted(missing)[:3]}"
        )
    dataset = Dataset(articles=articles, sessions=sessions)
    save_dataset(dataset, args.out)
    stats = compute_stats(sessions, articles)
    for name, count in sorted(counters.items()):
        log.info("preprocessing removed %s: %d", name, count)
    record = stats.as_dict()
    with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_run(args):
    from .config import execute_run, load_config
    from .nar_net import save_checkpoint

    cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                      out_dir=args.out)
    os.makedirs(cfg.out_dir, exist_ok=True)
    report, algorithms = execute_run(cfg)
    hourly = os.path.join(cfg.out_dir, "hourly.csv")
    summary = os.path.join(cfg.out_dir, "summary.csv")
    report.write_hourly(hourly)
    report.write_summary(summary)
    for alg in algorithms:
        if alg.name == "nar":
            save_checkpoint(alg.params, os.path.join(cfg.out_dir, "nar_model.npz"))
    log.info("wrote %s and %s", hourly, summary)
    print(hourly)
    return EXIT_OK


def cmd_sweep_beta(args):
    from .config import build_content_embeddings, build_dataset, load_config
    from .config import execute_run
    from .report import render_sweep_figure

    cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                      out_dir=args.out)
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip() != ""]
    except ValueError:
        raise ValueError(f"invalid --betas value {args.betas!r}")
    if not betas or any(b < 0 for b in betas):
        raise ValueError("betas must be a non-empty list of values >= 0")
    if "nar" not in {name for name, _ in cfg.algorithms}:
        raise ValueError("sweep-beta requires the 'nar' algorithm in the config")

    os.makedirs(cfg.out_dir, exist_ok=True)
    # the dataset and content embeddings are shared by every sweep point
    dataset = build_dataset(cfg)
    ace_repository = build_content_embeddings(cfg, dataset)
    cutoff = cfg.harness.cutoff
    columns = ["beta", f"MRR@{cutoff}", f"ESI-R@{cutoff}", f"COV@{cutoff}"]
    sweep_cfg = cfg
    sweep_cfg.algorithms = [(n, p) for n, p in cfg.algorithms if n == "nar"]
    rows = []
    for beta in betas:
        report, _ = execute_run(sweep_cfg, dataset=dataset,
                                ace_repository=ace_repository,
                                overrides={"nar": {"beta": beta}})
        row = {"beta": beta}
        for metric in columns[1:]:
            row[metric] = report.mean("nar", metric)
        rows.append(row)
        report.write_hourly(os.path.join(cfg.out_dir,
                                         f"hourly_beta_{beta:g}.csv"))
        log.info("beta=%g done: %s", beta,
                 {m: round(row[m], 4) for m in columns[1:]})
    sweep_path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[c]:.10g}" for c in columns) + "\n")
    render_sweep_figure(cfg.out_dir, rows, columns[1], columns[2])
    print(sweep_path)
    return EXIT_OK


def cmd_report(args):
    from .report import load_reports, render_metric_figures, tidy_rows, write_tidy

    reports = load_reports(args.reports)
    os.makedirs(args.out, exist_ok=True)
    tidy_path = os.path.join(args.out, "tidy.csv")
    write_tidy(tidy_path, tidy_rows(reports))
    if not args.no_plots:
        for path in render_metric_figures(args.out, reports):
            log.info("rendered %s", path)
    print(tidy_path)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "run": cmd_run,
    "sweep-beta": cmd_sweep_beta,
    "report": cmd_report,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    from .config import ConfigError
    from .corpus import ParseError

    try:
        return COMMANDS[args.command](args)
    except (ParseError, ConfigError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:
        log.exception("run failed")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
