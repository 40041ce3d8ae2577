"""Command-line interface.

Subcommands: ``decision-table`` (export the complete-data rule as CSV),
``simulate`` (run a campaign from a TOML config), ``report`` (render summary
tables from prior runs), ``whatif`` (one-shot decision distribution from a
tally file) and ``serve`` (start the conduct service).  Errors go to stderr
as single-line JSON; exit codes: 0 success, 1 runtime failure, 2 bad usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import mtpi2, simulator
from .toxmodel import MCMCConfig, SPosterior, TimeGrid, ToxData, pod, s_posterior, sample_posterior


def _fail(message: str, code: int = 1) -> int:
    sys.stderr.write(json.dumps({"error": message}) + "\n")
    return code


def cmd_decision_table(args) -> int:
    part = mtpi2.build_partition(args.pt, args.eps, args.eps2 if args.eps2 is not None else args.eps)
    table = mtpi2.decision_table(part, args.nmax)
    text = table.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _mcmc_from(cfg: dict, default_iter=1500, default_burn=500) -> MCMCConfig:
    return MCMCConfig(
        n_iter=int(cfg.get("n_iter", default_iter)),
        burn_in=int(cfg.get("burn_in", default_burn)),
    )


def cmd_simulate(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    with path.open("rb") as fp:
        cfg = tomllib.load(fp)
    campaign = cfg.get("campaign", {})
    setting = simulator.SETTINGS[int(campaign.get("setting", 1))]
    n_trials = int(campaign.get("n_trials", 100))
    seed = int(campaign.get("seed", 0))
    designs = tuple(campaign.get("designs", ["pod-tpi", "mtpi2"]))
    wanted = campaign.get("scenarios", "all")
    catalogue = {s.id: s for s in simulator.load_scenarios()}
    if wanted == "all":
        scenarios = list(catalogue.values())
    else:
        try:
            scenarios = [catalogue[int(i)] for i in wanted]
        except KeyError as exc:
            raise UsageError(f"unknown scenario id {exc.args[0]}") from None
    overrides = dict(cfg.get("design", {}))
    mcmc = _mcmc_from(cfg.get("mcmc", {}))

    out_dir = Path(args.out or "campaign-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = None
    if args.verbose:
        def echo(scn, design, idx):
            if idx == n_trials - 1:
                sys.stderr.write(f"scenario {scn.id} {design}: done\n")

    result = simulator.run_oc(
        scenarios, setting, n_trials, seed,
        designs=designs, mcmc=mcmc, overrides=overrides or None, progress=echo,
    )
    per_scenario = [m.row() for m in result.per_scenario()]
    _write_csv(out_dir / "metrics_per_scenario.csv", per_scenario)
    aggregate = result.aggregate()
    _write_csv(out_dir / "metrics_summary.csv", aggregate)
    _write_csv(
        out_dir / "inconsistencies.csv",
        [
            {k: row[k] for k in ("design", "ds", "de", "se", "sd", "ed", "es", "inconsistency_sum")}
            for row in aggregate
        ],
    )
    (out_dir / "campaign.json").write_text(
        json.dumps(
            {
                "config": cfg,
                "setting": setting.label,
                "n_trials": n_trials,
                "seed": seed,
                "scenarios": [s.id for s in scenarios],
                "true_mtd_convention": "argmin |p_d - p_T|, ties to the lower dose; "
                "no selection correct when all doses exceed p_T + eps2",
                "aggregate": aggregate,
            },
            indent=2,
        )
    )
    sys.stdout.write(f"wrote {out_dir}/metrics_per_scenario.csv and summaries\n")
    return 0


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=list(rows[0]), quoting=csv.QUOTE_MINIMAL)
        writer.writeheader()
        writer.writerows(rows)


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        doc = json.loads((Path(run) / "campaign.json").read_text())
        for row in doc["aggregate"]:
            rows.append({"run": Path(run).name, **row})
    if not rows:
        return _fail("no campaign outputs found")
    cols = ["run", "design", "pcs", "pca", "poa", "pos", "pot", "duration",
            "ds", "de", "se", "sd", "ed", "es", "inconsistency_sum"]
    widths = {c: max(len(c), 8) for c in cols}
    line = "  ".join(c.ljust(widths[c]) for c in cols)
    sys.stdout.write(line + "\n" + "-" * len(line) + "\n")
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append((f"{v:.1f}" if isinstance(v, float) else str(v)).ljust(widths[c]))
        sys.stdout.write("  ".join(cells) + "\n")
    return 0


def cmd_whatif(args) -> int:
    path = Path(args.tally)
    if not path.exists():
        raise UsageError(f"tally file not found: {path}")
    doc = json.loads(path.read_text())
    try:
        p_t = float(doc["p_t"])
        n, m = int(doc["n"]), int(doc["m"])
        follow_ups = [float(v) for v in doc.get("follow_ups", [])]
        dlt_times = [float(t) for t in doc.get("dlt_times", [])]
        tau = float(doc.get("tau", 28.0))
        k = int(doc.get("k", 3))
        eps1 = float(doc.get("eps1", 0.05))
        eps2 = float(doc.get("eps2", eps1))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid tally file: {exc}") from None
    grid = TimeGrid.equal_bins(tau, k)
    part = mtpi2.build_partition(p_t, eps1, eps2)
    r = len(follow_ups)
    if r == 0:
        s_post = SPosterior((1.0,))
        meta = {"n_draws": 0}
    else:
        if len(dlt_times) != n:
            raise UsageError("dlt_times must list one time per observed DLT")
        data = ToxData.from_counts(n, m, dlt_times, follow_ups, grid)
        mcmc = MCMCConfig(
            n_iter=int(doc.get("n_iter", 3000)),
            burn_in=int(doc.get("burn_in", 1000)),
            seed=int(doc.get("seed", 0)),
        )
        theta = ((float(doc.get("theta1", 1.0)), float(doc.get("theta2", 1.0))),)
        eta = tuple(float(x) for x in doc.get("eta", [1.0] * k))
        draws = sample_posterior(data, theta, eta, mcmc)
        if args.dump_draws:
            _dump_draws(Path(args.dump_draws), draws)
        s_post = s_posterior(draws, 1, follow_ups, grid)
        meta = {"n_draws": draws.n_draws, "seed": mcmc.seed}
    dist = pod(s_post, n, m, r, lambda a, b: mtpi2.decide(a, b, part))
    out = {
        "gamma": {str(a): dist.gamma[a] for a in (-1, 0, 1)},
        "a_star": int(dist.a_star),
        "s_pmf": list(s_post.pmf),
        "s_decisions": [int(d) for d in dist.s_decisions],
        **meta,
    }
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return 0


def _dump_draws(path: Path, draws) -> None:
    """Sampler audit trail: one row per kept iteration."""
    d, k = draws.p.shape[1], draws.w.shape[1]
    header = ["iter", *(f"p_{i + 1}" for i in range(d)), *(f"w_{i + 1}" for i in range(k))]
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for it in range(draws.n_draws):
            writer.writerow(
                [it, *(repr(float(x)) for x in draws.p[it]), *(repr(float(x)) for x in draws.w[it])]
            )


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, token=args.token)
    if args.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui_dir, html=True), name="ui")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podtpi")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decision-table", help="export the complete-data decision rule as CSV")
    p.add_argument("--pt", type=float, required=True, help="target DLT probability")
    p.add_argument("--eps", type=float, default=0.05, help="equivalence half-width (eps1)")
    p.add_argument("--eps2", type=float, default=None, help="upper half-width, defaults to --eps")
    p.add_argument("--nmax", type=int, default=12, help="largest n + m to tabulate")
    p.add_argument("-o", "--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_decision_table)

    p = sub.add_parser("simulate", help="run a simulation campaign from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default campaign-out)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="tabulate aggregate metrics from prior runs")
    p.add_argument("runs", nargs="+", help="campaign output directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("whatif", help="one-shot decision distribution from a JSON tally file")
    p.add_argument("tally", help="JSON file with p_t, n, m, follow_ups, dlt_times, ...")
    p.add_argument("--dump-draws", help="write posterior draws here as CSV (iter,p_*,w_*)")
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("serve", help="start the trial-conduct HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8445)
    p.add_argument("--data-dir", default="./trials")
    p.add_argument("--token", default=None, help="require this bearer token on /trials routes")
    p.add_argument("--ui-dir", default=None, help="serve a built dashboard from this directory")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # runtime failure -> exit 1, single-line JSON
        sys.stderr.write(json.dumps({"error": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
