"""Command-line interface: plan, pilot, run, analyze, qrp, report.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every output file
embeds the protocol hash, master seed and any overrides.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__, analysis, engine, iohub, qrp
from .datagen import CANONICAL_TWEAK, TweakConfig, build_scenario_grid, parse_scenario_id


def _add_common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--protocol", type=Path, default=None,
                   help="protocol TOML (default: bundled full-scale protocol)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    if out:
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--scenarios", type=str, default=None,
                   help="scenario filter, e.g. 'rho==0.95 & prev==0.05 & n<=500'")
    p.add_argument("--replications", type=int, default=None,
                   help="override B (recorded as a protocol deviation)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predbench",
        description="Monte Carlo benchmarking engine for binary prediction methods",
    )
    parser.add_argument("--version", action="version", version=f"predbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the scenario grid and replication count")
    _add_common(p, out=False)

    p = sub.add_parser("pilot", help="run the pilot and print the implied V and B")
    _add_common(p)

    p = sub.add_parser("run", help="execute the study, writing NDJSON records")
    _add_common(p)

    p = sub.add_parser("analyze", help="summaries, contrasts and rankings as CSV")
    _add_common(p)
    p.add_argument("--records", type=Path, default=None,
                   help="records NDJSON (default: OUT/records.ndjson)")

    p = sub.add_parser("qrp", help="apply QRP transformations with an audit trail")
    _add_common(p)
    p.add_argument("--records", type=Path, default=None)
    p.add_argument("--remove", action="append", default=[], metavar="METHOD",
                   help="E3: remove a competitor (repeatable)")
    p.add_argument("--filter", dest="report_filter", type=str, default=None,
                   help="R2: keep only scenarios matching this condition, e.g. 'epv<=1'")
    p.add_argument("--tweak-canonical", action="store_true",
                   help="E2: apply the canonical altered DGP (sparsity 0.1, quadratic effect)")
    p.add_argument("--tweak-sparsity", type=float, default=None)
    p.add_argument("--tweak-nonlinear", action="store_true")
    p.add_argument("--tweak-scale", type=float, default=1.0)
    p.add_argument("--rerun", action="store_true",
                   help="rerun the study under the tweaked DGP (required with a tweak)")
    p.add_argument("--seed-hunt", type=str, default=None, metavar="SEEDS",
                   help="E8: comma-separated candidate master seeds")
    p.add_argument("--optional-stopping", action="store_true",
                   help="E7: grow B until the objective CI excludes zero")
    p.add_argument("--scenario", type=str, default=None,
                   help="scenario id for E7/E8 (default: first scenario of the grid)")
    p.add_argument("--objective", type=str, default=qrp.DEFAULT_OBJECTIVE)
    p.add_argument("--small-b", type=int, default=10, help="replications per E8 candidate")
    p.add_argument("--step", type=int, default=10, help="E7 increment")
    p.add_argument("--max-b", type=int, default=100, help="E7 cap")

    p = sub.add_parser("report", help="figure plot data (differences with adjusted CIs)")
    _add_common(p)
    p.add_argument("--records", type=Path, default=None)
    p.add_argument("--condition", type=str, default="rho==0.95 & prev==0.05",
                   help="condition filter for the reported cells")
    p.add_argument("--competitors", type=str, default="RF,GLM,EN,AEN",
                   help="comma-separated competitor list")
    return parser


def _load_protocol(args) -> engine.StudyProtocol:
    path = args.protocol if args.protocol is not None else iohub.bundled_protocol_path()
    protocol = iohub.parse_protocol(path)
    if args.seed is not None:
        protocol = dataclasses.replace(protocol, master_seed=args.seed)
    if getattr(args, "replications", None) is not None:
        protocol = dataclasses.replace(
            protocol, plan=protocol.plan.with_replications(args.replications)
        )
    return protocol


def _scenario_predicate(args):
    if args.scenarios is None:
        return None
    pred = iohub.parse_filter(args.scenarios)
    return lambda sc: pred(parse_scenario_id(sc.scenario_id))


def _metadata(protocol, args, extra=None) -> dict:
    meta = {
        "protocol_hash": iohub.protocol_hash(protocol),
        "master_seed": protocol.master_seed,
        "software_version": __version__,
        "overrides": {
            "seed": args.seed,
            "scenarios": args.scenarios,
            "replications": getattr(args, "replications", None),
        },
    }
    if extra:
        meta.update(extra)
    return meta


def _records_path(args) -> Path:
    if getattr(args, "records", None) is not None:
        return args.records
    return args.out / "records.ndjson"


def _cmd_plan(args) -> int:
    protocol = _load_protocol(args)
    grid = build_scenario_grid(protocol.grid)
    pred = _scenario_predicate(args)
    if pred is not None:
        grid = [s for s in grid if pred(s)]
    plan = protocol.plan
    print(f"protocol hash: {iohub.protocol_hash(protocol)}")
    print(f"master seed: {protocol.master_seed}")
    print(f"{len(grid)} scenarios")
    print(f"methods: {', '.join(protocol.methods)}")
    if plan.V is not None and plan.target_mcse is not None:
        print(f"B = {plan.B} (V={plan.V:g}, n_test={plan.n_test}, "
              f"target MCSE={plan.target_mcse:g})")
    else:
        print(f"B = {plan.B}" + (" (explicit override)" if plan.overridden else ""))
    dims = sorted({s.p for s in grid})
    print(f"dimensions p: {dims[0]}..{dims[-1]}" if dims else "dimensions p: none")
    return 0


def _cmd_pilot(args) -> int:
    protocol = _load_protocol(args)
    pilot_protocol = dataclasses.replace(
        protocol, plan=protocol.plan.with_replications(protocol.plan.pilot_B)
    )
    args.out.mkdir(parents=True, exist_ok=True)
    sink_path = args.out / "pilot_records.ndjson"
    with iohub.RecordSink(sink_path, mode="w") as sink:
        result = engine.run_study(pilot_protocol, sink=sink, workers=args.workers,
                                  scenario_filter=_scenario_predicate(args))
    V = engine.estimate_worst_case_variance(result.records)
    print(f"pilot records: {sink_path}")
    print(f"worst-case variance V = {V:g}")
    if V == 0.0:
        print("pilot shows zero variance; sizing formula undefined", file=sys.stderr)
        return 2
    target = protocol.plan.target_mcse or 0.0001
    B = engine.compute_required_replications(V, protocol.grid.n_test, target)
    print(f"implied B = {B} at target MCSE {target:g} with n_test {protocol.grid.n_test}")
    (args.out / "pilot_metadata.json").write_text(
        json.dumps(_metadata(protocol, args, {"V": V, "implied_B": B}), indent=2)
    )
    return 0


def _cmd_run(args) -> int:
    protocol = _load_protocol(args)
    args.out.mkdir(parents=True, exist_ok=True)
    sink_path = args.out / "records.ndjson"
    with iohub.RecordSink(sink_path, mode="w") as sink:
        result = engine.run_study(protocol, sink=sink, workers=args.workers,
                                  scenario_filter=_scenario_predicate(args))
    meta = _metadata(protocol, args, result.metadata)
    (args.out / "metadata.json").write_text(json.dumps(meta, indent=2))
    iohub.write_csv(args.out / "failures.csv", result.failure_rows,
                    metadata={"protocol_hash": meta["protocol_hash"],
                              "master_seed": meta["master_seed"]})
    flagged = [r for r in result.failure_rows if r["flagged"]]
    print(f"records: {sink_path} ({len(result.records)} rows)")
    if flagged:
        print(f"WARNING: {len(flagged)} (scenario, method) cells exceed the 10% "
              "failure threshold; see failures.csv")
    return 0


def _analysis_metadata(records, args) -> dict:
    meta = {"software_version": __version__,
            "overrides": {"scenarios": args.scenarios}}
    if records:
        seeds = records[0].seeds
        meta["protocol_hash"] = seeds.get("protocol_hash", "unknown")
        meta["master_seed"] = seeds.get("master_seed", "unknown")
    return meta


def _cmd_analyze(args) -> int:
    records = iohub.read_records(_records_path(args))
    if not records:
        raise ValueError("no records to analyze")
    meta = _analysis_metadata(records, args)
    args.out.mkdir(parents=True, exist_ok=True)
    estimands = ("bs", "bs_scaled", "ls", "auc", "calib_a", "calib_b", "bs_corrected")
    summary_rows = []
    for est in estimands:
        summary_rows.extend(analysis.summarize(records, est))
    iohub.write_csv(args.out / "summary.csv", summary_rows, metadata=meta)
    contrasts = analysis.pairwise_contrasts(records, estimand="bs")
    iohub.write_csv(args.out / "contrasts.csv", contrasts, metadata=meta)
    ranked = analysis.rank_by_pvalue(contrasts)
    iohub.write_csv(args.out / "ranking.csv", ranked, metadata=meta)
    failure_rows = engine.failure_report(records)
    iohub.write_csv(args.out / "failures.csv", failure_rows, metadata=meta)
    print(f"wrote summary.csv, contrasts.csv, ranking.csv, failures.csv to {args.out}")
    return 0


def _tweak_from_args(args):
    if args.tweak_canonical:
        return CANONICAL_TWEAK
    if args.tweak_sparsity is not None or args.tweak_nonlinear:
        return TweakConfig(
            sparsity=args.tweak_sparsity if args.tweak_sparsity is not None else 1.0,
            nonlinear=args.tweak_nonlinear,
            nonlinear_scale=args.tweak_scale,
        )
    return None


def _cmd_qrp(args) -> int:
    protocol = _load_protocol(args)
    args.out.mkdir(parents=True, exist_ok=True)
    audit: list = []
    tweak = _tweak_from_args(args)

    if args.seed_hunt or args.optional_stopping:
        grid = build_scenario_grid(protocol.grid)
        if args.scenario is not None:
            matching = [s for s in grid if s.scenario_id == args.scenario]
            if not matching:
                raise ValueError(f"scenario {args.scenario!r} not in the grid")
            scenario = matching[0]
        else:
            scenario = grid[0]
        if args.seed_hunt:
            seeds = [int(s) for s in args.seed_hunt.split(",") if s.strip()]
            result = qrp.seed_hunt(scenario, protocol, seeds, objective=args.objective,
                                   small_B=args.small_b, workers=args.workers)
            audit.append(result.audit)
            rows = [{"seed": s, "objective": v, "n_units": n} for s, v, n in result.trace]
            iohub.write_csv(args.out / "seed_hunt.csv", rows,
                            metadata=_metadata(protocol, args))
            print(f"seed hunt: best seed {result.best_seed} (full trace in seed_hunt.csv)")
        if args.optional_stopping:
            result = qrp.optional_stopping_trace(
                scenario, protocol, step=args.step, max_B=args.max_b,
                objective=args.objective, workers=args.workers,
            )
            audit.append(result.audit)
            iohub.write_csv(args.out / "optional_stopping.csv", result.trace,
                            metadata=_metadata(protocol, args))
            print(result.note)
            print(f"optional stopping: "
                  + (f"stopped at B={result.b_stop}" if result.b_stop else "never stopped"))
        _write_audit(args.out, audit)
        return 0

    if tweak is not None:
        protocol = qrp.apply_alter_dgp(protocol, tweak, audit)
        if not args.rerun:
            raise ValueError("a DGP tweak changes the data: pass --rerun to execute it")
    if args.rerun:
        sink_path = args.out / "qrp_records_raw.ndjson"
        with iohub.RecordSink(sink_path, mode="w") as sink:
            result = engine.run_study(protocol, sink=sink, workers=args.workers,
                                      scenario_filter=_scenario_predicate(args))
        records = result.records
    else:
        records = iohub.read_records(_records_path(args))
    if not records:
        raise ValueError("no records to transform")

    if args.remove:
        records = qrp.apply_remove_competitor(records, args.remove, audit)
    if args.report_filter is not None:
        records = qrp.apply_selective_report(
            records, iohub.parse_filter(args.report_filter), audit
        )

    out_records = args.out / "qrp_records.ndjson"
    with iohub.RecordSink(out_records, mode="w") as sink:
        for rec in records:
            sink.append(rec)
    contrasts = analysis.pairwise_contrasts(records, estimand="bs")
    iohub.write_csv(args.out / "qrp_contrasts.csv", contrasts,
                    metadata=_metadata(protocol, args, {"qrp_actions": len(audit)}))
    _write_audit(args.out, audit)
    print(f"QRP records: {out_records} ({len(records)} rows), "
          f"audit trail: {args.out / 'audit.json'}")
    return 0


def _write_audit(out: Path, audit: list) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "audit.json").write_text(
        json.dumps([a.as_dict() for a in audit], indent=2)
    )


def _cmd_report(args) -> int:
    records = iohub.read_records(_records_path(args))
    if not records:
        raise ValueError("no records to report on")
    condition = iohub.parse_filter(args.condition)
    competitors = [c.strip() for c in args.competitors.split(",") if c.strip()]
    present = {rec.method for rec in records}
    competitors = [c for c in competitors if c in present]
    rows = analysis.figure2_table(records, condition, competitors)
    meta = _analysis_metadata(records, args)
    meta["condition"] = args.condition
    args.out.mkdir(parents=True, exist_ok=True)
    iohub.write_csv(args.out / "figure2.csv", rows, metadata=meta)
    print(f"wrote {len(rows)} plot-data rows to {args.out / 'figure2.csv'}")
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "pilot": _cmd_pilot,
    "run": _cmd_run,
    "analyze": _cmd_analyze,
    "qrp": _cmd_qrp,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
