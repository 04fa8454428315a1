"""Command line entry points: the `simbench` evaluation bench and the API server."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .llm import MockScript, ProviderConfig
from .simbench import (
    RunRecord,
    TokenUsage,
    build_report,
    load_corpus,
    report_json,
    run_simulation,
    token_scaling_curve,
)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="simbench", description="Tourist-Guide simulation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the full pipeline over a goal corpus")
    run_p.add_argument("--corpus", required=True, help="path to goals.json")
    run_p.add_argument("--runs", type=int, default=1)
    run_p.add_argument("--mode", choices=["mock", "live"], default="mock")
    run_p.add_argument("--rotation", default="", help="comma-separated services to keep offline")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", default="report.json")
    run_p.add_argument("--records", default=None, help="also dump per-run records here")
    run_p.add_argument("--sample-one", action="store_true", help="each run samples one goal")
    run_p.add_argument("--work-dir", default=None)
    run_p.add_argument("--no-noise", action="store_true", help="scripted runs identify exactly the ground truth")

    score_p = sub.add_parser("score", help="recompute a report from saved records")
    score_p.add_argument("--in", dest="records_in", required=True)
    score_p.add_argument("--out", default=None)

    curve_p = sub.add_parser("curve", help="token scaling vs registry size")
    curve_p.add_argument("--max-services", type=int, default=9)
    curve_p.add_argument("--goal", default="I have 3 hours to explore Hyderabad's old charm")
    curve_p.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        corpus = load_corpus(args.corpus)
        rotation = [s for s in args.rotation.split(",") if s]
        provider = ProviderConfig(mode=args.mode) if args.mode == "mock" else ProviderConfig.from_env()
        records = run_simulation(
            corpus,
            n_runs=args.runs,
            provider=provider,
            rotation=rotation,
            seed=args.seed,
            sample_one=args.sample_one,
            work_dir=args.work_dir,
            noise=not args.no_noise,
        )
        report = build_report(records, seed=args.seed, rotation=rotation)
        Path(args.out).write_text(report_json(report))
        if args.records:
            Path(args.records).write_text(
                json.dumps([r.to_json() for r in records], indent=2, sort_keys=True)
            )
        print(f"wrote {args.out}: {report['records']} records, {report['errors']} errors")
        return 0

    if args.command == "score":
        raw = json.loads(Path(args.records_in).read_text())
        records = []
        for d in raw:
            rec = RunRecord(
                goal_id=d["goal_id"],
                run_index=d["run_index"],
                category=d["category"],
                identified=d.get("identified", []),
                truth_services=d.get("truth_services", []),
                truth_params=d.get("truth_params", {}),
                usage=TokenUsage.from_json(d.get("usage", {})),
                durations=d.get("durations", {}),
                generation=d.get("generation", []),
                app_sections=d.get("app_sections", 0),
                error=d.get("error"),
            )
            records.append(rec)
        report = build_report(records)
        text = report_json(report)
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text)
        return 0

    if args.command == "curve":
        series = token_scaling_curve(range(0, args.max_services + 1), args.goal)
        payload = [{"n_services": n, "input_tokens": t} for n, t in series]
        text = json.dumps(payload, indent=2)
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text)
        return 0

    return 1


def serve_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="goalforge-server", description="Run the HTTP gateway")
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--mode", choices=["mock", "live"], default=None)
    parser.add_argument("--mock-script", default=None, help="JSON mock script for dialogue sessions")
    parser.add_argument("--frontend", default=None, help="directory of built UI assets to serve at /ui")
    args = parser.parse_args(argv)

    import uvicorn

    from .api import create_app
    from .engine import Engine

    provider = ProviderConfig(mode=args.mode) if args.mode else ProviderConfig.from_env()
    script = MockScript.load(args.mock_script) if args.mock_script else None
    if provider.mode == "mock" and script is None:
        print("mock mode needs --mock-script", file=sys.stderr)
        return 2
    engine = Engine(data_dir=args.data_dir, provider=provider, script=script)
    app = create_app(engine, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
