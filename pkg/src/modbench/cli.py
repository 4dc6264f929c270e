"""Command-line client for the modbench service.

Without --server the CLI talks to an in-process instance of the service, so
every subcommand works offline; with --server (or MB_SERVER_URL) the same
requests go to a running deployment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

SERVER_ENV = "MB_SERVER_URL"


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _request(client: httpx.Client, method: str, path: str, **kwargs) -> dict:
    response = client.request(method, path, **kwargs)
    if response.status_code >= 400:
        try:
            detail = response.json()
        except ValueError:
            detail = response.text
        print(f"error ({response.status_code}): {detail}", file=sys.stderr)
        raise SystemExit(1)
    return response.json()


def cmd_variants(client: httpx.Client, args: argparse.Namespace) -> None:
    body = _request(client, "GET", "/v1/variants")
    if args.json:
        print(json.dumps(body, indent=2))
        return
    partition = body["partition"]
    for view in body["variants"]:
        print(f"{view['paradigm']}  {view['label']:32s}  {view['variant_id']}")
    print(
        f"total: {len(body['variants'])} "
        f"(p1={partition['p1']}, p2={partition['p2']}, p3={partition['p3']})"
    )


def cmd_mask(client: httpx.Client, args: argparse.Namespace) -> None:
    body = _request(
        client,
        "POST",
        "/v1/masks",
        json={
            "manifest_path": args.manifest,
            "target_kind": args.kind,
            "rate": args.rate,
            "seed": args.seed,
            "out_path": args.out,
        },
    )
    mask = body["mask"]
    print(
        f"masked {len(mask['masked_ids'])} of {body['eligible']} eligible samples "
        f"(kind={mask['target_kind']}, rate={mask['rate']}, seed={mask['seed']})"
    )
    if body.get("out_path"):
        print(f"wrote {body['out_path']}")
    elif args.json:
        print(json.dumps(mask, indent=2))


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            print(f"--set expects key=value, got {pair!r}", file=sys.stderr)
            raise SystemExit(2)
        key, value = pair.split("=", 1)
        overrides[key] = value
    return overrides


def cmd_run(client: httpx.Client, args: argparse.Namespace) -> None:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = _parse_overrides(args.set or [])
    if args.parallel is not None:
        overrides["parallel"] = str(args.parallel)
    body = _request(
        client,
        "POST",
        "/v1/runs",
        json={
            "config": config,
            "out_dir": args.out_dir,
            "overrides": overrides,
        },
    )
    summary = body["summary"]
    print(f"records: {body['records_path']}")
    print(
        f"pipeline={summary['pipeline_id']} kind={summary['target_kind']} "
        f"rate={summary['missing_rate']} records={summary['records']} errors={summary['errors']}"
    )
    if summary.get("aggregate_metrics"):
        print(f"aggregate metrics: {summary['aggregate_metrics']}")


def cmd_aggregate(client: httpx.Client, args: argparse.Namespace) -> None:
    body = _request(
        client,
        "POST",
        "/v1/aggregate",
        json={"results": args.results, "group_by": args.group_by.split(",")},
    )
    print(body["table"])
    if args.csv:
        Path(args.csv).write_text(body["csv"], encoding="utf-8")
        print(f"wrote {args.csv}")


def cmd_export_templates(client: httpx.Client, args: argparse.Namespace) -> None:
    body = _request(client, "POST", "/v1/templates/export", json={"out_dir": args.out})
    print(f"wrote {len(body['written'])} templates under {args.out}")


def cmd_mock_demo(client: httpx.Client, args: argparse.Namespace) -> None:
    body = _request(
        client, "POST", "/v1/mock-demo", json={"out_dir": args.out, "seed": args.seed}
    )
    print(body["table"])
    print(f"summary: {body['summary_path']}")


def cmd_serve(_client: httpx.Client, args: argparse.Namespace) -> None:
    import uvicorn

    uvicorn.run("modbench.service:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modbench", description="Missing-modality prediction engine"
    )
    parser.add_argument(
        "--server",
        default=os.environ.get(SERVER_ENV),
        help=f"base URL of a running service (default: in-process; env {SERVER_ENV})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("variants", help="list the 42 baseline variants")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("mask", help="simulate a missing-modality mask")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=["image", "text", "audio"])
    p.add_argument("--rate", required=True, type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the mask JSON here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="results root (default: config or MB_RESULTS_DIR)")
    p.add_argument("--parallel", type=int, help="sample-level worker count (default: config)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dot-path config override (e.g. pipeline.threshold=4.0)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="grouped means over result files")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--group-by", default="pipeline_id,missing_rate")
    p.add_argument("--csv", help="also write the CSV here")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("export-templates", help="write prompt templates to a directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_templates)

    p = sub.add_parser("mock-demo", help="zero-network end-to-end demo on bundled toy data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_mock_demo)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    if args.func is cmd_serve:
        cmd_serve(None, args)  # type: ignore[arg-type]
        return
    with _client(args.server) as client:
        args.func(client, args)


if __name__ == "__main__":
    main()
