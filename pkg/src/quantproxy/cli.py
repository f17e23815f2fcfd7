"""Command-line client for the discovery service.

Every subcommand is a thin wrapper over one service endpoint. By default the
requests run against an in-process instance of the FastAPI app; pass
--server to target a running `uvicorn quantproxy.service:app` instead.

Exit codes: 0 success, 1 usage, 2 input data error, 3 infeasible compression
target, 4 endpoint failure without fallback.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3
EXIT_ENDPOINT = 4

_CODE_TO_EXIT = {"usage": EXIT_USAGE, "data": EXIT_DATA,
                 "infeasible": EXIT_INFEASIBLE, "endpoint": EXIT_ENDPOINT}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the exit-code contract wants 1.
    def error(self, message):
        raise CliError(f"usage: {message}", EXIT_USAGE)


class ServiceClient:
    """HTTP calls against either a remote server or the in-process app."""

    def __init__(self, server: str | None = None):
        self.server = server
        self._app = None
        if server is None:
            from .service import create_app
            self._app = create_app()

    def request(self, method: str, path: str, payload=None, params=None):
        if self.server is not None:
            with httpx.Client(base_url=self.server, timeout=600.0) as client:
                resp = client.request(method, path, json=payload, params=params)
            return resp.status_code, resp.json()

        async def _go():
            # raise_app_exceptions=False keeps in-process behavior identical
            # to a remote server: unexpected faults surface as status 500.
            transport = httpx.ASGITransport(app=self._app,
                                            raise_app_exceptions=False)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://service",
                                         timeout=600.0) as client:
                resp = await client.request(method, path, json=payload,
                                            params=params)
                return resp.status_code, resp.json()
        return asyncio.run(_go())

    def call(self, method: str, path: str, payload=None, params=None) -> dict:
        try:
            status, body = self.request(method, path, payload, params)
        except httpx.HTTPError as e:
            raise CliError(f"cannot reach service: {e}", EXIT_ENDPOINT) from None
        if status == 200:
            return body
        error = (body or {}).get("error")
        if isinstance(error, dict):
            raise CliError(error.get("message", "request failed"),
                           _CODE_TO_EXIT.get(error.get("code"), EXIT_DATA))
        if isinstance(body, dict) and "detail" in body:
            raise CliError(str(body["detail"]), EXIT_USAGE)
        raise CliError(f"service returned status {status}", EXIT_DATA)


class Output:
    def __init__(self, fmt: str, quiet: bool):
        self.fmt = fmt
        self.quiet = quiet

    def record(self, kind: str, **fields):
        """One machine-format line: stable field order, JSON-encoded."""
        if self.fmt == "machine":
            print(json.dumps({"record": kind, **fields}))

    def text(self, line: str = ""):
        if self.fmt == "text" and not self.quiet:
            print(line)


def _read_proxy(value: str) -> str:
    if value is not None and os.path.exists(value):
        with open(value, "r", encoding="utf-8") as fh:
            return fh.read().strip()
    return value


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_score(args, client: ServiceClient, out: Output) -> int:
    if args.dump_stats:
        body = client.call("POST", "/stats", {"model_path": args.model,
                                              "calib_path": args.calib})
        for layer in body["layers"]:
            out.record("layer_stats", **layer)
            out.text("  ".join(f"{k}={v}" for k, v in layer.items()))
        return EXIT_OK
    if not args.proxy:
        raise CliError("usage: --proxy is required unless --dump-stats", EXIT_USAGE)
    payload = {"proxy": _read_proxy(args.proxy), "model_path": args.model,
               "calib_path": args.calib, "stats_path": args.stats}
    body = client.call("POST", "/score", payload)
    out.text(f"proxy: {body['proxy']}")
    for row in body["scores"]:
        out.record("score", layer=row["layer"], score=row["score"],
                   warning=row["warning"])
        flag = "  [guarded]" if row["warning"] else ""
        out.text(f"layer {row['layer']}: {row['score']:.6g}{flag}")
    return EXIT_OK


def cmd_allocate(args, client: ServiceClient, out: Output) -> int:
    payload = {
        "target_compression": args.target_compression,
        "scores_path": args.scores,
        "model_path": args.model,
        "calib_path": args.calib,
        "stats_path": args.stats,
        "proxy": _read_proxy(args.proxy) if args.proxy else None,
        "activation_bits": args.activation_bits,
    }
    body = client.call("POST", "/allocate", payload)
    assignment = body["assignment"]
    out.record("assignment", **assignment)
    out.record("cost", **body["cost"])
    out.text(f"activation bits: {assignment['activation_bits']}")
    for entry in assignment["layers"]:
        out.text(f"layer {entry['index']}: {entry['bits']} bits")
    ratio = body["cost"]["compression_percent"]
    out.text(f"compression: {ratio:.2f}%  param_bits: {body['cost']['param_bits']}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(assignment, fh, indent=2)
            fh.write("\n")
        out.text(f"assignment written to {args.out}")
    return EXIT_OK


def cmd_quantize(args, client: ServiceClient, out: Output) -> int:
    payload = {"model_path": args.model, "assignment_path": args.bits,
               "data_path": args.data, "calib_path": args.calib}
    body = client.call("POST", "/quantize", payload)
    out.record("quantized", accuracy=body["accuracy"], **body["cost"])
    out.text(f"accuracy: {body['accuracy']:.4f}")
    out.text(f"compression: {body['cost']['compression_percent']:.2f}%  "
             f"param_bits: {body['cost']['param_bits']}  "
             f"bops: {body['cost']['bops']}")
    return EXIT_OK


def cmd_eval_proxy(args, client: ServiceClient, out: Output) -> int:
    payload = {"proxy": _read_proxy(args.proxy), "model_path": args.model,
               "calib_path": args.calib, "eval_path": args.eval,
               "target_compression": args.target_compression,
               "alpha": args.alpha, "probe_bits": args.probe_bits}
    body = client.call("POST", "/eval-proxy", payload)
    out.record("eval_proxy", proxy=body["proxy"], rho_sens=body["rho_sens"],
               acc_quant=body["acc_quant"], phi=body["phi"],
               warnings=body["warnings"])
    if body["assignment"]:
        out.record("assignment", **body["assignment"])
    out.text(f"proxy: {body['proxy']}")
    out.text(f"rho_sens: {body['rho_sens']:.4f}  acc_quant: "
             f"{body['acc_quant']:.4f}  phi: {_fmt(body['phi'])}")
    for w in body["warnings"]:
        out.text(f"warning: {w}")
    return EXIT_OK


def cmd_baselines(args, client: ServiceClient, out: Output) -> int:
    payload = {"model_path": args.model, "calib_path": args.calib,
               "eval_path": args.eval,
               "target_compression": args.target_compression,
               "alpha": args.alpha, "probe_bits": args.probe_bits,
               "seed": args.seed if args.seed is not None else 0}
    body = client.call("POST", "/baselines", payload)
    out.text(f"{'name':<20} {'rho_sens':>9} {'acc':>7} {'phi':>9}  bits")
    for row in body["rows"]:
        out.record("baseline", **row)
        bits = ",".join(str(b) for b in row["weight_bits"] or [])
        out.text(f"{row['name']:<20} {row['rho_sens']:>9.4f} "
                 f"{row['acc_quant']:>7.4f} {_fmt(row['phi']):>9}  {bits}")
    return EXIT_OK


def cmd_discover(args, client: ServiceClient, out: Output) -> int:
    config: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as e:
            raise CliError(f"cannot read config: {e}", EXIT_DATA) from None
        except json.JSONDecodeError as e:
            raise CliError(f"config is not valid JSON: {e}", EXIT_DATA) from None
    overrides = {
        "model_path": args.model, "calib_path": args.calib,
        "eval_path": args.eval, "run_dir": args.run_dir, "seed": args.seed,
        "generator_mode": args.mode,
        "target_compression": args.target_compression, "jobs": args.jobs,
    }
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    if config.get("jobs") is None:
        config["jobs"] = os.cpu_count() or 1
    missing = [k for k in ("model_path", "calib_path", "eval_path", "run_dir")
               if not config.get(k)]
    if missing:
        raise CliError(f"usage: missing config fields {missing}", EXIT_USAGE)
    body = client.call("POST", "/discover", {"config": config})
    best = body["best"]
    out.record("best", **{k: best[k] for k in
                          ("id", "origin", "expr", "rho_sens", "acc_quant",
                           "phi", "birth_generation")})
    if best.get("assignment"):
        out.record("assignment", **best["assignment"])
    out.record("series", best_phi=body["best_phi_series"])
    out.record("population", ids=body["final_population"])
    out.text(f"best proxy ({best['id']}, born generation "
             f"{best['birth_generation']}, via {best['origin']}):")
    out.text(f"  {best['expr']}")
    out.text(f"  rho_sens={best['rho_sens']:.4f} acc_quant={best['acc_quant']:.4f} "
             f"phi={best['phi']}")
    if best.get("assignment"):
        bits = ",".join(str(e["bits"]) for e in best["assignment"]["layers"])
        out.text(f"  bit assignment: [{bits}] "
                 f"@ activation {best['assignment']['activation_bits']}")
    out.text(f"best-phi series: {body['best_phi_series']}")
    if body["fallback_generations"]:
        out.text(f"offline fallback used in generations: "
                 f"{body['fallback_generations']}")
    return EXIT_OK


def cmd_report(args, client: ServiceClient, out: Output) -> int:
    if not args.run_dir:
        raise CliError("usage: --run-dir is required", EXIT_USAGE)
    body = client.call("GET", "/report", params={"run_dir": args.run_dir})
    out.record("report", run_dir=body["run_dir"], partial=body["partial"],
               generations=body["generations"],
               candidates=body["candidates_logged"],
               sentinels=body["sentinel_candidates"])
    out.text(f"run: {body['run_dir']}")
    out.text(f"status: {'PARTIAL (aborted)' if body['partial'] else 'complete'}")
    out.text(f"generations logged: {body['generations']}  candidates: "
             f"{body['candidates_logged']}  contract violations: "
             f"{body['sentinel_candidates']}")
    result = body.get("result")
    if result:
        out.record("best", **result["best"])
        out.text(f"best: {result['best']['expr']}  phi={result['best']['phi']}")
        out.text(f"series: {result['best_phi_series']}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="quantproxy",
                     description="Sensitivity-proxy discovery for "
                                 "mixed-precision quantization")
    parser.add_argument("--server", default=None,
                        help="URL of a running service; default runs in-process")
    parser.add_argument("--format", choices=("text", "machine"), default="text")
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--run-dir", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_eval(p):
        p.add_argument("--model", required=True)
        p.add_argument("--calib", required=True)
        p.add_argument("--eval", default=None)
        p.add_argument("--target-compression", type=float, default=0.8)
        p.add_argument("--alpha", type=float, default=0.1)
        p.add_argument("--probe-bits", type=int, default=2)

    p = sub.add_parser("score", help="evaluate a proxy's per-layer scores")
    p.add_argument("--proxy")
    p.add_argument("--model")
    p.add_argument("--calib")
    p.add_argument("--stats", help="stats file instead of model+calib")
    p.add_argument("--dump-stats", action="store_true",
                   help="print the computed layer statistics instead")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("allocate", help="map scores to a bit assignment")
    p.add_argument("--scores", help="JSON file with per-layer scores")
    p.add_argument("--proxy", help="derive scores from this expression")
    p.add_argument("--model")
    p.add_argument("--calib")
    p.add_argument("--stats")
    p.add_argument("--target-compression", type=float, required=True)
    p.add_argument("--activation-bits", type=int, default=8)
    p.add_argument("--out", help="write the assignment JSON here")
    p.set_defaults(fn=cmd_allocate)

    p = sub.add_parser("quantize", help="accuracy and cost of an assignment")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", required=True, help="assignment JSON file")
    p.add_argument("--data", required=True)
    p.add_argument("--calib", default=None,
                   help="calibration set for activation ranges (default: data)")
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("eval-proxy", help="full fitness pipeline for one proxy")
    p.add_argument("--proxy", required=True)
    common_eval(p)
    p.set_defaults(fn=cmd_eval_proxy)

    p = sub.add_parser("baselines", help="evaluate the reference proxies")
    common_eval(p)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_baselines)

    p = sub.add_parser("discover", help="run the evolutionary search")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--model")
    p.add_argument("--calib")
    p.add_argument("--eval")
    # SUPPRESS keeps the global --seed/--run-dir values when the
    # subcommand-level flag is not given
    p.add_argument("--run-dir", default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--mode", choices=("offline", "llm", "llm-with-fallback"),
                   default=None)
    p.add_argument("--target-compression", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="worker pool size (default: config value, else CPUs)")
    p.set_defaults(fn=cmd_discover)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run-dir", default=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        client = ServiceClient(args.server)
        out = Output(args.format, args.quiet)
        return args.fn(args, client, out)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
