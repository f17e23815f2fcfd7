"""FastAPI service wrapping the discovery engine.

Paths in request bodies are resolved on the server's filesystem; this is a
local tool server, not a multi-tenant deployment. Error responses carry a
stable machine-readable code the CLI maps to its exit-code contract.
"""

from __future__ import annotations

import json
import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, dsl
from ..allocator import AllocationRequest, allocate
from ..baselines import run_baselines
from ..errors import (DataError, EndpointError, InfeasibleBudgetError,
                      QuantProxyError, UsageError)
from ..evolve import RunConfig, candidate_record, run
from ..fitness import SENTINEL, CandidateEvaluator, EvalSettings
from ..quantsim import cost, calibrate_activation_ranges, load_assignment, \
    quantized_accuracy
from ..smallnet import layer_inventory, load_dataset, load_model
from ..stats import compute_layer_stats, load_stats
from . import schemas


def _phi_json(phi: float):
    return "-inf" if phi == SENTINEL else phi


def _load_model_and_data(model_path: str, data_path: str):
    model = load_model(model_path)
    data = load_dataset(data_path, model.input_shape)
    return model, data


def _stats_for(req) -> list:
    """LayerStats from either a stats file or a model + calibration pair."""
    if req.stats_path:
        return load_stats(req.stats_path)
    if not (req.model_path and req.calib_path):
        raise UsageError("provide either stats_path or model_path + calib_path")
    model, calib = _load_model_and_data(req.model_path, req.calib_path)
    return compute_layer_stats(model, calib)


def _meta_from_stats(stats) -> list:
    """Inventory facts available without the model file (no MAC counts)."""
    from ..smallnet import LayerMeta
    return [LayerMeta(index=int(s.depth), layer_class=s.layer_class,
                      param_count=int(s.n_params), mac_count=0)
            for s in stats]


def create_app() -> FastAPI:
    app = FastAPI(title="quantproxy", version=__version__)

    @app.exception_handler(QuantProxyError)
    async def engine_error(request: Request, exc: QuantProxyError):
        if isinstance(exc, InfeasibleBudgetError):
            status, code = 409, "infeasible"
        elif isinstance(exc, EndpointError):
            status, code = 502, "endpoint"
        elif isinstance(exc, UsageError):
            status, code = 400, "usage"
        elif isinstance(exc, DataError):
            status, code = 422, "data"
        else:
            status, code = 400, "usage"
        return JSONResponse(status_code=status,
                            content={"error": {"code": code,
                                               "message": str(exc)}})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/score", response_model=schemas.ScoreResponse)
    def score(req: schemas.ScoreRequest):
        stats = _stats_for(req)
        expr = dsl.parse(req.proxy)
        values, warned = dsl.evaluate_flagged(expr, stats)
        return schemas.ScoreResponse(
            proxy=dsl.print_canonical(expr),
            scores=[schemas.LayerScore(layer=i + 1, score=v, warning=w)
                    for i, (v, w) in enumerate(zip(values, warned))])

    @app.post("/stats", response_model=schemas.StatsResponse)
    def stats_endpoint(req: schemas.StatsRequest):
        model, calib = _load_model_and_data(req.model_path, req.calib_path)
        stats = compute_layer_stats(model, calib)
        return schemas.StatsResponse(layers=[s.to_json() for s in stats])

    @app.post("/allocate", response_model=schemas.AllocateResponse)
    def allocate_endpoint(req: schemas.AllocateRequest):
        model = load_model(req.model_path) if req.model_path else None
        if model is not None and not req.stats_path:
            inventory = layer_inventory(model)
        else:
            stats = _stats_for(req)
            inventory = _meta_from_stats(stats)

        scores = req.scores
        if scores is None and req.scores_path:
            try:
                with open(req.scores_path, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            except OSError as e:
                raise DataError(f"cannot read scores file: {e}") from None
            except json.JSONDecodeError as e:
                raise DataError(f"scores file is not valid JSON: {e}") from None
            scores = doc.get("scores") if isinstance(doc, dict) else doc
            if not isinstance(scores, list) or not scores:
                raise DataError("scores file must hold a non-empty list "
                                "or {scores: [...]}")
        if scores is None and req.proxy:
            stats = _stats_for(req)
            scores = dsl.evaluate(dsl.parse(req.proxy), stats)
        if scores is None:
            raise UsageError("provide scores, scores_path, or proxy")
        assignment = allocate(
            AllocationRequest(scores=tuple(float(s) for s in scores),
                              target_compression=req.target_compression,
                              activation_bits=req.activation_bits),
            inventory)
        if model is not None:
            report = cost(model, assignment).to_json()
        else:
            param_bits = sum(m.param_count * b for m, b in
                             zip(inventory, assignment.weight_bits))
            total = 32 * sum(m.param_count for m in inventory)
            ratio = 1.0 - param_bits / total
            report = {"param_bits": param_bits, "bops": None,
                      "compression_ratio": ratio,
                      "compression_percent": round(100 * ratio, 4)}
        return schemas.AllocateResponse(
            assignment=schemas.AssignmentModel(**assignment.to_json()),
            cost=schemas.CostModel(**report))

    @app.post("/quantize", response_model=schemas.QuantizeResponse)
    def quantize(req: schemas.QuantizeRequest):
        model, data = _load_model_and_data(req.model_path, req.data_path)
        calib = data if req.calib_path in (None, req.data_path) else \
            load_dataset(req.calib_path, model.input_shape)
        assignment = load_assignment(req.assignment_path)
        ranges = calibrate_activation_ranges(model, calib)
        acc = quantized_accuracy(model, assignment, ranges, data)
        return schemas.QuantizeResponse(
            accuracy=acc, cost=schemas.CostModel(**cost(model, assignment).to_json()))

    @app.post("/eval-proxy", response_model=schemas.EvalProxyResponse)
    def eval_proxy(req: schemas.EvalProxyRequest):
        model = load_model(req.model_path)
        calib = load_dataset(req.calib_path, model.input_shape)
        eval_data = calib if req.eval_path in (None, req.calib_path) else \
            load_dataset(req.eval_path, model.input_shape)
        evaluator = CandidateEvaluator(
            model, calib, eval_data,
            EvalSettings(target_compression=req.target_compression,
                         alpha=req.alpha, probe_bits=req.probe_bits,
                         activation_bits=req.activation_bits))
        expr = dsl.parse(req.proxy)
        candidate = dsl.make_candidate("cli-proxy", "supplied on request",
                                       expr, "builtin")
        result = evaluator.evaluate(candidate)
        return schemas.EvalProxyResponse(
            proxy=candidate.expr_text,
            rho_sens=result.rho_sens, acc_quant=result.acc_quant,
            phi=_phi_json(result.phi),
            assignment=schemas.AssignmentModel(**result.assignment.to_json())
            if result.assignment else None,
            warnings=list(result.warnings))

    @app.post("/baselines", response_model=schemas.BaselinesResponse)
    def baselines_endpoint(req: schemas.BaselinesRequest):
        model = load_model(req.model_path)
        calib = load_dataset(req.calib_path, model.input_shape)
        eval_data = calib if req.eval_path in (None, req.calib_path) else \
            load_dataset(req.eval_path, model.input_shape)
        evaluator = CandidateEvaluator(
            model, calib, eval_data,
            EvalSettings(target_compression=req.target_compression,
                         alpha=req.alpha, probe_bits=req.probe_bits))
        rows = run_baselines(evaluator, seed=req.seed)
        return schemas.BaselinesResponse(rows=[
            schemas.BaselineRowModel(
                name=r.name, rho_sens=r.result.rho_sens,
                acc_quant=r.result.acc_quant, phi=_phi_json(r.result.phi),
                weight_bits=list(r.result.assignment.weight_bits)
                if r.result.assignment else None)
            for r in rows])

    @app.post("/discover", response_model=schemas.DiscoverResponse)
    def discover(req: schemas.DiscoverRequest):
        config = RunConfig.from_json(req.config)
        result = run(config)
        return schemas.DiscoverResponse(
            best=candidate_record(result.best),
            best_phi_series=[_phi_json(v) for v in result.best_phi_series],
            final_population=[e.candidate.id for e in result.final_population],
            generations_completed=result.generations_completed,
            fallback_generations=result.fallback_generations,
            run_dir=config.run_dir)

    @app.get("/report", response_model=schemas.ReportResponse)
    def report(run_dir: str):
        if not os.path.isdir(run_dir):
            raise DataError(f"run directory {run_dir} does not exist")
        config = result = None
        config_path = os.path.join(run_dir, "config.json")
        if os.path.exists(config_path):
            with open(config_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        result_path = os.path.join(run_dir, "result.json")
        if os.path.exists(result_path):
            with open(result_path, "r", encoding="utf-8") as fh:
                result = json.load(fh)
        generations = candidates = sentinels = 0
        gen_dir = os.path.join(run_dir, "generations")
        if os.path.isdir(gen_dir):
            for name in sorted(os.listdir(gen_dir)):
                generations += 1
                with open(os.path.join(gen_dir, name), "r",
                          encoding="utf-8") as fh:
                    for line in fh:
                        rec = json.loads(line)
                        candidates += 1
                        sentinels += rec["phi"] == "-inf"
        return schemas.ReportResponse(
            run_dir=run_dir,
            partial=os.path.exists(os.path.join(run_dir, "PARTIAL")),
            config=config, result=result, generations=generations,
            candidates_logged=candidates, sentinel_candidates=sentinels)

    return app


app = create_app()
