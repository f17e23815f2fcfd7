"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    code: str           # "usage" | "data" | "infeasible" | "endpoint"
    message: str


class LayerScore(BaseModel):
    layer: int
    score: float
    warning: bool = False


class ScoreRequest(BaseModel):
    proxy: str
    model_path: str | None = None
    calib_path: str | None = None
    stats_path: str | None = None


class ScoreResponse(BaseModel):
    proxy: str
    scores: list[LayerScore]


class StatsRequest(BaseModel):
    model_path: str
    calib_path: str


class StatsResponse(BaseModel):
    layers: list[dict]


class AssignmentModel(BaseModel):
    activation_bits: int
    layers: list[dict]


class CostModel(BaseModel):
    param_bits: int
    bops: int | None = None
    compression_ratio: float
    compression_percent: float


class AllocateRequest(BaseModel):
    target_compression: float
    scores: list[float] | None = None
    scores_path: str | None = None
    model_path: str | None = None
    calib_path: str | None = None
    stats_path: str | None = None
    proxy: str | None = None
    activation_bits: int = 8


class AllocateResponse(BaseModel):
    assignment: AssignmentModel
    cost: CostModel


class QuantizeRequest(BaseModel):
    model_path: str
    assignment_path: str
    data_path: str
    calib_path: str | None = None       # defaults to data_path


class QuantizeResponse(BaseModel):
    accuracy: float
    cost: CostModel


class EvalProxyRequest(BaseModel):
    proxy: str
    model_path: str
    calib_path: str
    eval_path: str | None = None        # defaults to calib_path
    target_compression: float = 0.8
    alpha: float = 0.1
    probe_bits: int = 2
    activation_bits: int = 8


class EvalProxyResponse(BaseModel):
    proxy: str
    rho_sens: float
    acc_quant: float
    phi: float | str                    # "-inf" for sentinels
    assignment: AssignmentModel | None
    warnings: list[str]


class BaselinesRequest(BaseModel):
    model_path: str
    calib_path: str
    eval_path: str | None = None
    target_compression: float = 0.8
    alpha: float = 0.1
    probe_bits: int = 2
    seed: int = 0


class BaselineRowModel(BaseModel):
    name: str
    rho_sens: float
    acc_quant: float
    phi: float | str
    weight_bits: list[int] | None


class BaselinesResponse(BaseModel):
    rows: list[BaselineRowModel]


class DiscoverRequest(BaseModel):
    config: dict = Field(description="RunConfig fields; see docs/FORMATS.md")


class DiscoverResponse(BaseModel):
    best: dict
    best_phi_series: list[float | str]
    final_population: list[str]
    generations_completed: int
    fallback_generations: list[int]
    run_dir: str


class ReportResponse(BaseModel):
    run_dir: str
    partial: bool
    config: dict | None
    result: dict | None
    generations: int
    candidates_logged: int
    sentinel_candidates: int
