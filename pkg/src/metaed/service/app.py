"""FastAPI service wrapping the experiment harness.

Endpoints execute synchronously and return the full result; desk-scale runs
take seconds to minutes, so clients should disable read timeouts (the
bundled CLI does).  Configuration problems map to 400, runtime failures
to 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..data import generate_corpus, save_jsonl
from ..encoder import TEMPLATES
from ..errors import ConfigurationError, ContractError, IngestionError, MetaedError
from ..runner import (
    evaluate_checkpoint,
    export_features,
    run_ablation,
    run_sweep,
    run_train,
)
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="metaed", version=__version__)

    @app.exception_handler(MetaedError)
    async def _metaed_error(request: Request, exc: MetaedError) -> JSONResponse:
        bad_request = isinstance(exc, (ConfigurationError, IngestionError, ContractError))
        return JSONResponse(
            status_code=400 if bad_request else 500,
            content={"detail": str(exc), "error": type(exc).__name__},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/templates", response_model=list[schemas.TemplateInfo])
    def templates() -> list[schemas.TemplateInfo]:
        return [
            schemas.TemplateInfo(id=t.id, tokens=list(t.tokens), slot_index=t.slot_index)
            for t in TEMPLATES.values()
        ]

    @app.post("/train", response_model=schemas.RunReportModel)
    def train(req: schemas.TrainRequest) -> schemas.RunReportModel:
        report = run_train(req.config.to_core(), resume=req.resume)
        return schemas.RunReportModel(**report.to_dict())

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_checkpoint(req: schemas.EvalRequest) -> schemas.EvalResponse:
        result = evaluate_checkpoint(req.checkpoint, test_episodes=req.test_episodes)
        return schemas.EvalResponse(**result)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
        result = run_sweep(req.config.to_core(), req.parameter, list(req.values))
        return schemas.SweepResponse(**result)

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate(req: schemas.AblateRequest) -> schemas.AblateResponse:
        result = run_ablation(req.config.to_core(), req.components)
        return schemas.AblateResponse(**result)

    @app.post("/export-features", response_model=schemas.ExportFeaturesResponse)
    def export(req: schemas.ExportFeaturesRequest) -> schemas.ExportFeaturesResponse:
        result = export_features(req.checkpoint, req.output, episodes=req.episodes)
        return schemas.ExportFeaturesResponse(**result)

    @app.post("/corpus/export", response_model=schemas.CorpusExportResponse)
    def corpus_export(req: schemas.CorpusExportRequest) -> schemas.CorpusExportResponse:
        from ..data import CorpusSpec

        spec = CorpusSpec(**req.corpus.model_dump())
        count = save_jsonl(generate_corpus(spec), req.path)
        return schemas.CorpusExportResponse(records=count, path=req.path)

    return app


app = create_app()
