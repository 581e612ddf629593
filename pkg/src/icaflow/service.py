"""HTTP prediction service.

``POST /v1/predict`` runs the online pipeline for one query;
``GET /healthz`` reports liveness.  In-flight requests are bounded by a
semaphore — beyond the limit the service sheds load with 429 and a
``retry_later`` status instead of queueing unboundedly.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .clients import LlmClient
from .errors import IcaError, PromptBudgetError, TransportError
from .kb import KnowledgeBase
from .model import ContextRecord
from .predict import ContextProvider, StaticContextProvider, predict
from .retrieval import build_index


class PredictRequest(BaseModel):
    query: str
    context: dict | None = None
    k: int | None = None


def create_app(
    kb: KnowledgeBase,
    client: LlmClient,
    context_provider: ContextProvider | None = None,
    k: int = 3,
    with_cot: bool = True,
    max_in_flight: int = 8,
    token_budget: int = 4096,
    max_output_tokens: int = 512,
    timeout: float = 30.0,
) -> FastAPI:
    app = FastAPI(title="ica-predict")
    index = build_index(kb.docs, kb.aliases)
    limiter = threading.Semaphore(max_in_flight)
    app.state.limiter = limiter

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "workflows": len(kb.docs)}

    @app.post("/v1/predict")
    def predict_endpoint(request: PredictRequest):
        if not request.query.strip():
            return JSONResponse(
                status_code=422, content={"status": "error", "error": "query must be non-empty"}
            )
        if not limiter.acquire(blocking=False):
            return JSONResponse(status_code=429, content={"status": "retry_later"})
        try:
            provider = context_provider or StaticContextProvider()
            if request.context is not None:
                provider = StaticContextProvider(ContextRecord(dict(request.context)))
            prediction = predict(
                request.query,
                provider,
                index,
                kb.docs,
                kb.action_map,
                client,
                k=request.k or k,
                with_cot=with_cot,
                token_budget=token_budget,
                max_output_tokens=max_output_tokens,
                timeout=timeout,
            )
            return prediction.to_json_dict()
        except PromptBudgetError as exc:
            return JSONResponse(status_code=413, content={"status": "error", "error": str(exc)})
        except TransportError as exc:
            return JSONResponse(status_code=502, content={"status": "error", "error": str(exc)})
        except IcaError as exc:
            return JSONResponse(status_code=500, content={"status": "error", "error": str(exc)})
        finally:
            limiter.release()
    return app
