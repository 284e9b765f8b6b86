"""HTTP service wrapping the pipeline: /rerank, /expand, /healthz.

All shared state (corpus, index, vocabulary, scorer) is immutable, so
concurrent requests are independent. Responses are serialized through the
same functions as the CLI, byte for byte.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response

from .errors import PipelineStageError, RemoteBackendError, ValidationError
from .pipeline import Pipeline, expanded_query_to_json, selection_to_json


def _error_response(status: int, reason: str) -> Response:
    return Response(
        content=json.dumps({"error": reason}, separators=(",", ":")),
        status_code=status,
        media_type="application/json",
    )


def _status_for(exc: Exception) -> int:
    if isinstance(exc, PipelineStageError):
        return _status_for(exc.cause) if isinstance(exc.cause, Exception) else 500
    if isinstance(exc, RemoteBackendError):
        return 502
    if isinstance(exc, (ValidationError, ValueError)):
        return 400
    return 500


async def _json_body(request: Request) -> dict:
    content_type = request.headers.get("content-type", "")
    if "application/json" not in content_type:
        raise ValidationError(f"content type must be application/json, got '{content_type or 'none'}'")
    raw = await request.body()
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON body: {exc.msg}") from exc
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    return body


def create_app(pipeline: Pipeline) -> FastAPI:
    app = FastAPI(title="budgetrank", docs_url=None, redoc_url=None)
    max_candidates = pipeline.config.service.max_inline_candidates

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/expand")
    async def expand(request: Request):
        try:
            body = await _json_body(request)
            query = body.get("query")
            if not isinstance(query, str) or not query.strip():
                raise ValidationError("field 'query' must be a non-empty string")
            expanded = pipeline.expand(query, query_id=body.get("query_id"))
            return Response(
                content=expanded_query_to_json(expanded), media_type="application/json"
            )
        except Exception as exc:
            return _error_response(_status_for(exc), str(exc))

    @app.post("/rerank")
    async def rerank(request: Request):
        try:
            body = await _json_body(request)
            query = body.get("query")
            if not isinstance(query, str) or not query.strip():
                raise ValidationError("field 'query' must be a non-empty string")
            budget = body.get("budget")
            if budget is not None and not isinstance(budget, int):
                raise ValidationError("field 'budget' must be an integer")
            tau = body.get("tau")
            if tau is not None and not isinstance(tau, (int, float)):
                raise ValidationError("field 'tau' must be a number")
            inline = body.get("candidates")

            expanded = pipeline.expand(query, query_id=body.get("query_id"))
            if inline is not None:
                if not isinstance(inline, list):
                    raise ValidationError("field 'candidates' must be an array")
                if len(inline) > max_candidates:
                    raise ValidationError(
                        f"too many inline candidates: {len(inline)} > "
                        f"limit {max_candidates}"
                    )
                candidates = pipeline.inline_candidates(
                    body.get("query_id") or query, inline
                )
            else:
                candidates = pipeline.retrieve(expanded)
            result = pipeline.select(
                expanded,
                candidates,
                budget=budget,
                tau=None if tau is None else float(tau),
            )
            return Response(content=selection_to_json(result), media_type="application/json")
        except Exception as exc:
            return _error_response(_status_for(exc), str(exc))

    return app


def serve(pipeline: Pipeline, host: str = "127.0.0.1", port: int = 8080) -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(pipeline), host=host, port=port)


__all__ = ["create_app", "serve"]
