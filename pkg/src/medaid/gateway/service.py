"""HTTP consultation service.

JSON API under /v1 for the browser client: session creation with optional
patient profile, per-turn messaging, snapshots, and metadata.  Every response
that carries model-produced text also carries the configured disclaimer.
Errors use the stable shape ``{"error": {"code", "message"}}``.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..clock import SystemClock
from ..consult import (
    PatientProfile,
    SessionState,
    close_session,
    new_session,
    offline_doctor_backend,
    session_from_dict,
    session_to_dict,
    step,
)
from ..corpus import DiseaseCatalog, default_catalog
from ..errors import (
    CredentialError,
    MedaidError,
    SessionStateError,
    StoreConflict,
    StoreNotFound,
    TranslationError,
    TransportError,
    ValidationError,
)
from ..langs import LanguageCode, language_name
from ..llmgate import HttpBackend, identity_backend
from .config import AppConfig
from .store import SessionStore


class ApiError(MedaidError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class CreateSessionBody(BaseModel):
    language: str = "en"
    profile: dict | None = None


class MessageBody(BaseModel):
    text: str


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def create_app(
    config: AppConfig,
    *,
    dialogue_backend=None,
    translation_backend=None,
    catalog: DiseaseCatalog | None = None,
    store: SessionStore | None = None,
    clock=None,
) -> FastAPI:
    """Assemble the service; backends may be injected for tests and demos."""
    clock = clock or SystemClock()
    if catalog is None:
        catalog = (
            DiseaseCatalog.from_file(config.catalog_path)
            if config.catalog_path
            else default_catalog()
        )
    if dialogue_backend is None:
        dialogue_backend = (
            offline_doctor_backend(catalog)
            if config.mock_backends
            else HttpBackend(config.dialogue_backend)
        )
    if translation_backend is None:
        translation_backend = (
            identity_backend()
            if config.mock_backends
            else HttpBackend(config.translation_backend)
        )
    store = store or SessionStore(config.session_dir)

    app = FastAPI(title="medaid", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def handle_api_error(_: Request, exc: ApiError):
        return _error_response(exc.status, exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def handle_validation(_: Request, exc: RequestValidationError):
        return _error_response(400, "bad_request", str(exc.errors()[:1]))

    @app.exception_handler(MedaidError)
    async def handle_domain_error(_: Request, exc: MedaidError):
        return _error_response(500, "internal", str(exc))

    def load_session(session_id: str):
        try:
            return session_from_dict(store.get(session_id))
        except StoreNotFound as exc:
            raise ApiError(404, "not_found", str(exc)) from exc

    @app.get("/healthz")
    async def healthz():
        return {
            "status": "ok",
            "backends": {
                "dialogue": "mock" if config.mock_backends else config.dialogue_backend.base_url,
                "translation": "mock"
                if config.mock_backends
                else config.translation_backend.base_url,
            },
        }

    @app.get("/v1/meta/languages")
    async def meta_languages():
        return {
            "languages": [
                {"code": code.value, "name": language_name(code), "rtl": code == LanguageCode.AR}
                for code in LanguageCode
            ]
        }

    @app.get("/v1/meta/catalog")
    async def meta_catalog():
        return {"version": catalog.version, "diseases": catalog.labels()}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(body: CreateSessionBody):
        try:
            language = LanguageCode(body.language)
        except ValueError:
            raise ApiError(400, "bad_request", f"unsupported language {body.language!r}")
        try:
            profile = PatientProfile.from_dict(body.profile)
        except (ValidationError, TypeError, ValueError) as exc:
            raise ApiError(400, "bad_request", f"invalid profile: {exc}")
        session = new_session(
            profile,
            language,
            max_exchanges=config.max_exchanges,
            catalog=catalog,
            clock=clock,
        )
        store.put(session_to_dict(session))
        return {
            "session_id": session.id,
            "state": session.state.value,
            "language": language.value,
            "disclaimer": config.disclaimer_text,
        }

    @app.post("/v1/sessions/{session_id}/messages")
    async def post_message(session_id: str, body: MessageBody):
        if not body.text.strip():
            raise ApiError(400, "bad_request", "text must be non-empty")
        try:
            with store.lease(session_id):
                session = load_session(session_id)
                try:
                    outcome = step(
                        session,
                        body.text,
                        dialogue_backend,
                        translation_backend,
                        catalog,
                        clock=clock,
                    )
                except SessionStateError as exc:
                    raise ApiError(409, "conflict", str(exc)) from exc
                except ValidationError as exc:
                    raise ApiError(400, "bad_request", str(exc)) from exc
                except (TransportError, CredentialError) as exc:
                    raise ApiError(503, "backend_unavailable", str(exc)) from exc
                except TranslationError as exc:
                    raise ApiError(502, "backend_unavailable", str(exc)) from exc
                store.put(session_to_dict(session))
        except StoreConflict as exc:
            raise ApiError(409, "conflict", str(exc)) from exc
        payload: dict = {"state": outcome.state.value, "disclaimer": config.disclaimer_text}
        if outcome.reply is not None:
            payload["reply"] = outcome.reply
        if outcome.diagnosis is not None:
            payload["diagnosis"] = outcome.diagnosis.to_dict()
            payload["localized_justification"] = outcome.localized_justification
        if outcome.state is SessionState.FAILED:
            payload["error"] = {
                "code": "malformed_prediction",
                "message": "the model did not produce a valid diagnosis",
            }
        return payload

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str):
        session = load_session(session_id)
        snapshot = session_to_dict(session)
        snapshot["disclaimer"] = config.disclaimer_text
        return snapshot

    @app.delete("/v1/sessions/{session_id}", status_code=200)
    async def delete_session(session_id: str):
        with store.lease(session_id):
            session = load_session(session_id)
            close_session(session, clock)
            store.put(session_to_dict(session))
        return {"state": session.state.value, "disclaimer": config.disclaimer_text}

    return app


def serve(config: AppConfig) -> None:
    """Run the service until interrupted; sessions persist via the store."""
    import uvicorn

    app = create_app(config)
    host, port = config.host_port()
    uvicorn.run(app, host=host, port=port, log_level="info")
