"""REST surface for registration, challenge login and timing metrics.

Thin translation layer: requests are decoded, handed to the service,
and its outcomes mapped onto HTTP statuses.  Two properties the wire
format must keep regardless of refactoring:

* No response body ever carries key digits, a labeling order on file,
  or anything marking which of four challenge images is real.
* Login refusals for unknown accounts are byte-identical to refusals
  for internal hiccups, so the endpoint is useless for enumerating
  usernames.
"""

from __future__ import annotations

import base64
import binascii
import logging
import math
import os
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from gridpass import devseed
from gridpass.core import (
    AccountLockedError,
    AuthError,
    AuthService,
    AuthUnavailableError,
    ClickEvent,
    ConflictError,
    SessionNotFoundError,
    SessionStateError,
    UserNotFoundError,
    ValidationError,
)
from gridpass.core import ProtocolError as CoreProtocolError
from gridpass.grid import LabelOrder
from gridpass.otp import DeliveryError, OtpStore, transport_from_env, ttl_from_env
from gridpass.vault import (
    ImageNotFoundError,
    ImageVault,
    PoolExhaustedError,
    VaultError,
    master_key_from_env,
)

logger = logging.getLogger("gridpass.api")

TIMINGS_HEADER = "Sl.No,Registration Time(s),Login Time-1(s),Login Time-2(s),Login Time-3(s)"
UNAVAILABLE_DETAIL = "authentication unavailable"
LOGIN_COLUMNS = 3
MIN_DECOYS = 9


class NewUserRequest(BaseModel):
    username: str
    mobile: str
    details: dict = Field(default_factory=dict)


class ImageUploadRequest(BaseModel):
    level: int
    status: str
    content_type: str = "image/png"
    image_base64: str


class NewSessionRequest(BaseModel):
    username: str


class ClickRequest(BaseModel):
    image_id: str
    x: float
    y: float
    rendered_w: int
    rendered_h: int


def _decode_status(raw: str) -> LabelOrder:
    try:
        return LabelOrder(raw)
    except ValueError:
        choices = ", ".join(order.value for order in LabelOrder)
        raise ValidationError(f"status must be one of: {choices}") from None


def _decode_image(raw: str) -> bytes:
    try:
        return base64.b64decode(raw, validate=True)
    except (binascii.Error, ValueError):
        raise ValidationError("image_base64 is not valid base64") from None


def render_timings_csv(records) -> str:
    """Render timing rows under the fixed header, one line per user.

    Durations are printed at whole-second precision; logins beyond the
    first three are dropped and missing ones render as empty fields.
    """
    lines = [TIMINGS_HEADER]
    for record in records:
        fields = [str(record.serial), str(round(record.registration_seconds))]
        logins = list(record.login_seconds[:LOGIN_COLUMNS])
        for i in range(LOGIN_COLUMNS):
            fields.append(str(round(logins[i])) if i < len(logins) else "")
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def create_app(service: AuthService, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="gridpass", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def handle_request_validation(request: Request, exc: RequestValidationError):
        # Undecodable JSON is a malformed request; shape errors are 422.
        if any(error.get("type") == "json_invalid" for error in exc.errors()):
            return JSONResponse(status_code=400, content={"detail": "malformed JSON body"})
        return JSONResponse(status_code=422, content={"detail": "invalid request fields"})

    @app.exception_handler(AuthError)
    async def handle_auth_error(request: Request, exc: AuthError):
        if isinstance(exc, AuthUnavailableError):
            return JSONResponse(status_code=503, content={"detail": UNAVAILABLE_DETAIL})
        if isinstance(exc, AccountLockedError):
            return JSONResponse(
                status_code=423,
                content={"detail": "account locked"},
                headers={"Retry-After": str(math.ceil(exc.retry_after))},
            )
        if isinstance(exc, ValidationError):
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        if isinstance(exc, (UserNotFoundError, SessionNotFoundError)):
            return JSONResponse(status_code=404, content={"detail": str(exc)})
        if isinstance(exc, (ConflictError, SessionStateError, CoreProtocolError)):
            return JSONResponse(status_code=409, content={"detail": str(exc)})
        logger.error("unhandled auth error: %r", exc)
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    @app.exception_handler(DeliveryError)
    async def handle_delivery_error(request: Request, exc: DeliveryError):
        return JSONResponse(status_code=503, content={"detail": UNAVAILABLE_DETAIL})

    @app.exception_handler(VaultError)
    async def handle_vault_error(request: Request, exc: VaultError):
        if isinstance(exc, ImageNotFoundError):
            return JSONResponse(status_code=404, content={"detail": str(exc)})
        if isinstance(exc, PoolExhaustedError):
            return JSONResponse(status_code=503, content={"detail": UNAVAILABLE_DETAIL})
        logger.error("vault error: %r", exc)
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    @app.post("/api/users", status_code=201)
    async def create_user(body: NewUserRequest):
        user_id = service.register_user(body.username, body.mobile, body.details)
        return {"user_id": user_id}

    @app.post("/api/users/{user_id}/images", status_code=201)
    async def upload_image(user_id: str, body: ImageUploadRequest):
        order = _decode_status(body.status)
        image = _decode_image(body.image_base64)
        image_id = service.attach_image_password(
            user_id, body.level, image, order, content_type=body.content_type
        )
        payload = {"image_id": image_id}
        if service.registration_complete(user_id):
            payload["registration_complete"] = True
        return payload

    @app.post("/api/sessions", status_code=201)
    async def create_session(body: NewSessionRequest):
        challenge = service.start_login(body.username)
        return {
            "session_id": challenge.session_id,
            "level": challenge.level,
            "images": challenge.image_ids,
        }

    @app.get("/api/sessions/{session_id}")
    async def get_session(session_id: str):
        return service.session_view(session_id)

    @app.get("/api/sessions/{session_id}/images/{image_id}")
    async def get_challenge_image(session_id: str, image_id: str):
        data, content_type = service.challenge_image(session_id, image_id)
        return Response(content=data, media_type=content_type, headers={"Cache-Control": "no-store"})

    @app.post("/api/sessions/{session_id}/clicks")
    async def submit_click(session_id: str, body: ClickRequest):
        outcome = service.submit_click(
            session_id,
            ClickEvent(
                image_id=body.image_id,
                x=body.x,
                y=body.y,
                rendered_w=body.rendered_w,
                rendered_h=body.rendered_h,
            ),
        )
        if outcome.finalize_ready:
            return {"finalize_ready": True}
        return {"level": outcome.level, "images": outcome.image_ids}

    @app.post("/api/sessions/{session_id}/finalize")
    async def finalize_session(session_id: str):
        success = service.finalize(session_id)
        return {"result": "success" if success else "failure"}

    @app.get("/api/metrics/timings.csv")
    async def timings_csv():
        return PlainTextResponse(
            render_timings_csv(service.timing_records()), media_type="text/csv"
        )

    @app.get("/api/config")
    async def config():
        transport = getattr(service.transport, "name", "unknown")
        return {
            "otp_transport": transport,
            "dev_otp_banner": transport in ("console", "file"),
        }

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def _seed_dev_decoys(vault: ImageVault) -> None:
    missing = MIN_DECOYS - len(vault.decoy_ids())
    if missing <= 0:
        return
    logger.warning(
        "decoy pool below %d; seeding %d generated development decoys "
        "(set DECOY_DIR for real images)",
        MIN_DECOYS,
        missing + 3,
    )
    for image in devseed.sample_decoys(missing + 3):
        vault.add_decoy(image)


def build_default_service(environ: Optional[dict] = None) -> AuthService:
    """Assemble a service from environment configuration."""
    env = dict(os.environ if environ is None else environ)
    master = master_key_from_env(env)
    vault = ImageVault(master, env.get("VAULT_PATH", "vault.db"))
    decoy_dir = env.get("DECOY_DIR")
    if decoy_dir:
        vault.ingest_decoy_dir(decoy_dir)
    else:
        _seed_dev_decoys(vault)
    otp_store = OtpStore(ttl=ttl_from_env(env))
    transport = transport_from_env(env)
    return AuthService(vault, otp_store, transport)


def main() -> None:
    import uvicorn

    logging.basicConfig(level=logging.INFO)
    bind = os.environ.get("BIND_ADDR", "127.0.0.1:8000")
    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise SystemExit(f"BIND_ADDR must look like host:port, got {bind!r}")
    service = build_default_service()
    static_dir = os.environ.get("STATIC_DIR")
    app = create_app(service, static_dir=static_dir)
    uvicorn.run(app, host=host, port=int(port_text))


if __name__ == "__main__":
    main()
