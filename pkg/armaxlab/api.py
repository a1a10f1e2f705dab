"""
FastAPI application for armaxlab.
Exposes experiment runs and offline identification over HTTP.
"""

import time
from contextlib import asynccontextmanager
from typing import List, Optional

import numpy as np
from fastapi import FastAPI
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.gzip import GZipMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator
from starlette.exceptions import HTTPException as StarletteHTTPException

from armaxlab.config import settings
from armaxlab.errors import ArmaxLabError
from armaxlab.experiments import ExperimentConfig, experiment_service
from armaxlab.ident_offline import armax_identify_offline
from armaxlab.model_core import DelayPolynomial, Trajectory
from armaxlab.utils import get_logger, log_operation, to_jsonable

logger = get_logger("api")

# Global variables for startup/shutdown
startup_time = None


class OfflineIdentificationRequest(BaseModel):
    u: List[float] = Field(..., description="Input samples")
    y: List[float] = Field(..., description="Output samples")
    n: int = Field(..., ge=0, description="Order of a(z)")
    m: int = Field(..., ge=0, description="Order of b(z)")
    p: int = Field(..., ge=0, description="Order of c(z)")
    vi_iterations: int = Field(500, ge=1, description="Value-iteration budget")
    instrument_filter: Optional[List[float]] = Field(None, description="Monic instrument filter coefficients")

    @model_validator(mode="after")
    def _same_length(self):
        if len(self.u) != len(self.y):
            raise ValueError(f"u has {len(self.u)} samples, y has {len(self.y)}")
        return self


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager for startup and shutdown events."""
    global startup_time

    startup_time = time.time()
    logger.info(f"Starting {settings.service_name}...")
    log_operation("startup", "api", {"status": "success", "max_workers": settings.max_workers})

    yield

    logger.info(f"Shutting down {settings.service_name}...")
    log_operation("shutdown", "api", {"status": "success"})


app = FastAPI(
    title=settings.service_name,
    description="ARMAX identification, model-free state estimation and LQG experiments",
    version=settings.service_version,
    docs_url="/docs" if settings.debug else None,
    redoc_url="/redoc" if settings.debug else None,
    openapi_url="/openapi.json" if settings.debug else None,
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.add_middleware(GZipMiddleware, minimum_size=1000)


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request, exc: RequestValidationError):
    """Handle request validation errors."""
    logger.warning(f"Validation error: {exc.errors()}")
    return JSONResponse(
        status_code=422,
        content={
            "error": "Validation Error",
            "details": to_jsonable(exc.errors()),
            "timestamp": time.time()
        }
    )


@app.exception_handler(ArmaxLabError)
async def armaxlab_exception_handler(request, exc: ArmaxLabError):
    """Numerical and configuration failures are the caller's input problem."""
    logger.warning(f"Request rejected: {exc}")
    return JSONResponse(
        status_code=422,
        content={
            "error": type(exc).__name__,
            "detail": str(exc),
            "timestamp": time.time()
        }
    )


@app.exception_handler(StarletteHTTPException)
async def http_exception_handler(request, exc: StarletteHTTPException):
    """Handle HTTP exceptions."""
    logger.warning(f"HTTP exception: {exc.status_code} - {exc.detail}")
    return JSONResponse(
        status_code=exc.status_code,
        content={
            "error": "HTTP Error",
            "detail": exc.detail,
            "status_code": exc.status_code,
            "timestamp": time.time()
        }
    )


@app.exception_handler(Exception)
async def general_exception_handler(request, exc: Exception):
    """Handle general exceptions."""
    logger.error(f"General exception: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal Server Error",
            "detail": "An unexpected error occurred",
            "timestamp": time.time()
        }
    )


@app.get("/health")
async def health_check():
    """Service health check endpoint."""
    return {
        "status": "healthy",
        "service": settings.service_name,
        "version": settings.service_version,
        "uptime": time.time() - startup_time if startup_time else 0.0,
        "timestamp": time.time()
    }


@app.get("/")
async def root():
    """Root endpoint with service information."""
    return {
        "message": f"Welcome to {settings.service_name}",
        "service": {
            "name": settings.service_name,
            "version": settings.service_version,
            "status": "running"
        },
        "endpoints": {
            "health": "/health",
            "experiments": "/experiments",
            "identify_offline": "/identify/offline"
        }
    }


@app.post("/experiments")
async def run_experiment(config: ExperimentConfig):
    """Run an experiment across its seeds and return the report."""
    report = await run_in_threadpool(experiment_service.run_experiment, config)
    return report.model_dump(mode="json")


@app.post("/identify/offline")
async def identify_offline(request: OfflineIdentificationRequest):
    """IV plus value-iteration identification of the posted record."""
    traj = Trajectory(u=np.asarray(request.u, dtype=float), y=np.asarray(request.y, dtype=float))
    instrument = DelayPolynomial(tuple(request.instrument_filter)) if request.instrument_filter else None
    result = await run_in_threadpool(
        armax_identify_offline, traj, request.n, request.m, request.p, request.vi_iterations, instrument
    )
    return to_jsonable(result.to_report())
