"""
Terra Terramechanics Service
Batch HTTP access to the reference tire-force model, the surrogate network
and the sinkage-exponent estimator
"""

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from typing import Optional, Dict, Any, List
import io
import os
import time
import threading
from datetime import datetime
from pathlib import Path
import uuid
import logging
from concurrent.futures import ThreadPoolExecutor
import asyncio

import numpy as np
import pandas as pd

from terra import __version__
from terra.config import RunConfig, TerrainConfig, configure_logging, load_config
from terra.errors import ModelFileError, TerraError
from terra.plant import TrajectoryLog
from terra.surrogate import Mlp, load as load_model
from terra.terramech import (
    DEFAULT_MESH,
    MIN_MESH,
    WheelGeometry,
    WheelState,
    aggregate_modulus,
    tire_forces,
)
from terra.ukf import run_estimator

# Import changelog route
from .changelog_route import router as changelog_router

# Configure logging
configure_logging()
logger = logging.getLogger(__name__)

MAX_UPLOAD_BYTES = int(os.getenv("MAX_UPLOAD_BYTES", str(20 * 1024 * 1024)))

# Initialize FastAPI app
app = FastAPI(
    title="Terra Terramechanics Service",
    description="Reference rigid-wheel tire forces, neural surrogate lateral forces and online "
                "sinkage-exponent estimation from vehicle trajectory logs.",
    version=__version__,
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include changelog router
app.include_router(changelog_router)

# Thread pool for estimator runs
executor = ThreadPoolExecutor(max_workers=int(os.getenv("MAX_WORKERS", "4")))


# In-memory storage for metrics
class MetricsStore:
    def __init__(self):
        self.total_requests = 0
        self.successful_requests = 0
        self.failed_requests = 0
        self.total_processing_time = 0.0
        self.request_history = []
        self._lock = threading.Lock()

    def add_request(self, result: Dict[str, Any]):
        with self._lock:
            self.total_requests += 1
            if result['status'] == 'success':
                self.successful_requests += 1
            else:
                self.failed_requests += 1
            self.total_processing_time += result.get('processing_time', 0)

            # Keep last 100 requests in history
            self.request_history.append(result)
            if len(self.request_history) > 100:
                self.request_history.pop(0)

    def find(self, run_id: str) -> Optional[Dict[str, Any]]:
        with self._lock:
            for entry in self.request_history:
                if entry.get('run_id') == run_id:
                    return entry
        return None

    def get_metrics(self):
        avg_time = self.total_processing_time / self.total_requests if self.total_requests > 0 else 0
        success_rate = (self.successful_requests / self.total_requests * 100) if self.total_requests > 0 else 0
        return {
            "total_requests": self.total_requests,
            "successful_requests": self.successful_requests,
            "failed_requests": self.failed_requests,
            "success_rate": round(success_rate, 2),
            "average_processing_time": round(avg_time, 4),
            "recent_requests": self.request_history[-10:]
        }


metrics_store = MetricsStore()


class ServiceState:
    """Run configuration and surrogate network, loaded on first use"""

    def __init__(self):
        self._config: Optional[RunConfig] = None
        self._model: Optional[Mlp] = None
        self._lock = threading.Lock()

    def config(self) -> RunConfig:
        with self._lock:
            if self._config is None:
                path = os.getenv("TERRA_CONFIG")
                self._config = load_config(Path(path) if path else None)
            return self._config

    def model(self) -> Optional[Mlp]:
        with self._lock:
            if self._model is None:
                path = os.getenv("TERRA_MODEL")
                if not path or not Path(path).exists():
                    return None
                self._model = load_model(Path(path))
                logger.info(f"Loaded surrogate from {path}")
            return self._model

    def reset(self):
        with self._lock:
            self._config = None
            self._model = None


state = ServiceState()


# Request / response models
class WheelStateInput(BaseModel):
    slip_ratio: float = Field(..., ge=-1.0, le=1.0)
    slip_angle: float
    longitudinal_velocity: float
    normal_load: float = Field(..., gt=0)
    steering_rate: float = 0.0


class ForcesRequest(BaseModel):
    states: List[WheelStateInput] = Field(..., min_length=1, max_length=1000)
    terrain: TerrainConfig = TerrainConfig()
    radius: float = 0.45
    width: float = 0.25
    mesh: int = Field(DEFAULT_MESH, ge=MIN_MESH)


class ForceResult(BaseModel):
    fx: float
    fy: float
    fz: float
    sinkage: float
    surrogate_fy: Optional[float] = None


class ForcesResponse(BaseModel):
    request_id: str
    results: List[ForceResult]
    surrogate_loaded: bool
    processing_time: float


class EstimateResponse(BaseModel):
    run_id: str
    status: str
    final_n: float
    n0: float
    samples: int
    mean_step_ms: float
    peak_step_ms: float
    statistics: Dict[str, int]
    processing_time: float


class HealthCheckResponse(BaseModel):
    """Response model for health check"""
    status: str
    version: str
    uptime: float
    timestamp: str


class MetricsResponse(BaseModel):
    """Response model for metrics endpoint"""
    total_requests: int
    successful_requests: int
    failed_requests: int
    success_rate: float
    average_processing_time: float
    recent_requests: List[Dict[str, Any]]


# Application startup time
app_start_time = time.time()


@app.get("/")
async def root():
    """Service summary"""
    return {"service": "terra", "version": __version__, "docs": "/docs", "health": "/health"}


@app.get("/health", response_model=HealthCheckResponse)
async def health_check():
    """Health check endpoint"""
    uptime = time.time() - app_start_time
    return HealthCheckResponse(
        status="healthy",
        version=__version__,
        uptime=round(uptime, 2),
        timestamp=datetime.now().isoformat()
    )


@app.get("/metrics", response_model=MetricsResponse)
async def get_metrics():
    """Get service metrics"""
    return metrics_store.get_metrics()


def _evaluate_forces(request: ForcesRequest, model: Optional[Mlp]) -> List[ForceResult]:
    """Contact-arc forces per state, plus the surrogate lateral force when a model is given"""
    terrain = request.terrain.to_params()
    geom = WheelGeometry(request.radius, request.width)
    results = []
    for ws in request.states:
        forces = tire_forces(WheelState(**ws.model_dump()), terrain, geom, request.mesh)
        results.append(ForceResult(fx=forces.fx, fy=forces.fy, fz=forces.fz, sinkage=forces.sinkage))
    if model is not None:
        terrain_columns = [aggregate_modulus(terrain, geom), terrain.n, terrain.k, terrain.c, terrain.phi]
        rows = np.array([[ws.slip_ratio, ws.slip_angle, ws.longitudinal_velocity, ws.normal_load,
                          ws.steering_rate, *terrain_columns] for ws in request.states])
        for result, fy in zip(results, model.lateral_force(rows)):
            result.surrogate_fy = float(fy)
    return results


@app.post("/api/v1/forces", response_model=ForcesResponse)
async def compute_forces(request: ForcesRequest):
    """
    Reference tire forces for a batch of wheel states

    - **states**: wheel operating points (slip ratio, slip angle, speed, per-tire load, steering rate)
    - **terrain**: preset name or explicit soil values

    Adds the surrogate lateral force per state when a model is loaded
    """
    start_time = time.time()
    request_id = str(uuid.uuid4())
    try:
        loop = asyncio.get_running_loop()
        model = await loop.run_in_executor(executor, state.model)
        results = await loop.run_in_executor(executor, _evaluate_forces, request, model)
    except (TerraError, ValueError) as e:
        logger.warning(f"Rejected forces request {request_id}: {e}")
        metrics_store.add_request({'request_id': request_id, 'endpoint': 'forces', 'status': 'failed',
                                   'error': str(e), 'processing_time': round(time.time() - start_time, 4),
                                   'timestamp': datetime.now().isoformat()})
        raise HTTPException(status_code=400, detail=str(e))

    processing_time = time.time() - start_time
    metrics_store.add_request({'request_id': request_id, 'endpoint': 'forces', 'status': 'success',
                               'states': len(results), 'processing_time': round(processing_time, 4),
                               'timestamp': datetime.now().isoformat()})
    return ForcesResponse(request_id=request_id, results=results, surrogate_loaded=model is not None,
                          processing_time=round(processing_time, 4))


def _parse_log(contents: bytes) -> TrajectoryLog:
    try:
        frame = pd.read_csv(io.BytesIO(contents), float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ValueError(f"Upload is not a readable CSV: {e}")
    return TrajectoryLog.from_frame(frame)


@app.post("/api/v1/estimate", response_model=EstimateResponse)
async def estimate(
    file: UploadFile = File(..., description="Trajectory log CSV (time, states, inputs)"),
    n0: Optional[float] = Form(None, description="Initial sinkage-exponent guess")
):
    """
    Estimate the sinkage exponent from an uploaded trajectory log

    - **file**: CSV with time, x, y, psi, u, v, omega_z, a_x, delta, delta_rate, slip_ratio_f, slip_ratio_r
    - **n0**: initial guess (defaults to the configured value)

    The logged states are used as the measurements
    """
    start_time = time.time()
    run_id = str(uuid.uuid4())

    contents = await file.read()
    if len(contents) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=413, detail=f"Upload exceeds {MAX_UPLOAD_BYTES} bytes.")

    try:
        model = state.model()
    except ModelFileError as e:
        logger.error(f"Surrogate could not be loaded: {e}")
        raise HTTPException(status_code=503, detail=f"Surrogate model unavailable: {e}")
    if model is None:
        raise HTTPException(status_code=503, detail="No surrogate model loaded; set TERRA_MODEL.")

    def failure(status_code: int, e: Exception):
        metrics_store.add_request({'run_id': run_id, 'endpoint': 'estimate', 'filename': file.filename,
                                   'status': 'failed', 'error': str(e),
                                   'processing_time': round(time.time() - start_time, 4),
                                   'timestamp': datetime.now().isoformat()})
        return HTTPException(status_code=status_code, detail=f"Estimation failed: {e}")

    try:
        cfg = state.config()
        log = _parse_log(contents)
        initial = cfg.estimator.n0 if n0 is None else n0
        logger.info(f"Processing estimate {run_id} for {file.filename} ({len(log)} samples)")
        loop = asyncio.get_running_loop()
        trace = await loop.run_in_executor(
            executor,
            lambda: run_estimator(log, cfg.estimator.to_ukf_config(), model, cfg.terrain.to_params(), initial,
                                  None, cfg.vehicle.to_params(), cfg.geometry.to_geometry())
        )
    except (TerraError, ValueError) as e:
        logger.warning(f"Estimate {run_id} rejected: {e}")
        raise failure(400, e)
    except Exception as e:
        logger.error(f"Error processing estimate {run_id}: {str(e)}")
        raise failure(500, e)

    processing_time = time.time() - start_time
    step_ms = 1e3 * trace.step_seconds
    response = EstimateResponse(
        run_id=run_id,
        status='success',
        final_n=trace.final_n,
        n0=initial,
        samples=len(trace),
        mean_step_ms=round(float(step_ms.mean()), 4),
        peak_step_ms=round(float(step_ms.max()), 4),
        statistics=trace.statistics,
        processing_time=round(processing_time, 4),
    )
    metrics_store.add_request({**response.model_dump(), 'endpoint': 'estimate', 'filename': file.filename,
                               'timestamp': datetime.now().isoformat()})
    logger.info(f"Estimate {run_id} completed: n-hat {trace.final_n:.4f}")
    return response


@app.get("/api/v1/report/{run_id}")
async def get_run_report(run_id: str):
    """
    Get the stored summary of a previous estimate request

    - **run_id**: UUID returned by /api/v1/estimate
    """
    entry = metrics_store.find(run_id)
    if entry is not None:
        return entry
    raise HTTPException(
        status_code=404,
        detail=f"Run {run_id} not found"
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
