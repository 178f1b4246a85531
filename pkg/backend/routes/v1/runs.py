from fastapi import APIRouter, HTTPException, Response
from typing import List
import logging
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../../'))

from errors import ReportIOError, UsageError, WorkbenchError
from experiment import run_experiment
from models import ExperimentConfig, RunMode, RunResult
from report import heatmap_svg
from store import get_result_store

logger = logging.getLogger(__name__)

router = APIRouter()


def _load_run(run_id: str) -> RunResult:
    try:
        return get_result_store().load(run_id)
    except ReportIOError as e:
        logger.error(f"Failed to load run {run_id}: {str(e)}")
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")


@router.get("/runs", response_model=List[str])
async def list_runs():
    """Ids of all persisted runs"""
    return get_result_store().list_runs()


@router.get("/runs/{run_id}", response_model=RunResult)
async def get_run(run_id: str):
    """Full persisted result of one run"""
    return _load_run(run_id)


@router.get("/runs/{run_id}/heatmap/{mode}")
async def get_heatmap(run_id: str, mode: RunMode):
    """Averaged reproducibility matrix of one training arm as SVG"""
    result = _load_run(run_id)
    try:
        mode_result = result.mode_result(mode)
    except KeyError:
        raise HTTPException(status_code=404, detail=f"Run {run_id} has no {mode.value} results")
    svg = heatmap_svg(mode_result.average_matrix, title=f"{mode.value} average reproducibility")
    return Response(content=svg, media_type="image/svg+xml")


@router.post("/runs", response_model=RunResult)
def create_run(cfg: ExperimentConfig):
    """Run an experiment synchronously and persist it in the result store"""
    store = get_result_store()
    try:
        logger.info(f"🔧 Launching run for config {cfg.name}")
        return run_experiment(cfg, store=store)
    except UsageError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except WorkbenchError as e:
        logger.error(f"❌ Run failed: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
