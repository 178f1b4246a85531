from fastapi import APIRouter, HTTPException
import logging
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../../'))

from errors import ReportIOError
from models import AccuracyOverview
from report import summarize_accuracies
from store import get_result_store

logger = logging.getLogger(__name__)
router = APIRouter()

@router.get("/runs/{run_id}/metrics", response_model=AccuracyOverview)
async def get_run_metrics(run_id: str):
    """Mean and range of held-out accuracy per mode and model"""
    try:
        result = get_result_store().load(run_id)
    except ReportIOError as e:
        logger.error(f"Failed to load run {run_id}: {str(e)}")
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
    return summarize_accuracies(result)
