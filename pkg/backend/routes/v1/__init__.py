"""V1 API routes."""

from fastapi import APIRouter

from .runs import router as runs_router
from .metrics import router as metrics_router
from .healthcheck import router as healthcheck_router

router = APIRouter()

# Include endpoint-specific routers
router.include_router(healthcheck_router)
router.include_router(runs_router)
router.include_router(metrics_router)
