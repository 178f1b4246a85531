import sys
import os
import logging

# Add the current directory to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from routes import api_router
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

app = FastAPI(
    title="Federated Reproducibility Workbench",
    description="Federated GNN training with top-K biomarker reproducibility analysis",
    version="1.0.0",
)

# Add CORS middleware for local notebook / dashboard clients
app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000", "http://127.0.0.1:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include API router
app.include_router(api_router)


@app.get("/")
async def root():
    """Service banner"""
    return {
        "app": "Federated Reproducibility Workbench",
        "message": "Backend is running",
        "docs": "/docs",
    }
