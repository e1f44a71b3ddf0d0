"""
Status models for tracking harness grid cells.
"""
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field


class CellStatus(str, Enum):
    """Grid cell status enumeration."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class CellRun(BaseModel):
    """
    Tracking model for one experiment grid cell.

    A cell is an isolated fit (one step size, one rank, one method) with its
    own sub-seed.
    """
    cell_id: str = Field(..., description="Deterministic cell key, e.g. 'joint/eps=-4.4'")
    experiment: str = Field(..., description="Experiment the cell belongs to")
    status: CellStatus = Field(default=CellStatus.PENDING, description="Current cell status")
    seed: Optional[int] = Field(None, description="Sub-seed used by the cell")
    error_message: Optional[str] = Field(None, description="Error message if the cell failed")
    metadata: Dict[str, Any] = Field(default_factory=dict, description="Cell parameters and results")

    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc), description="Cell creation timestamp")
    started_at: Optional[datetime] = Field(None, description="Cell start timestamp")
    completed_at: Optional[datetime] = Field(None, description="Cell completion timestamp")

    class Config:
        use_enum_values = True
        json_schema_extra = {
            "example": {
                "cell_id": "joint/eps=-4.4",
                "experiment": "convergence-sweep",
                "status": "completed",
                "seed": 1234,
                "metadata": {"log10_step": -4.4, "iterations": 812}
            }
        }
