from typing import Dict
from pydantic import BaseModel, ConfigDict, Field


class StreamState(BaseModel):
    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(ge=0)
    stream_id: int = Field(ge=0)
    counter: int = Field(default=0, ge=0)


class SessionState(BaseModel):
    """Serialisable snapshot of a query session."""
    master_seed: int = Field(ge=0)
    query_counter: int = Field(default=0, ge=0)
    # stream id -> draws consumed
    streams: Dict[int, int] = Field(default_factory=dict)
