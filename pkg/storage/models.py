from typing import Literal, Optional
from pydantic import BaseModel, ConfigDict, Field

# Dataset kinds
class DatasetKind:
    REGRESSION = "regression"
    CLASSIFICATION = "classification"

class ModelManifest(BaseModel):
    """model.json: shape of a frozen encoder stack checkpoint."""
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(..., ge=1, description="Feature dimension of every block.")
    heads: int = Field(..., ge=1, description="Attention heads per block.")
    n_blocks: int = Field(..., ge=0, description="Number of attention blocks.")

class AdapterManifest(BaseModel):
    """adapter.json: how the adapter factors in the directory were created."""
    model_config = ConfigDict(extra="forbid")

    mode: Literal["parallel", "serial"]
    d_model: int = Field(..., ge=1)
    rank: int = Field(..., ge=1)
    n_blocks: int = Field(..., ge=0)
    seed: int = Field(0, description="Base seed used by init_adapter.")
    # Standard deviation of the Gaussian A factors at init
    std: float = Field(..., ge=0)

class DatasetManifest(BaseModel):
    """dataset.json: shapes and split sizes of a dataset directory."""
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(..., ge=1)
    n_tokens: int = Field(..., ge=1)
    kind: Literal["regression", "classification"]
    n_train: int = Field(..., ge=0)
    n_eval: int = Field(..., ge=0)
    # Only meaningful for classification datasets
    n_classes: Optional[int] = Field(None, ge=2)
