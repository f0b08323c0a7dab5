"""Trainable-parameter comparison between parallel LoRA and Serial LoRA."""
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from nn.adapter import AdapterMode, Slot, param_count
from utils.reporting import write_csv

PARAM_COLUMNS = ("name", "parallel_count", "serial_count", "ratio")


class ParamSpec(BaseModel):
    """One model row of the comparison."""
    model_config = ConfigDict(extra="forbid")

    name: str
    d_model: int = Field(..., ge=1)
    n_blocks: int = Field(..., ge=1)
    rank: int = Field(..., ge=1)
    # Projections carrying a parallel adapter
    slots: list[str] = Field(default_factory=lambda: list(Slot.PROJECTIONS))
    # Optional (d_out, d_in) per slot for non-square projections
    slot_dims: Optional[dict[str, tuple[int, int]]] = None

    @field_validator("slots")
    @classmethod
    def check_slots(cls, v: list[str]) -> list[str]:
        if not v:
            raise ValueError("a parallel spec needs at least one adapted slot")
        bad = [s for s in v if s not in Slot.PROJECTIONS]
        if bad:
            raise ValueError(f"unknown slot {bad[0]!r}; expected one of {list(Slot.PROJECTIONS)}")
        return v

    @property
    def parallel_count(self) -> int:
        return param_count(self.d_model, self.rank, self.n_blocks, AdapterMode.PARALLEL,
                           self.slots, self.slot_dims)

    @property
    def serial_count(self) -> int:
        return param_count(self.d_model, self.rank, self.n_blocks, AdapterMode.SERIAL)

    @property
    def ratio(self) -> float:
        return self.parallel_count / self.serial_count


def load_specs(path: Path | str) -> list[ParamSpec]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return TypeAdapter(list[ParamSpec]).validate_python(raw)


def param_report(specs: Sequence[ParamSpec], out_path: Path | str) -> list[tuple]:
    if not specs:
        raise ValueError("param_report needs at least one model spec")
    rows = [(s.name, s.parallel_count, s.serial_count, s.ratio) for s in specs]
    write_csv(out_path, PARAM_COLUMNS, rows)
    logging.info(f"Parameter report: {len(rows)} models -> {out_path}")
    return rows
