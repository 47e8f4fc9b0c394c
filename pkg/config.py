# config.py
import os
from pathlib import Path
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

load_dotenv()

DATA_DIR = Path(__file__).resolve().parent / "data"

SECTION_KINDS = ("abstract", "introduction", "method", "result", "discussion", "other")
DEFAULT_SECTIONS = ("abstract", "method", "result")
ABLATIONS = ("no_sentfinder", "no_qa", "no_filter")


def get_seed(default: int = 13) -> int:
    return int(os.getenv("AGEX_SEED", default))

def get_confidence_threshold(default: float = 0.5) -> float:
    return float(os.getenv("AGEX_CONFIDENCE_THRESHOLD", default))

def get_jobs(default: int = 1) -> int:
    return max(1, int(os.getenv("AGEX_JOBS", default)))

def get_log_level(default: str = "INFO") -> str:
    return os.getenv("AGEX_LOG_LEVEL", default).strip().upper()

def get_cues_path() -> Path:
    return Path(os.getenv("AGEX_CUES", DATA_DIR / "speculation_cues.txt"))

def get_patterns_path() -> Path:
    return Path(os.getenv("AGEX_PATTERNS", DATA_DIR / "age_patterns.tsv"))


class RunConfig(BaseModel):
    """Settings shared by the extraction, baseline and ablation subcommands."""

    seed: int = Field(default_factory=get_seed)
    confidence_threshold: float = Field(default_factory=get_confidence_threshold)
    sections: List[str] = Field(default_factory=lambda: list(DEFAULT_SECTIONS))
    cues_path: Path = Field(default_factory=get_cues_path)
    patterns_path: Path = Field(default_factory=get_patterns_path)
    ablations: List[str] = Field(default_factory=list)
    filter_stage: Literal["before", "after"] = "before"
    jobs: int = Field(default_factory=get_jobs, ge=1)

    @field_validator("confidence_threshold")
    @classmethod
    def _threshold_in_unit_interval(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"confidence threshold must lie in [0, 1], got {value}")
        return value

    @field_validator("sections")
    @classmethod
    def _known_sections(cls, value: List[str]) -> List[str]:
        unknown = [s for s in value if s not in SECTION_KINDS]
        if unknown:
            raise ValueError(f"unknown section kinds: {', '.join(unknown)}")
        return value

    @field_validator("ablations")
    @classmethod
    def _known_ablations(cls, value: List[str]) -> List[str]:
        unknown = [a for a in value if a not in ABLATIONS]
        if unknown:
            raise ValueError(f"unknown ablations: {', '.join(unknown)}")
        return sorted(set(value))

    def has_ablation(self, name: str) -> bool:
        return name in self.ablations


def run_config_from(overrides: Optional[dict] = None) -> RunConfig:
    """Build a RunConfig from environment defaults, dropping overrides that are None."""
    values = {k: v for k, v in (overrides or {}).items() if v is not None}
    return RunConfig(**values)
