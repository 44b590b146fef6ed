"""Crash report cases: one identifier, a summary text, and an optional sketch image."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


@dataclass(frozen=True)
class CrashReport:
    case_id: str
    summary: str
    sketch: bytes | None = None
    sketch_media_type: str | None = None

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        if not self.summary.strip():
            raise ValueError(f"case {self.case_id}: summary must be non-empty")
        if self.sketch is not None and not self.sketch_media_type:
            raise ValueError(f"case {self.case_id}: sketch bytes need a media type")


def load_case_dir(path: Path) -> CrashReport:
    """Read one ``case_<id>/`` directory: ``summary.txt`` plus optional sketch image."""
    path = Path(path)
    case_id = path.name.removeprefix("case_")
    summary_file = path / "summary.txt"
    if not summary_file.is_file():
        raise FileNotFoundError(f"{path}: no summary.txt")
    sketch = media = None
    for ext, media_type in _MEDIA_TYPES.items():
        candidate = path / f"sketch{ext}"
        if candidate.is_file():
            sketch = candidate.read_bytes()
            media = media_type
            break
    return CrashReport(case_id=case_id, summary=summary_file.read_text(),
                       sketch=sketch, sketch_media_type=media)


def load_cases(directory: Path) -> list[CrashReport]:
    """Load every ``case_*`` subdirectory, sorted by case id."""
    directory = Path(directory)
    reports = []
    for sub in sorted(directory.iterdir()):
        if sub.is_dir() and sub.name.startswith("case_"):
            reports.append(load_case_dir(sub))
    return reports
