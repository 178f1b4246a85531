"""
Run result persistence: one pretty-printed JSON document per run under
<output_dir>/<run_id>/result.json, written atomically.
"""
import os
import logging
import tempfile
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from errors import ReportIOError
from models import RunResult

logger = logging.getLogger(__name__)

RESULT_FILE = "result.json"


def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary file and rename so readers never see partial files"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(temporary, path)
    except OSError as e:
        raise ReportIOError(f"cannot write {path}: {e}")
    return path


class ResultStore:
    """Filesystem store of run results"""

    def __init__(self, root):
        self.root = Path(root)
        logger.info(f"🔧 Result store at {self.root}")

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def save(self, result: RunResult) -> Path:
        path = atomic_write_text(self.run_dir(result.run_id) / RESULT_FILE, result.model_dump_json(indent=2))
        logger.info(f"💾 Saved run {result.run_id} to {path}")
        return path

    def load(self, run_id: str) -> RunResult:
        return load_result(self.run_dir(run_id) / RESULT_FILE)

    def list_runs(self) -> List[str]:
        if not self.root.exists():
            return []
        return sorted(path.parent.name for path in self.root.glob(f"*/{RESULT_FILE}"))


def load_result(path) -> RunResult:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ReportIOError(f"cannot read result file {path}: {e}")
    try:
        return RunResult.model_validate_json(text)
    except ValidationError as e:
        raise ReportIOError(f"{path} is not a valid run result: {e.errors()[0]['msg']}")


# Global store instance
_store: Optional[ResultStore] = None


def get_result_store() -> ResultStore:
    """Get or create the global result store rooted at the configured output directory"""
    global _store
    if _store is None:
        from config import OUTPUT_DIR
        _store = ResultStore(OUTPUT_DIR)
    return _store
