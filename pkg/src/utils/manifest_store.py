import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union
import logging

from pydantic import BaseModel, Field

from src import __version__
from src.core.errors import PanelValidationError
from src.utils.helpers import file_digest, to_jsonable, write_json


class FileRecord(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Provenance of one command run: inputs and outputs with digests, parameters, version"""
    command: str
    inputs: Dict[str, FileRecord] = Field(default_factory=dict)
    outputs: Dict[str, FileRecord] = Field(default_factory=dict)
    parameters: Dict[str, Any] = Field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = ""

    def add_input(self, name: str, path: Union[str, Path]) -> None:
        if not Path(path).is_file():
            raise PanelValidationError(f"input file not found: {path}")
        self.inputs[name] = FileRecord(path=str(path), sha256=file_digest(path))

    def add_output(self, name: str, path: Union[str, Path]) -> None:
        self.outputs[name] = FileRecord(path=str(path), sha256=file_digest(path))


class ManifestStore:
    """Writes one manifest per command into the run's output directory"""

    def __init__(self, output_dir: Union[str, Path] = "output"):
        self.output_dir = Path(output_dir)
        self.logger = logging.getLogger(__name__)
        self._init_directories()

    def _init_directories(self):
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def manifest_path(self, command: str) -> Path:
        return self.output_dir / f"{command.replace('-', '_')}_manifest.json"

    def new_manifest(self, command: str, parameters: Optional[Dict[str, Any]] = None) -> RunManifest:
        return RunManifest(command=command, parameters=to_jsonable(parameters or {}))

    def save(self, manifest: RunManifest) -> Path:
        """Stamp and save; the timestamp lives only in the manifest, never in data outputs"""
        try:
            manifest.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
            path = write_json(manifest.model_dump(), self.manifest_path(manifest.command))
            self.logger.info(f"Saved run manifest {path}")
            return path
        except Exception as e:
            self.logger.error(f"Error saving manifest for {manifest.command}: {str(e)}")
            raise

    def load(self, command: str) -> Optional[RunManifest]:
        path = self.manifest_path(command)
        try:
            with open(path, "r", encoding="utf-8") as f:
                return RunManifest(**json.load(f))
        except FileNotFoundError:
            return None
