"""Versioned on-disk repository for portable model documents.

Layout: ``<root>/<model_id>/<version>.pmml`` plus a ``manifests.json``
index. Versions are monotone per model id; exactly one version per
target is active at a time, and activation swaps the index atomically.
Documents are digest-checked on load.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .pmml import from_pmml
from .trees import RegressionTree

VALID_TARGETS = ("epmi", "cpe", "npe")


class RepositoryError(Exception):
    pass


class MissingModelError(RepositoryError):
    pass


class CorruptModelError(RepositoryError):
    pass


@dataclass
class ModelManifest:
    model_id: str
    target: str
    version: int
    created_at: str
    training_window: tuple[str, str]
    document_digest: str
    active: bool = False


def document_digest(document: str) -> str:
    return hashlib.sha256(document.encode("utf-8")).hexdigest()


class ModelRepository:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._manifests: list[ModelManifest] = []
        index = self.root / "manifests.json"
        if index.exists():
            data = json.loads(index.read_text(encoding="utf-8"))
            for raw in data["manifests"]:
                raw["training_window"] = tuple(raw["training_window"])
                self._manifests.append(ModelManifest(**raw))

    def _write_index(self) -> None:
        payload = {"manifests": [
            {**asdict(m), "training_window": list(m.training_window)}
            for m in self._manifests
        ]}
        tmp = self.root / "manifests.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        os.replace(tmp, self.root / "manifests.json")

    def list_manifests(self) -> list[ModelManifest]:
        return list(self._manifests)

    def save_model(self, document: str, model_id: str, target: str,
                   training_window: tuple[str, str]) -> ModelManifest:
        """Store a document under the next version of model_id.

        The first version saved for a target becomes active so the
        one-active-per-target invariant holds as soon as a model exists.
        """
        if target not in VALID_TARGETS:
            raise RepositoryError(
                f"target {target!r} not one of {VALID_TARGETS}")
        versions = [m.version for m in self._manifests
                    if m.model_id == model_id]
        version = max(versions, default=0) + 1
        manifest = ModelManifest(
            model_id=model_id,
            target=target,
            version=version,
            created_at=dt.datetime.now(dt.timezone.utc).isoformat(),
            training_window=tuple(training_window),
            document_digest=document_digest(document),
            active=not any(m.target == target and m.active
                           for m in self._manifests),
        )
        model_dir = self.root / model_id
        model_dir.mkdir(parents=True, exist_ok=True)
        (model_dir / f"{version}.pmml").write_text(document, encoding="utf-8")
        self._manifests.append(manifest)
        self._write_index()
        return manifest

    def _find(self, model_id: str, version: int) -> ModelManifest:
        for manifest in self._manifests:
            if manifest.model_id == model_id and manifest.version == version:
                return manifest
        raise MissingModelError(f"no model {model_id!r} version {version}")

    def activate(self, model_id: str, version: int) -> ModelManifest:
        chosen = self._find(model_id, version)
        for manifest in self._manifests:
            if manifest.target == chosen.target:
                manifest.active = manifest is chosen
        self._write_index()
        return chosen

    def load(self, model_id: str,
             version: int) -> tuple[RegressionTree, ModelManifest]:
        manifest = self._find(model_id, version)
        path = self.root / model_id / f"{version}.pmml"
        if not path.exists():
            raise MissingModelError(f"document file missing: {path}")
        document = path.read_text(encoding="utf-8")
        if document_digest(document) != manifest.document_digest:
            raise CorruptModelError(
                f"digest mismatch for {model_id} v{version}")
        return from_pmml(document), manifest

    def get_active(self, target: str) -> tuple[RegressionTree, ModelManifest]:
        for manifest in self._manifests:
            if manifest.target == target and manifest.active:
                return self.load(manifest.model_id, manifest.version)
        raise MissingModelError(f"no active model for target {target!r}")

    def active_manifest(self, target: str) -> Optional[ModelManifest]:
        for manifest in self._manifests:
            if manifest.target == target and manifest.active:
                return manifest
        return None
