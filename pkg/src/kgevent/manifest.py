"""Content-hashed record of pipeline stages, used to refuse stale intermediate artifacts."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"


class StaleArtifact(ValueError):
    pass


def content_hash(path) -> str:
    """sha256 of a file, or of every file under a directory (relative name + bytes, sorted)."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(q for q in p.rglob("*") if q.is_file()):
            rel = f.relative_to(p).as_posix()
            h.update(rel.encode() + b"\0")
            h.update(hashlib.sha256(f.read_bytes()).digest())
    elif p.is_file():
        h.update(p.read_bytes())
    else:
        raise FileNotFoundError(str(p))
    return h.hexdigest()


@dataclass
class PipelineManifest:
    """``stages``: name -> {inputs: {path: hash}, outputs: {path: hash}, config: hash, complete: bool}.

    Paths are stored relative to the manifest's directory when they live under
    it, so two pipeline trees produced from identical inputs are byte-identical.
    """

    path: Path
    stages: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def open(cls, path) -> "PipelineManifest":
        path = Path(path)
        if path.exists():
            return cls(path, json.loads(path.read_text())["stages"])
        return cls(path)

    @property
    def root(self) -> Path:
        return self.path.resolve().parent

    def key(self, p) -> str:
        p = Path(p).resolve()
        try:
            return p.relative_to(self.root).as_posix()
        except ValueError:
            return str(p)

    def producers(self) -> dict[str, tuple[str, str]]:
        """artifact key -> (stage, recorded hash)."""
        out = {}
        for stage, rec in self.stages.items():
            for k, h in rec.get("outputs", {}).items():
                out[k] = (stage, h)
        return out

    def _resolve(self, key: str) -> Path:
        return Path(key) if os.path.isabs(key) else self.root / key

    def check(self, stage: str, inputs) -> None:
        """Raise StaleArtifact if an input produced upstream changed, or its producer's inputs did."""
        producers = self.producers()
        for p in inputs:
            k = self.key(p)
            if k not in producers:
                continue
            upstream, recorded = producers[k]
            if content_hash(p) != recorded:
                raise StaleArtifact(f"{stage}: {k} was modified after stage {upstream!r} produced it "
                                    f"(rerun {upstream} or pass --force)")
            for dep, dep_hash in self.stages[upstream].get("inputs", {}).items():
                dep_path = self._resolve(dep)
                if not dep_path.exists() or content_hash(dep_path) != dep_hash:
                    raise StaleArtifact(f"{stage}: input {dep} of stage {upstream!r} changed since it ran "
                                        f"(rerun {upstream} or pass --force)")

    def record(self, stage: str, inputs, outputs, config_hash: str = "") -> None:
        self.stages[stage] = {
            "inputs": {self.key(p): content_hash(p) for p in inputs},
            "outputs": {self.key(p): content_hash(p) for p in outputs},
            "config": config_hash,
            "complete": True,
        }
        self.save()

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        ordered = {k: self.stages[k] for k in sorted(self.stages)}
        self.path.write_text(json.dumps({"stages": ordered}, indent=2, sort_keys=True) + "\n")
