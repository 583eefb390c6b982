"""Line-delimited dataset manifests.

A manifest is UTF-8 JSONL: one header line followed by one record per
entry. File references inside entries are relative to the directory the
manifest lives in, so a manifest plus its payload directory is a portable
unit.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError

MANIFEST_VERSION = 1

_KNOWN_FIELDS = ("id", "label", "image", "dataset", "condition", "split")


def canonical_json(obj) -> str:
    """Stable single-line JSON used for headers, records, and hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: str | None = None
    image: str | None = None
    dataset: str | None = None
    condition: str | None = None
    split: str | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        record = {}
        for name in _KNOWN_FIELDS:
            value = getattr(self, name)
            if value is not None:
                record[name] = value
        for key, value in self.extra.items():
            if key in _KNOWN_FIELDS:
                raise ManifestError(f"entry {self.id!r}: extra field {key!r} shadows a core field")
            record[key] = value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ManifestEntry":
        if "id" not in record:
            raise ManifestError(f"manifest record without id: {record!r}")
        known = {name: record.get(name) for name in _KNOWN_FIELDS}
        extra = {k: v for k, v in record.items() if k not in _KNOWN_FIELDS}
        return cls(extra=extra, **known)


@dataclass
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    header: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        self.entries = tuple(self.entries)
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise ManifestError(f"duplicate entry id {entry.id!r}")
            seen.add(entry.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, ref: str) -> Path:
        """Resolve an entry file reference against the manifest root."""
        if self.root is None:
            raise ManifestError("manifest has no root directory; load or save it first")
        path = Path(ref)
        if path.is_absolute() or ".." in path.parts:
            raise ManifestError(f"ref {ref!r} must be relative and stay inside the root")
        return self.root / path

    def with_entries(self, entries, **header_updates) -> "DatasetManifest":
        header = dict(self.header)
        header.update(header_updates)
        return DatasetManifest(tuple(entries), header=header, root=self.root)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        if not lines:
            raise ManifestError(f"{path}: empty manifest")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:1: bad JSON: {exc}") from exc
        if not isinstance(header, dict) or "manifest_version" not in header:
            raise ManifestError(f"{path}: first line must be a manifest header")
        if header["manifest_version"] != MANIFEST_VERSION:
            raise ManifestError(f"{path}: unsupported manifest version {header['manifest_version']!r}")
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            entries.append(ManifestEntry.from_record(record))
        return cls(tuple(entries), header=header, root=path.parent)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"manifest_version": MANIFEST_VERSION}
        header.update(self.header)
        lines = [canonical_json(header)]
        lines.extend(canonical_json(e.to_record()) for e in self.entries)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.root = path.parent
        return path

    def content_hash(self) -> str:
        header = {"manifest_version": MANIFEST_VERSION}
        header.update(self.header)
        text = "\n".join([canonical_json(header)] + [canonical_json(e.to_record()) for e in self.entries])
        return hashlib.sha256(text.encode("utf-8")).hexdigest()
