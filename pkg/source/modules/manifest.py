from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from modules.enums import ActionClass
from modules.errors import DataError, UsageError

if TYPE_CHECKING:
    from collections.abc import Iterable

logger = logging.getLogger()

MANIFEST_NAME = "manifest.jsonl"
SELECTOR_FIELDS = ("room", "subject", "label", "id")


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    label: ActionClass
    subject: str
    room: str
    wav: str
    "Path of the WAV relative to the manifest directory"

    seed: int

    def to_dict(self):
        return {
            "id": self.id,
            "label": self.label.slug,
            "subject": self.subject,
            "room": self.room,
            "seed": self.seed,
            "wav": self.wav,
        }

    @classmethod
    def from_dict(cls, dct: dict):
        try:
            return cls(
                id=str(dct["id"]),
                label=ActionClass.from_slug(dct["label"]),
                subject=str(dct["subject"]),
                room=str(dct["room"]),
                wav=str(dct["wav"]),
                seed=int(dct["seed"]),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"Malformed manifest record {dct!r}: {e}") from e

    def field_value(self, name: str) -> str:
        if name == "label":
            return self.label.slug
        return str(getattr(self, name))


@dataclass(frozen=True)
class Selector:
    """Conjunction of `field=value[,value...]` terms over room, subject, label and id.

    Terms are separated by whitespace or semicolons; an empty selector (or "*") selects everything.
    """

    terms: tuple[tuple[str, frozenset[str]], ...] = ()

    @classmethod
    def parse(cls, text: str | None) -> Selector:
        if text is None or not text.strip() or text.strip() == "*":
            return cls()

        terms = []
        for part in re.split(r"[;\s]+", text.strip()):
            if not part:
                continue
            name, sep, values = part.partition("=")
            name = name.strip()
            if not sep or name not in SELECTOR_FIELDS:
                raise UsageError(f"Bad selector term {part!r}; expected one of {', '.join(SELECTOR_FIELDS)}=value")
            wanted = frozenset(v.strip() for v in values.split(",") if v.strip())
            if not wanted:
                raise UsageError(f"Selector term {part!r} names no values")
            terms.append((name, wanted))
        return cls(tuple(terms))

    def matches(self, record: ManifestRecord) -> bool:
        return all(record.field_value(name) in wanted for name, wanted in self.terms)

    def __str__(self):
        if not self.terms:
            return "*"
        return " ".join(f"{name}={','.join(sorted(wanted))}" for name, wanted in self.terms)


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path = field(default_factory=Path)
    "Directory the WAV paths are relative to"

    def __post_init__(self):
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise DataError(f"Duplicate manifest id {record.id!r}")
            seen.add(record.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def wav_path(self, record: ManifestRecord) -> Path:
        return self.root / record.wav

    def select(self, selector: Selector | str | None) -> list[ManifestRecord]:
        if not isinstance(selector, Selector):
            selector = Selector.parse(selector)
        return [record for record in self.records if selector.matches(record)]

    def subset(self, records: Iterable[ManifestRecord]) -> DatasetManifest:
        return DatasetManifest(records=list(records), root=self.root)

    def values(self, name: str) -> list[str]:
        """Distinct values of one field, in first-seen order."""
        return list(dict.fromkeys(record.field_value(name) for record in self.records))

    @classmethod
    def load(cls, path: Path, check_files=True) -> DatasetManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME

        records = []
        try:
            with path.open(encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        records.append(ManifestRecord.from_dict(json.loads(line)))
                    except json.decoder.JSONDecodeError as e:
                        raise DataError(f"{path}:{lineno}: {e}") from e
        except OSError as e:
            raise DataError(f"Failed to read manifest {path}: {e}") from e

        manifest = cls(records=records, root=path.parent)
        if check_files:
            for record in records:
                if not manifest.wav_path(record).is_file():
                    raise DataError(f"{record.id}: missing recording {manifest.wav_path(record)}")

        logger.debug(f"Loaded {len(records)} manifest records from {path}")
        return manifest

    def save(self, path: Path) -> Path:
        path = Path(path)
        with ManifestWriter(path) as writer:
            for record in self.records:
                writer.append(record)
        return path


class ManifestWriter:
    """Append-only JSON-lines writer; each record is one locked write and flush."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._handle = None
        self.count = 0

    def __enter__(self):
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        except OSError as e:
            raise DataError(f"Failed to open manifest {self.path}: {e}") from e
        return self

    def append(self, record: ManifestRecord):
        line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
        with self._lock:
            self._handle.write(line)
            self._handle.flush()
            self.count += 1

    def __exit__(self, *exc):
        if self._handle is not None:
            self._handle.close()
            self._handle = None
        return False
