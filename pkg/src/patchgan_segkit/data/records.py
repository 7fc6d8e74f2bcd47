"""Dataset manifests: an ordered list of image-mask sample records.

On disk a dataset directory holds ``manifest.jsonl`` (one record per line,
UTF-8), a ``manifest.meta.json`` header with name, channel semantics and
per-split counts, and the tensor files the records point at (paths relative
to the directory, absolute paths allowed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from . import tensorio

SPLITS = ("train", "test")

MANIFEST_FILE = "manifest.jsonl"
META_FILE = "manifest.meta.json"

_RECORD_FIELDS = (
    "id",
    "image_path",
    "mask_path",
    "height",
    "width",
    "channels",
    "split",
    "source_id",
)


@dataclass
class SampleRecord:
    """One image-mask pair; source_id ties derived crops/augments to their
    parent image so splits can be kept leak-free."""

    id: str
    image_path: str
    mask_path: str
    height: int
    width: int
    channels: int
    split: str
    source_id: str

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in _RECORD_FIELDS})

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed manifest line: {exc}") from exc
        unknown = set(obj) - set(_RECORD_FIELDS)
        missing = set(_RECORD_FIELDS) - set(obj)
        if unknown or missing:
            raise DataError(
                f"manifest record has unknown fields {sorted(unknown)} / "
                f"missing fields {sorted(missing)}"
            )
        return cls(**obj)


@dataclass
class DatasetManifest:
    """Ordered listing of records plus channel semantics; record order is
    stable because subset sampling depends on it."""

    name: str
    records: list[SampleRecord]
    channel_semantics: list[str]
    root: Path | None = None  # directory paths resolve against; not serialized

    def validate(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate record ids in manifest: {dup[:5]}")
        for r in self.records:
            if r.split not in SPLITS:
                raise DataError(f"record {r.id}: invalid split {r.split!r}")
        channels = {r.channels for r in self.records}
        if len(channels) > 1:
            raise DataError(f"records disagree on channel count: {sorted(channels)}")
        if self.records and self.channel_semantics:
            c = self.records[0].channels
            if len(self.channel_semantics) != c:
                raise DataError(
                    f"channel_semantics has {len(self.channel_semantics)} entries "
                    f"but records have {c} channels"
                )
        train_src = {r.source_id for r in self.records if r.split == "train"}
        test_src = {r.source_id for r in self.records if r.split == "test"}
        leaked = train_src & test_src
        if leaked:
            raise DataError(
                f"source ids appear in both splits: {sorted(leaked)[:5]}"
            )

    @property
    def channels(self) -> int:
        if not self.records:
            raise DataError(f"manifest {self.name!r} has no records")
        return self.records[0].channels

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def train_records(self) -> list[SampleRecord]:
        return self.split_records("train")

    def test_records(self) -> list[SampleRecord]:
        return self.split_records("test")

    def jsonl_payload(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def digest(self) -> str:
        """sha256 of the serialized record list: identifies the exact dataset."""
        return hashlib.sha256(self.jsonl_payload().encode("utf-8")).hexdigest()

    def save(self, root: str | Path) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        self.validate()
        (root / MANIFEST_FILE).write_text(self.jsonl_payload(), encoding="utf-8")
        meta = {
            "name": self.name,
            "channel_semantics": list(self.channel_semantics),
            "counts": {
                "train": len(self.train_records()),
                "test": len(self.test_records()),
            },
        }
        (root / META_FILE).write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self.root = root

    @classmethod
    def load(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        manifest_path = root / MANIFEST_FILE
        meta_path = root / META_FILE
        if not manifest_path.is_file() or not meta_path.is_file():
            raise DataError(f"{root} does not contain a dataset manifest")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed {meta_path}: {exc}") from exc
        records = [
            SampleRecord.from_json(line)
            for line in manifest_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        manifest = cls(
            name=meta.get("name", root.name),
            records=records,
            channel_semantics=list(meta.get("channel_semantics", [])),
            root=root,
        )
        manifest.validate()
        return manifest

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if p.is_absolute():
            return p
        if self.root is None:
            raise DataError(
                f"manifest {self.name!r} has no root directory; cannot resolve "
                f"relative path {rel!r}"
            )
        return self.root / p

    def load_image(self, record: SampleRecord) -> np.ndarray:
        return tensorio.load_image(self.resolve(record.image_path))

    def load_mask(self, record: SampleRecord) -> np.ndarray:
        return tensorio.load_mask(self.resolve(record.mask_path))

    def load_pair(self, record: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
        return self.load_image(record), self.load_mask(record)

    def meta_dict(self) -> dict:
        d = asdict(self)
        d.pop("root")
        return d
