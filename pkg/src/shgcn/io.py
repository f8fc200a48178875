"""Dataset text files, checkpoints and run manifests.

Dataset files hold one integer record per line, tab- or comma-separated:
``user<TAB>item`` for interactions and ``user1<TAB>user2<TAB>item`` for
triplets. Blank lines and lines starting with ``#`` are skipped.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic b"SHGCNCKP"
    uint32    format version (CHECKPOINT_VERSION)
    uint32    header length in bytes
    header    UTF-8 JSON: kind, num_users, num_items, dim, layers, normalize,
              arrays = [{"name", "shape"}, ...] in storage order
    payload   each array as float64 C-order, in header order
    32 bytes  SHA-256 of everything above

Array order is the model's ``param_names()``.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from shgcn.baseline import MfState
from shgcn.graph import DataError, Dataset
from shgcn.model import ModelState

MAGIC = b"SHGCNCKP"
CHECKPOINT_VERSION = 1
_SPLIT = re.compile(r"[\t,]")


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated or from another format version."""


# ---- datasets ---------------------------------------------------------------------

def read_records(path, width: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f.strip() for f in _SPLIT.split(text)]
            if len(fields) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}: {text!r}")
            try:
                rows.append([int(f) for f in fields])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer field in {text!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, width)


def _dedupe(records: np.ndarray) -> np.ndarray:
    if len(records) == 0:
        return records
    _, first = np.unique(records, axis=0, return_index=True)
    return records[np.sort(first)]


def load_dataset(interactions_path, triplets_path, derive_interactions: bool = False,
                 item_first: bool = False, dedupe: bool = False) -> Dataset:
    """Parse both files and densify ids.

    Raw ids are mapped to ``0..M-1`` / ``0..N-1`` in ascending raw order; the
    raw ids are kept on ``dataset.raw_user_ids`` / ``raw_item_ids``. With
    ``derive_interactions`` each triplet ``(i1, i2, j)`` also contributes the
    interactions ``(i1, j)`` and ``(i2, j)``.
    """
    inter = read_records(interactions_path, 2) if interactions_path else np.zeros((0, 2), np.int64)
    trip = read_records(triplets_path, 3) if triplets_path else np.zeros((0, 3), np.int64)
    if item_first:
        inter = inter[:, ::-1].copy()
    if dedupe:
        inter = _dedupe(inter)
        canon = np.column_stack([trip[:, :2].min(axis=1), trip[:, :2].max(axis=1), trip[:, 2]])
        _, first = np.unique(canon, axis=0, return_index=True) if len(trip) else (None, np.zeros(0, int))
        trip = trip[np.sort(first)]
    if derive_interactions and len(trip):
        derived = np.concatenate([trip[:, [0, 2]], trip[:, [1, 2]]])
        inter = _dedupe(np.concatenate([inter, derived]))

    raw_users = np.unique(np.concatenate([inter[:, 0], trip[:, 0], trip[:, 1]]))
    raw_items = np.unique(np.concatenate([inter[:, 1], trip[:, 2]]))
    if len(raw_users) == 0 or len(raw_items) == 0:
        raise DataError("no records found in the dataset files")
    inter_d = np.column_stack([np.searchsorted(raw_users, inter[:, 0]),
                               np.searchsorted(raw_items, inter[:, 1])]).astype(np.int64)
    trip_d = np.column_stack([np.searchsorted(raw_users, trip[:, 0]),
                              np.searchsorted(raw_users, trip[:, 1]),
                              np.searchsorted(raw_items, trip[:, 2])]).astype(np.int64)
    ds = Dataset(len(raw_users), len(raw_items), inter_d, trip_d, raw_users, raw_items)
    ds.validate()
    return ds


def write_dataset(dataset: Dataset, interactions_path, triplets_path) -> None:
    np.savetxt(interactions_path, dataset.interactions, fmt="%d", delimiter="\t")
    np.savetxt(triplets_path, dataset.triplets, fmt="%d", delimiter="\t")


def write_id_map(dataset: Dataset, path) -> None:
    users = dataset.raw_user_ids if dataset.raw_user_ids is not None else np.arange(dataset.num_users)
    items = dataset.raw_item_ids if dataset.raw_item_ids is not None else np.arange(dataset.num_items)
    Path(path).write_text(json.dumps({"users": users.tolist(), "items": items.tolist()}))


def dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<qq", dataset.num_users, dataset.num_items))
    for arr in (dataset.interactions, dataset.triplets):
        h.update(struct.pack("<q", len(arr)))
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


# ---- checkpoints ------------------------------------------------------------------

def save_checkpoint(model, path) -> None:
    names = model.param_names()
    header = {
        "kind": model.kind,
        "num_users": model.num_users,
        "num_items": model.num_items,
        "dim": model.dim,
        "layers": model.layers,
        "normalize": bool(getattr(model, "normalize", False)),
        "arrays": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<II", CHECKPOINT_VERSION, len(head))
    body += head
    for n in names:
        body += np.ascontiguousarray(model.params[n], dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(body))
    tmp.replace(path)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    version, head_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    offset = len(MAGIC) + 8
    header = json.loads(data[offset:offset + head_len].decode("utf-8"))
    offset += head_len
    params = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data) - 32:
            raise CheckpointError(f"{path}: payload shorter than header declares")
        params[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset) \
            .reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data) - 32:
        raise CheckpointError(f"{path}: trailing bytes after payload")

    M, N, d = header["num_users"], header["num_items"], header["dim"]
    if header["kind"] == "mf":
        model = MfState(M, N, d, params)
    elif header["kind"] == "shgcn":
        model = ModelState(M, N, d, header["layers"], params, header["normalize"])
    else:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    if sorted(model.param_names()) != sorted(params):
        raise CheckpointError(f"{path}: parameter set does not match a {header['kind']} model")
    return model


# ---- manifests --------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    model_kind: str
    seed: int
    config: dict
    dataset_hash: str
    config_hash: str = ""
    started: str = ""
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def append_manifest(manifest: RunManifest, path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(manifest), sort_keys=True) + "\n")


def read_manifests(path) -> list[RunManifest]:
    with open(path, encoding="utf-8") as fh:
        return [RunManifest(**json.loads(line)) for line in fh if line.strip()]


def verify_manifest(manifest: RunManifest, dataset: Dataset) -> None:
    actual = dataset_hash(dataset)
    if actual != manifest.dataset_hash:
        raise DataError(f"dataset hash {actual[:12]} does not match manifest {manifest.dataset_hash[:12]}")
    if config_hash(manifest.config) != manifest.config_hash:
        raise DataError("manifest config hash does not match its config")
