"""Manifest ingestion, grouped train/val/test splits and the model file format."""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .net import Model, NetworkSpec, propagate

IQA_HEADER = ("id", "ref_path", "dist_path", "score", "group")
FORGERY_HEADER = ("id", "path", "label", "pair_id")
SCORE_RANGES = {"dmos": (0.0, 100.0), "mos": (0.0, 9.0), "synthetic": (0.0, 5.0)}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class IqaRecord:
    id: str
    ref_path: Path
    dist_path: Path
    score: float
    group: str


@dataclass(frozen=True)
class ForgeryRecord:
    id: str
    path: Path
    label: int  # 1 authentic, 0 tampered
    pair_id: str | None = None

    @property
    def group(self) -> str:
        return self.pair_id or self.id


def _resolve(base: Path, rel: str, where: str) -> Path:
    p = (base / rel) if not os.path.isabs(rel) else Path(rel)
    if not p.is_file():
        raise ManifestError(f"{where}: missing file {rel!r}")
    return p


def load_manifest(path, kind: str, score_range: str | tuple = "dmos"):
    """Validated records from a CSV manifest; image files are stat-checked."""
    path = Path(path)
    if kind not in ("iqa", "forgery"):
        raise ValueError(f"unknown manifest kind {kind!r}")
    lo, hi = SCORE_RANGES[score_range] if isinstance(score_range, str) else score_range
    header = IQA_HEADER if kind == "iqa" else FORGERY_HEADER
    base = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        rows = csv.reader(f)
        head = next(rows, None)
        if head is None or tuple(h.strip() for h in head) != header:
            raise ManifestError(f"{path}: header must be {','.join(header)}")
        for line, row in enumerate(rows, start=2):
            where = f"{path}:{line}"
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(f"{where}: expected {len(header)} fields, got {len(row)}")
            if kind == "iqa":
                rid, ref, dist, score, group = (c.strip() for c in row)
                try:
                    s = float(score)
                except ValueError:
                    raise ManifestError(f"{where}: score {score!r} is not a number") from None
                if not (lo <= s <= hi):
                    raise ManifestError(f"{where}: score {s} outside [{lo}, {hi}]")
                records.append(IqaRecord(rid, _resolve(base, ref, where), _resolve(base, dist, where),
                                         s, group))
            else:
                rid, img, label, pair = (c.strip() for c in row)
                if label not in ("0", "1"):
                    raise ManifestError(f"{where}: label must be 0 or 1, got {label!r}")
                records.append(ForgeryRecord(rid, _resolve(base, img, where), int(label), pair or None))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate record ids")
    if kind == "iqa":
        _check_groups(path, records)
    else:
        _check_pairs(path, records)
    return records


def _check_groups(path, records):
    ref_of = {}
    for r in records:
        if ref_of.setdefault(r.group, r.ref_path) != r.ref_path:
            raise ManifestError(f"{path}: group {r.group!r} spans several reference images")


def _check_pairs(path, records):
    pairs: dict[str, list[int]] = {}
    for r in records:
        if r.pair_id is not None:
            pairs.setdefault(r.pair_id, []).append(r.label)
    for pid, labels in pairs.items():
        if sorted(labels) != [0, 1]:
            raise ManifestError(f"{path}: pair {pid!r} must link one authentic and one tampered record")


# -- splits ---------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    index: int
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


def _group_key(record) -> str:
    return record.group


def make_splits(records, fractions=(0.6, 0.2, 0.2), n_splits: int = 1, seed: int = 0,
                group_key=_group_key) -> list[SplitPlan]:
    """Shuffle whole groups per split; val/test get floor shares, train the rest."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions {fractions} must be three non-negatives summing to 1")
    groups: dict[str, list[str]] = {}
    for r in records:
        groups.setdefault(group_key(r), []).append(r.id)
    keys = sorted(groups)
    n = len(keys)
    n_parts = sum(1 for f in fractions if f > 0)
    if n < n_parts:
        raise ValueError(f"{n} groups cannot fill {n_parts} partitions")
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    n_test = int(np.floor(fractions[2] * n + 1e-9))
    n_train = n - n_val - n_test
    plans = []
    for k in range(n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), k]))
        order = [keys[i] for i in rng.permutation(n)]
        part = lambda gs: tuple(i for g in gs for i in groups[g])
        plans.append(SplitPlan(k, int(seed), part(order[:n_train]), part(order[n_train:n_train + n_val]),
                               part(order[n_train + n_val:])))
    return plans


# -- model file -------------------------------------------------------------------

MODEL_MAGIC = b"HPM1"
MODEL_VERSION = 1


def save_model(model: Model, path) -> None:
    """Header magic, u16 version, u32-length canonical JSON, float32 LE weights."""
    doc = json.dumps({"spec": model.spec.to_dict(), "meta": _meta_to_json(model.meta)},
                     sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MODEL_MAGIC + struct.pack("<HI", MODEL_VERSION, len(doc)) + doc)
        for layer in model.params:
            for key in ("W", "b"):
                if key in layer:
                    f.write(np.ascontiguousarray(layer[key], dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic, not a model file")
    if len(blob) < 10:
        raise ValueError(f"{path}: truncated header")
    version, n = struct.unpack("<HI", blob[4:10])
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model file version {version}")
    if len(blob) < 10 + n:
        raise ValueError(f"{path}: truncated spec block")
    doc = json.loads(blob[10:10 + n].decode("utf-8"))
    spec = NetworkSpec.from_dict(doc["spec"])
    offset = 10 + n
    params = []
    for s in propagate(spec):
        layer = {}
        for key, shape in (("W", s.weight_shape), ("b", s.bias_shape)):
            if shape is None:
                continue
            size = 4 * int(np.prod(shape))
            if offset + size > len(blob):
                raise ValueError(f"{path}: truncated weights")
            layer[key] = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=offset) \
                .astype(np.float64).reshape(shape)
            offset += size
        params.append(layer)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes do not match the embedded spec")
    return Model(spec, params, _meta_from_json(doc["meta"]))


def _meta_to_json(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray):
            out[k] = {"__array__": v.tolist(), "shape": list(v.shape)}
        else:
            out[k] = v
    return out


def _meta_from_json(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, dict) and "__array__" in v:
            out[k] = np.array(v["__array__"], dtype=np.float64).reshape(v["shape"])
        else:
            out[k] = v
    return out
