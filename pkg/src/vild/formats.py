"""File formats: embedding tables (text and binary), classifier
bundles, trained heads, datasets, proposals, detections, ground truth,
and vocabularies.

Text formats serialize floats with 9 significant digits; every writer's
output re-parses to the value it was written from. JSON lines are
written with sorted keys and compact separators so equal data produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from vild.boxes import Box, Proposal
from vild.classifier import BACKGROUND_ID, TextClassifier
from vild.errors import DataFormatError, DimensionMismatchError
from vild.evaluate import GroundTruth
from vild.numfmt import fmt_float, parse_float, parse_int, quantize_floats
from vild.postprocess import Detection
from vild.training import RegionHead, TrainingSample
from vild.vocab import Category, Vocabulary

BINARY_MAGIC = b"VLDE"

_HEAD_SHAPE_ID = "shape"
_HEAD_BIAS_ID = "b"
_HEAD_ROW_PREFIX = "W.row."


@dataclass(eq=False)
class EmbeddingTable:
    """Ordered id-keyed embedding records of one dimension."""

    dim: int
    records: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise DataFormatError(f"embedding dim must be >= 1, got {self.dim}")
        clean: dict[str, np.ndarray] = {}
        for key, vec in self.records.items():
            name = str(key)
            if not name or "\t" in name or "\n" in name:
                raise DataFormatError(f"invalid embedding id {name!r}")
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise DimensionMismatchError(
                    f"record {name!r} has shape {arr.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(arr)):
                raise DataFormatError(f"record {name!r} has non-finite entries")
            clean[name] = arr
        self.records = clean

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, key: str) -> bool:
        return str(key) in self.records

    def __getitem__(self, key: str) -> np.ndarray:
        name = str(key)
        if name not in self.records:
            raise DataFormatError(f"no embedding record for id {name!r}")
        return self.records[name]

    def ids(self) -> list[str]:
        return list(self.records)

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        wanted = self.ids() if ids is None else [str(i) for i in ids]
        return np.stack([self[i] for i in wanted]) if wanted else np.zeros((0, self.dim))


# ---------------------------------------------------------------- embeddings


def write_embeddings_text(path, table: EmbeddingTable) -> None:
    lines = [f"dim={table.dim} count={len(table)}"]
    for key, vec in table.records.items():
        lines.append(f"{key}\t{','.join(fmt_float(v) for v in vec)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_embeddings_text(lines: list[str], path, start_line: int) -> EmbeddingTable:
    if not lines:
        raise DataFormatError(f"{path}: missing embedding header")
    header = lines[0].strip()
    parts = header.split()
    if (
        len(parts) != 2
        or not parts[0].startswith("dim=")
        or not parts[1].startswith("count=")
    ):
        raise DataFormatError(
            f"{path}:{start_line}: expected 'dim=<D> count=<N>', got {header!r}"
        )
    dim = parse_int(parts[0][4:], "embedding dim")
    count = parse_int(parts[1][6:], "embedding count")
    records: dict[str, np.ndarray] = {}
    for offset, raw in enumerate(lines[1:], start=1):
        line_no = start_line + offset
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataFormatError(f"{path}:{line_no}: expected '<id>\\t<floats>'")
        key, payload = line.split("\t", 1)
        if key in records:
            raise DataFormatError(f"{path}:{line_no}: duplicate id {key!r}")
        values = payload.split(",")
        if len(values) != dim:
            raise DataFormatError(
                f"{path}:{line_no}: record {key!r} has {len(values)} values, "
                f"expected {dim}"
            )
        records[key] = np.array(
            [parse_float(v, f"embedding value for {key!r}") for v in values]
        )
    if len(records) != count:
        raise DataFormatError(
            f"{path}: header promises {count} records, found {len(records)}"
        )
    return EmbeddingTable(dim=dim, records=records)


def read_embeddings_text(path) -> EmbeddingTable:
    text = Path(path).read_text(encoding="utf-8")
    return _parse_embeddings_text(text.splitlines(), path, 1)


def write_embeddings_binary(path, table: EmbeddingTable) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<II", table.dim, len(table)))
        for vec in table.records.values():
            fh.write(vec.astype("<f4").tobytes())
        for key in table.records:
            encoded = key.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise DataFormatError(f"embedding id too long: {key[:32]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)


def read_embeddings_binary(path) -> EmbeddingTable:
    blob = Path(path).read_bytes()
    if blob[:4] != BINARY_MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a binary embedding file")
    if len(blob) < 12:
        raise DataFormatError(f"{path}: truncated header")
    dim, count = struct.unpack_from("<II", blob, 4)
    if dim < 1:
        raise DataFormatError(f"{path}: embedding dim must be >= 1, got {dim}")
    payload_end = 12 + count * dim * 4
    if len(blob) < payload_end:
        raise DataFormatError(
            f"{path}: truncated payload, expected {count}x{dim} float32 values"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=12)
    matrix = data.reshape(count, dim).astype(np.float64)
    # trailing name table is optional; without it records are index-keyed
    ids: list[str]
    if payload_end == len(blob):
        ids = [str(i) for i in range(count)]
    else:
        ids = []
        pos = payload_end
        for i in range(count):
            if pos + 2 > len(blob):
                raise DataFormatError(f"{path}: truncated name table at record {i}")
            (length,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            if pos + length > len(blob):
                raise DataFormatError(f"{path}: truncated name table at record {i}")
            try:
                ids.append(blob[pos : pos + length].decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise DataFormatError(
                    f"{path}: name table entry {i} is not valid UTF-8"
                ) from exc
            pos += length
        if pos != len(blob):
            raise DataFormatError(f"{path}: {len(blob) - pos} trailing bytes")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate ids in name table")
    return EmbeddingTable(
        dim=int(dim), records={ids[i]: matrix[i] for i in range(count)}
    )


def read_embeddings(path) -> EmbeddingTable:
    """Read an embedding table, detecting text or binary layout."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return read_embeddings_binary(path)
    return read_embeddings_text(path)


# ---------------------------------------------------------- classifier bundle


def save_classifier(path, clf: TextClassifier) -> None:
    """Classifier bundle: a tau header line, then the embedding text
    format with the background embedding as the first record."""
    records: dict[str, np.ndarray] = {BACKGROUND_ID: clf.background}
    for i, key in enumerate(clf.ids):
        records[key] = clf.embeddings[i]
    table = EmbeddingTable(dim=clf.dim, records=records)
    lines = [f"tau={fmt_float(clf.tau)}", f"dim={table.dim} count={len(table)}"]
    for key, vec in table.records.items():
        lines.append(f"{key}\t{','.join(fmt_float(v) for v in vec)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_classifier(path) -> TextClassifier:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("tau="):
        raise DataFormatError(f"{path}: classifier bundle must start with 'tau='")
    tau = parse_float(lines[0][4:].strip(), "tau")
    table = _parse_embeddings_text(lines[1:], path, 2)
    if BACKGROUND_ID not in table:
        raise DataFormatError(f"{path}: bundle has no {BACKGROUND_ID} record")
    ids = [k for k in table.ids() if k != BACKGROUND_ID]
    if not ids:
        raise DataFormatError(f"{path}: bundle has no category records")
    return TextClassifier(
        embeddings=table.matrix(ids),
        ids=tuple(ids),
        background=table[BACKGROUND_ID],
        tau=tau,
    )


# ------------------------------------------------------------------ head file


def save_head(path, head: RegionHead) -> None:
    """Trained head in the binary embedding format.

    Records: 'shape' ([d_out, d_in]), one 'W.row.<i>' per output row,
    'b', and the background embedding, each zero-padded to the file
    dimension max(d_in, d_out, 2).
    """
    d_out, d_in = head.W.shape
    dim = max(d_in, d_out, 2)

    def padded(vec: np.ndarray) -> np.ndarray:
        out = np.zeros(dim)
        out[: vec.shape[0]] = vec
        return out

    records: dict[str, np.ndarray] = {
        _HEAD_SHAPE_ID: padded(np.array([float(d_out), float(d_in)]))
    }
    for i in range(d_out):
        records[f"{_HEAD_ROW_PREFIX}{i}"] = padded(head.W[i])
    records[_HEAD_BIAS_ID] = padded(head.b)
    records[BACKGROUND_ID] = padded(head.e_bg)
    write_embeddings_binary(path, EmbeddingTable(dim=dim, records=records))


def load_head(path) -> RegionHead:
    table = read_embeddings_binary(path)
    if _HEAD_SHAPE_ID not in table:
        raise DataFormatError(f"{path}: head file has no 'shape' record")
    shape = table[_HEAD_SHAPE_ID]
    d_out, d_in = int(round(shape[0])), int(round(shape[1]))
    if d_out < 1 or d_in < 1 or max(d_in, d_out, 2) != table.dim:
        raise DataFormatError(
            f"{path}: invalid head shape {d_out}x{d_in} for file dim {table.dim}"
        )
    expected = d_out + 3  # shape + rows + bias + background
    if len(table) != expected:
        raise DataFormatError(
            f"{path}: head file has {len(table)} records, expected {expected}"
        )
    w = np.empty((d_out, d_in))
    for i in range(d_out):
        w[i] = table[f"{_HEAD_ROW_PREFIX}{i}"][:d_in]
    return RegionHead(
        W=w,
        b=table[_HEAD_BIAS_ID][:d_out],
        e_bg=table[BACKGROUND_ID][:d_out],
    )


# ----------------------------------------------------------------- JSON lines


def _write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(quantize_floats(row), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise DataFormatError(f"{path}:{line_no}: expected a JSON object")
            yield line_no, row


def _need(row: dict, key: str, path, line_no: int):
    if key not in row:
        raise DataFormatError(f"{path}:{line_no}: missing key {key!r}")
    return row[key]


def _box_from(value, path, line_no: int) -> Box:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise DataFormatError(f"{path}:{line_no}: box must be [x1, y1, x2, y2]")
    try:
        return Box.from_sequence([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}:{line_no}: invalid box: {exc}") from exc
    except DataFormatError as exc:
        raise DataFormatError(f"{path}:{line_no}: {exc}") from exc


def _vector_from(value, path, line_no: int, what: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or not value:
        raise DataFormatError(f"{path}:{line_no}: {what} must be a non-empty list")
    try:
        return np.array([float(v) for v in value], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}:{line_no}: invalid {what}: {exc}") from exc


# ----------------------------------------------------------------- vocabulary


def write_vocabulary(path, vocab: Vocabulary) -> None:
    rows = [
        {
            "id": c.id,
            "name": c.name,
            "synonyms": list(c.synonyms),
            "split": c.split,
            "frequency": c.frequency,
        }
        for c in vocab
    ]
    _write_jsonl(path, rows)


def read_vocabulary(path) -> Vocabulary:
    cats = []
    for line_no, row in _read_jsonl(path):
        synonyms = row.get("synonyms", [])
        if not isinstance(synonyms, list) or not all(
            isinstance(s, str) for s in synonyms
        ):
            raise DataFormatError(f"{path}:{line_no}: synonyms must be strings")
        try:
            cats.append(
                Category(
                    id=int(_need(row, "id", path, line_no)),
                    name=str(_need(row, "name", path, line_no)),
                    synonyms=tuple(synonyms),
                    split=str(row.get("split", "base")),
                    frequency=str(row.get("frequency", "frequent")),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
    try:
        return Vocabulary(categories=tuple(cats))
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


# -------------------------------------------------------------------- dataset


def write_training_samples(path, samples: Sequence[TrainingSample]) -> None:
    rows = []
    for s in samples:
        rows.append(
            {
                "image_id": s.image_id,
                "online": [
                    {
                        "feature": s.online_features[i].tolist(),
                        "label": int(s.online_labels[i]),
                    }
                    for i in range(s.n_online)
                ],
                "offline": [
                    {
                        "feature": s.offline_features[i].tolist(),
                        "teacher": s.offline_teachers[i].tolist(),
                    }
                    for i in range(s.m_offline)
                ],
            }
        )
    _write_jsonl(path, rows)


def read_training_samples(path) -> list[TrainingSample]:
    samples = []
    seen: set[str] = set()
    for line_no, row in _read_jsonl(path):
        image_id = str(_need(row, "image_id", path, line_no))
        if image_id in seen:
            raise DataFormatError(f"{path}:{line_no}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        online = _need(row, "online", path, line_no)
        offline = _need(row, "offline", path, line_no)
        if not isinstance(online, list) or not isinstance(offline, list):
            raise DataFormatError(
                f"{path}:{line_no}: online and offline must be lists"
            )
        on_feats, on_labels = [], []
        for entry in online:
            if not isinstance(entry, dict):
                raise DataFormatError(f"{path}:{line_no}: online entries must be objects")
            on_feats.append(
                _vector_from(_need(entry, "feature", path, line_no), path, line_no, "feature")
            )
            try:
                on_labels.append(int(_need(entry, "label", path, line_no)))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{line_no}: invalid label") from exc
        off_feats, off_teachers = [], []
        for entry in offline:
            if not isinstance(entry, dict):
                raise DataFormatError(
                    f"{path}:{line_no}: offline entries must be objects"
                )
            off_feats.append(
                _vector_from(_need(entry, "feature", path, line_no), path, line_no, "feature")
            )
            off_teachers.append(
                _vector_from(_need(entry, "teacher", path, line_no), path, line_no, "teacher")
            )
        for name, group in (
            ("online feature", on_feats),
            ("offline feature", off_feats),
            ("teacher", off_teachers),
        ):
            dims = {v.shape[0] for v in group}
            if len(dims) > 1:
                raise DataFormatError(
                    f"{path}:{line_no}: mixed {name} dimensions {sorted(dims)}"
                )
        try:
            samples.append(
                TrainingSample(
                    image_id=image_id,
                    online_features=(
                        np.stack(on_feats) if on_feats else np.zeros((0, 1))
                    ),
                    online_labels=np.array(on_labels, dtype=np.int64),
                    offline_features=(
                        np.stack(off_feats) if off_feats else np.zeros((0, 1))
                    ),
                    offline_teachers=(
                        np.stack(off_teachers) if off_teachers else np.zeros((0, 1))
                    ),
                )
            )
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
    return samples


# ------------------------------------------------------------------ proposals


def write_proposals(path, by_image: Mapping[str, Sequence[Proposal]]) -> None:
    rows = []
    for image_id in by_image:
        entries = []
        for p in by_image[image_id]:
            entry = {
                "box": [p.box.x1, p.box.y1, p.box.x2, p.box.y2],
                "objectness": p.objectness,
                "feature": p.feature.tolist(),
            }
            if p.teacher is not None:
                entry["teacher"] = p.teacher.tolist()
            entries.append(entry)
        rows.append({"image_id": str(image_id), "proposals": entries})
    _write_jsonl(path, rows)


def read_proposals(path) -> dict[str, list[Proposal]]:
    out: dict[str, list[Proposal]] = {}
    for line_no, row in _read_jsonl(path):
        image_id = str(_need(row, "image_id", path, line_no))
        if image_id in out:
            raise DataFormatError(f"{path}:{line_no}: duplicate image_id {image_id!r}")
        entries = _need(row, "proposals", path, line_no)
        if not isinstance(entries, list):
            raise DataFormatError(f"{path}:{line_no}: proposals must be a list")
        props = []
        for entry in entries:
            if not isinstance(entry, dict):
                raise DataFormatError(
                    f"{path}:{line_no}: proposal entries must be objects"
                )
            teacher = entry.get("teacher")
            try:
                props.append(
                    Proposal(
                        box=_box_from(_need(entry, "box", path, line_no), path, line_no),
                        objectness=float(_need(entry, "objectness", path, line_no)),
                        feature=_vector_from(
                            _need(entry, "feature", path, line_no),
                            path,
                            line_no,
                            "feature",
                        ),
                        teacher=(
                            None
                            if teacher is None
                            else _vector_from(teacher, path, line_no, "teacher")
                        ),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{line_no}: invalid proposal: {exc}") from exc
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
        out[image_id] = props
    return out


# ----------------------------------------------------------------- detections


def write_detections(path, by_image: Mapping[str, Sequence[Detection]]) -> None:
    rows = []
    for image_id in by_image:
        for d in by_image[image_id]:
            rows.append(
                {
                    "image_id": str(image_id),
                    "category_id": d.category_id,
                    "box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
                    "score": d.score,
                    "source_id": d.source_id,
                }
            )
    _write_jsonl(path, rows)


def read_detections(path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for line_no, row in _read_jsonl(path):
        image_id = str(_need(row, "image_id", path, line_no))
        try:
            det = Detection(
                box=_box_from(_need(row, "box", path, line_no), path, line_no),
                category_id=int(_need(row, "category_id", path, line_no)),
                score=float(_need(row, "score", path, line_no)),
                source_id=int(_need(row, "source_id", path, line_no)),
            )
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{line_no}: invalid detection: {exc}") from exc
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
        out.setdefault(image_id, []).append(det)
    return out


# --------------------------------------------------------------- ground truth


def write_ground_truths(path, gts: Sequence[GroundTruth]) -> None:
    rows = [
        {
            "image_id": str(g.image_id),
            "category_id": g.category_id,
            "box": [g.box.x1, g.box.y1, g.box.x2, g.box.y2],
        }
        for g in gts
    ]
    _write_jsonl(path, rows)


def read_ground_truths(path) -> list[GroundTruth]:
    out = []
    for line_no, row in _read_jsonl(path):
        try:
            out.append(
                GroundTruth(
                    image_id=str(_need(row, "image_id", path, line_no)),
                    category_id=int(_need(row, "category_id", path, line_no)),
                    box=_box_from(_need(row, "box", path, line_no), path, line_no),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataFormatError(
                f"{path}:{line_no}: invalid ground truth: {exc}"
            ) from exc
    return out


# -------------------------------------------------------------------- helpers


def read_id_list(path) -> list[int]:
    """Category ids, one per line; blank lines and # comments ignored."""
    out = []
    for line_no, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError as exc:
            raise DataFormatError(
                f"{path}:{line_no}: expected an integer id, got {line!r}"
            ) from exc
    return out


def write_loss_log(path, losses: Sequence[float]) -> None:
    Path(path).write_text(
        "".join(f"{fmt_float(v)}\n" for v in losses), encoding="utf-8"
    )
