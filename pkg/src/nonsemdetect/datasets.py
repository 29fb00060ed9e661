"""Trial protocols, manifests, synthetic data, and batch assembly.

Real corpora arrive as ASVspoof-style protocol files or as the package's
own manifest TSV; desk-scale experiments use the deterministic synthetic
generator. All record lists are kept sorted by utt_id so downstream
shuffles are reproducible regardless of filesystem order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, ValidationError
from .features import EmbeddingMatrix, read_embedding_file, write_embedding_file

BONAFIDE = "bonafide"
SPOOF = "spoof"
UNKNOWN_ATTACK = "unknown"

MANIFEST_HEADER = "utt_id\tlabel\tattack\tembedding_path"


@dataclass
class TrialRecord:
    """One utterance: identity, class label, optional attack algorithm tag."""

    utt_id: str
    label: str
    attack_id: str | None = None
    speaker_id: str | None = None
    embedding_path: str | None = None
    condition: str | None = None  # opaque trailing protocol fields, kept verbatim
    matrix: EmbeddingMatrix | None = None  # in-memory alternative to embedding_path

    def __post_init__(self):
        if self.label not in (BONAFIDE, SPOOF):
            raise ValidationError(f"record {self.utt_id}: bad label '{self.label}'")
        if self.label == BONAFIDE and self.attack_id is not None:
            raise ValidationError(f"record {self.utt_id}: bonafide records carry no attack id")


@dataclass
class DatasetSplit:
    """Named, utt_id-sorted collection of trial records.

    `root` anchors relative embedding paths (usually the manifest's
    directory), which keeps manifests byte-identical across machines.
    """

    name: str
    records: list[TrialRecord] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.utt_id in seen:
                raise ValidationError(f"duplicate utt_id '{rec.utt_id}' in split '{self.name}'")
            seen.add(rec.utt_id)
        self.records = sorted(self.records, key=lambda r: r.utt_id)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        """Class indices: spoof=0, bonafide=1."""
        return np.array([1 if r.label == BONAFIDE else 0 for r in self.records], dtype=np.int64)

    def attack_ids(self) -> list[str]:
        return sorted({r.attack_id for r in self.records if r.attack_id is not None})


def parse_asvspoof_protocol(lines) -> list[TrialRecord]:
    """ASVspoof protocol lines: speaker utt_id <unused> attack key [extra...].

    key "bonafide" clears the attack field; key "spoof" keeps it. Extra
    trailing fields (LA21/DF21 codec tags) are preserved as an opaque
    condition string. Malformed lines are collected and reported together.
    """
    records = []
    bad: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) < 5:
            bad.append(f"line {lineno}: expected 5 fields, got {len(fields)}")
            continue
        speaker, utt_id, _unused, attack, key = fields[:5]
        condition = " ".join(fields[5:]) or None
        if key == BONAFIDE:
            records.append(
                TrialRecord(utt_id, BONAFIDE, None, speaker_id=speaker, condition=condition)
            )
        elif key == SPOOF:
            attack_id = UNKNOWN_ATTACK if attack == "-" else attack
            records.append(
                TrialRecord(utt_id, SPOOF, attack_id, speaker_id=speaker, condition=condition)
            )
        else:
            bad.append(f"line {lineno}: unknown key token '{key}'")
    if bad:
        raise ParseError("protocol parse errors:\n  " + "\n  ".join(bad))
    return records


def parse_manifest(lines, name: str = "manifest", root: Path | None = None) -> DatasetSplit:
    """TSV manifest: header then utt_id, label, attack ("-" for none), embedding_path."""
    rows = list(lines)
    if not rows or rows[0].rstrip("\n") != MANIFEST_HEADER:
        raise ParseError(f"manifest must start with header '{MANIFEST_HEADER}'")
    records = []
    for lineno, line in enumerate(rows[1:], start=2):
        text = line.rstrip("\n")
        if not text:
            continue
        fields = text.split("\t")
        if len(fields) != 4:
            raise ParseError(f"manifest line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        utt_id, label, attack, path = fields
        if label not in (BONAFIDE, SPOOF):
            raise ParseError(f"manifest line {lineno}: bad label token '{label}'")
        if label == BONAFIDE:
            attack_id = None
            if attack != "-":
                raise ParseError(f"manifest line {lineno}: bonafide rows must use attack '-'")
        else:
            # ItW-style spoof rows without attack details
            attack_id = UNKNOWN_ATTACK if attack == "-" else attack
        records.append(TrialRecord(utt_id, label, attack_id, embedding_path=path))
    return DatasetSplit(name, records, root=root)


def manifest_lines(split: DatasetSplit) -> list[str]:
    lines = [MANIFEST_HEADER]
    for rec in split.records:
        attack = "-" if rec.attack_id in (None, UNKNOWN_ATTACK) else rec.attack_id
        lines.append(f"{rec.utt_id}\t{rec.label}\t{attack}\t{rec.embedding_path or ''}")
    return lines


def read_manifest(path, name: str | None = None) -> DatasetSplit:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text.splitlines(), name=name or path.stem, root=path.parent)


def write_manifest(split: DatasetSplit, path) -> None:
    Path(path).write_text("\n".join(manifest_lines(split)) + "\n", encoding="utf-8")


def generate_synthetic_dataset(
    out_dir,
    seed: int,
    n_bonafide: int,
    n_spoof: int,
    d: int,
    t: int,
    separation: float,
    name: str = "synthetic",
    window_ms: int = 200,
    attack_ids: tuple[str, ...] = ("S01",),
) -> DatasetSplit:
    """Write a seeded two-class Gaussian dataset as EMB1 files plus manifest.

    Bonafide frames are N(+separation*u, I), spoof frames N(-separation*u, I)
    for a fixed unit direction u derived from the seed alone. Splits that
    share a seed but differ in name therefore share the class geometry while
    drawing disjoint noise, which is what makes train/dev/eval coherent.
    Spoof records cycle through attack_ids so per-attack reporting has
    something to group by.
    """
    if separation < 0:
        raise ConfigurationError("separation must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    u = np.random.default_rng([seed, 0]).standard_normal(d)
    u /= np.linalg.norm(u)
    name_key = zlib.crc32(name.encode("utf-8"))
    records = []
    for class_idx, (count, label) in enumerate([(n_bonafide, BONAFIDE), (n_spoof, SPOOF)], start=1):
        sign = 1.0 if label == BONAFIDE else -1.0
        for i in range(count):
            rng = np.random.default_rng([seed, name_key, class_idx, i])
            noise = rng.standard_normal((d, t))
            data = (sign * separation * u[:, None] + noise).astype(np.float32)
            utt_id = f"{name}-{'b' if label == BONAFIDE else 's'}-{i:05d}"
            matrix = EmbeddingMatrix(data, window_ms, "synthetic-v1")
            write_embedding_file(matrix, out_dir / f"{utt_id}.emb")
            attack = None if label == BONAFIDE else attack_ids[i % len(attack_ids)]
            records.append(TrialRecord(utt_id, label, attack, embedding_path=f"{utt_id}.emb"))
    split = DatasetSplit(name, records, root=out_dir)
    write_manifest(split, out_dir / "manifest.tsv")
    return split


def load_record_matrix(record: TrialRecord, root: Path | None = None) -> EmbeddingMatrix:
    if record.matrix is not None:
        return record.matrix
    if not record.embedding_path:
        raise DataError(f"record {record.utt_id} has no embedding path or in-memory matrix")
    path = Path(record.embedding_path)
    if not path.is_absolute() and root is not None:
        path = Path(root) / path
    if not path.is_file():
        raise DataError(f"missing embedding file for {record.utt_id}: {path}")
    return read_embedding_file(path)


def _stack_batch(records: list[TrialRecord], root: Path | None):
    matrices = [load_record_matrix(r, root) for r in records]
    shapes = {(m.d, m.t) for m in matrices}
    if len(shapes) > 1:
        raise ConfigurationError(f"inconsistent embedding shapes within batch: {sorted(shapes)}")
    x = np.stack([m.data for m in matrices]).astype(np.float32)
    labels = np.array([1 if r.label == BONAFIDE else 0 for r in records], dtype=np.int64)
    return x, labels, [r.utt_id for r in records]


def batch_iterator(split: DatasetSplit, batch_size: int, seed: int, epoch: int):
    """Epoch-seeded shuffled batches of (x[n,d,t], labels, utt_ids).

    The shuffle seed is seed XOR epoch, so every epoch visits every record
    exactly once in a reproducible order; the final short batch is emitted.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    if not split.records:
        raise ConfigurationError(f"split '{split.name}' is empty")
    order = np.random.default_rng(seed ^ epoch).permutation(len(split.records))
    for start in range(0, len(order), batch_size):
        batch = [split.records[i] for i in order[start : start + batch_size]]
        yield _stack_batch(batch, split.root)


def ordered_batches(split: DatasetSplit, batch_size: int):
    """Deterministic utt_id-ordered batches, for scoring."""
    if not split.records:
        raise ConfigurationError(f"split '{split.name}' is empty")
    for start in range(0, len(split.records), batch_size):
        yield _stack_batch(split.records[start : start + batch_size], split.root)
