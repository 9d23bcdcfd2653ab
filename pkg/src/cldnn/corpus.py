"""Utterance records and the CSV manifests that describe corpora on disk.

Clean corpus:      path,speaker,label[,gender]
Noise pool:        path,id
Augmented corpus:  path,speaker,label,parent_id,noise_id,snr_db,offset,seed

Relative paths are resolved against the manifest's directory. Augmented rows
point at the *clean* source file; the mix itself is re-rendered from the
recorded noise id, SNR and offset, so no re-quantized audio is ever stored.
"""

import csv
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError

CLEAN_FIELDS = ["path", "speaker", "label", "gender"]
NOISE_FIELDS = ["path", "id"]
AUGMENTED_FIELDS = ["path", "speaker", "label", "parent_id", "noise_id", "snr_db", "offset", "seed"]


@dataclass(frozen=True)
class Utterance:
    uid: str
    path: str
    speaker: str
    label: str
    gender: str = ""
    parent_id: str = ""
    noise_id: str = ""
    snr_db: float = float("nan")
    offset: int = 0
    seed: int = 0

    @property
    def is_clean(self):
        return not self.parent_id


@dataclass(frozen=True)
class NoiseRef:
    id: str
    path: str


def _resolve(base, p):
    p = Path(p)
    return str(p) if p.is_absolute() else os.path.normpath(base / p)


def _relative(base, p):
    """``p`` relative to ``base`` (with ``..`` as needed), so manifests move with their tree."""
    return os.path.relpath(Path(p).resolve(), Path(base).resolve())


def _require(reader, fields, path):
    missing = [f for f in fields if f not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"{path}: missing column(s) {missing}")


def read_clean_manifest(path):
    base = Path(path).parent
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _require(reader, ["path", "speaker", "label"], path)
        for row in reader:
            out.append(Utterance(uid=Path(row["path"]).stem, path=_resolve(base, row["path"]),
                                 speaker=row["speaker"], label=row["label"],
                                 gender=row.get("gender") or ""))
    uids = [u.uid for u in out]
    if len(set(uids)) != len(uids):
        raise FormatError(f"{path}: file stems must be unique utterance ids")
    return out


def write_clean_manifest(path, utterances):
    base = Path(path).parent
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CLEAN_FIELDS)
        for u in utterances:
            w.writerow([_relative(base, u.path), u.speaker, u.label, u.gender])


def read_noise_manifest(path):
    base = Path(path).parent
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _require(reader, NOISE_FIELDS, path)
        return [NoiseRef(row["id"], _resolve(base, row["path"])) for row in reader]


def write_noise_manifest(path, refs):
    base = Path(path).parent
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(NOISE_FIELDS)
        for r in refs:
            w.writerow([_relative(base, r.path), r.id])


def write_augmented_manifest(path, utterances):
    base = Path(path).parent
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(AUGMENTED_FIELDS)
        for u in utterances:
            w.writerow([_relative(base, u.path), u.speaker, u.label, u.parent_id, u.noise_id,
                        repr(float(u.snr_db)), u.offset, u.seed])


def read_augmented_manifest(path, parents=None):
    """Read noisy rows; ``parents`` (clean utterances) supplies inherited gender."""
    base = Path(path).parent
    by_id = {p.uid: p for p in parents or []}
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _require(reader, AUGMENTED_FIELDS, path)
        counts = {}
        for row in reader:
            parent = row["parent_id"]
            k = counts.get(parent, 0)
            counts[parent] = k + 1
            gender = by_id[parent].gender if parent in by_id else ""
            out.append(Utterance(uid=f"{parent}~{k:03d}", path=_resolve(base, row["path"]),
                                 speaker=row["speaker"], label=row["label"], gender=gender,
                                 parent_id=parent, noise_id=row["noise_id"],
                                 snr_db=float(row["snr_db"]), offset=int(row["offset"]),
                                 seed=int(row["seed"])))
    return out


def label_index(utterances):
    """Stable mapping from label strings to class indices (sorted order)."""
    return {lab: i for i, lab in enumerate(sorted({u.label for u in utterances}))}
