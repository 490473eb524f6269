"""Dataset plumbing: sample discovery, split management, pair sampling and
parallel generation of synthetic corpora at a configured synthetic:real
ratio.

Generation is deterministic regardless of worker scheduling: the RNG stream
of entry ``i`` is derived from ``(global seed, i)`` and every entry writes
only its own files. Manifests serialize to JSON with stable key order and
paths stored relative to the manifest file, so identical runs produce
byte-identical manifests.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InsufficientSamples, TooFewSamples
from .synth import (
    Provenance,
    SynthConfig,
    mixup_synthesize,
    prepare_sample,
    synthesize,
)
from .volume import MODALITIES, Sample, load_sample, save_sample

log = logging.getLogger(__name__)

THREAD_CAP_ENV = "ASYMFORGE_THREADS"

KINDS = ("real", "synthetic")
SPLITS = ("train", "val", "test")

_VOLUME_SUFFIXES = (".mmv", ".nii", ".nii.gz")
_LABEL_STEMS = ("seg", "label")


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    kind: str  # real | synthetic
    split: str  # train | val | test
    image_paths: tuple[str | None, str | None, str | None, str | None] = (None,) * 4
    label_path: str | None = None
    provenance: Provenance | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "kind": self.kind,
            "split": self.split,
            "image_paths": list(self.image_paths),
            "label_path": self.label_path,
            "provenance": None if self.provenance is None else self.provenance.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "ManifestEntry":
        prov = d.get("provenance")
        return ManifestEntry(
            sample_id=d["sample_id"],
            kind=d["kind"],
            split=d["split"],
            image_paths=tuple(d["image_paths"]),
            label_path=d.get("label_path"),
            provenance=None if prov is None else Provenance.from_dict(prov),
        )


@dataclass(frozen=True)
class Manifest:
    seed: int
    ratio: int = 0
    entries: tuple[ManifestEntry, ...] = ()

    def select(self, kind: str | None = None, split: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if (kind is None or e.kind == kind) and (split is None or e.split == split)
        ]

    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    def validate(self) -> None:
        """Uniqueness and leakage checks, from the manifest alone."""
        ids = self.ids()
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample ids in manifest")
        train_real = {e.sample_id for e in self.select(kind="real", split="train")}
        for e in self.select(kind="synthetic"):
            if e.provenance is None:
                raise ValueError(f"synthetic entry {e.sample_id} lacks provenance")
            for ref in (e.provenance.host_id, e.provenance.donor_id):
                if ref not in train_real:
                    raise ValueError(
                        f"synthetic entry {e.sample_id} references {ref!r}, "
                        "which is not a real train sample"
                    )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "ratio": self.ratio,
            "entries": [e.to_dict() for e in self.entries],
        }

    @staticmethod
    def from_json_dict(d: dict[str, Any]) -> "Manifest":
        return Manifest(
            seed=d["seed"],
            ratio=d["ratio"],
            entries=tuple(ManifestEntry.from_dict(e) for e in d["entries"]),
        )

    def save(self, path: str | Path) -> None:
        """Write JSON with stable key order; paths become relative to the
        manifest's directory so identical runs are byte-identical."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()

        def rel(p: str | None) -> str | None:
            return None if p is None else os.path.relpath(Path(p).resolve(), base)

        doc = self.to_json_dict()
        for entry in doc["entries"]:
            entry["image_paths"] = [rel(p) for p in entry["image_paths"]]
            entry["label_path"] = rel(entry["label_path"])
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    @staticmethod
    def load(path: str | Path) -> "Manifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        base = path.parent.resolve()

        def absolute(p: str | None) -> str | None:
            return None if p is None else str((base / p).resolve())

        for entry in doc["entries"]:
            entry["image_paths"] = [absolute(p) for p in entry["image_paths"]]
            entry["label_path"] = absolute(entry["label_path"])
        return Manifest.from_json_dict(doc)


# ---------------------------------------------------------------------------
# Discovery and loading


def find_sample_files(sample_dir: str | Path) -> tuple[tuple[str | None, ...], str | None]:
    """Locate modality and label files inside one sample directory.

    Accepts ``<anything>_<modality>.<ext>`` or plain ``<modality>.<ext>``
    with ext one of .mmv / .nii / .nii.gz; labels use the stems ``seg`` or
    ``label``.
    """
    sample_dir = Path(sample_dir)
    found: dict[str, str] = {}
    for path in sorted(sample_dir.iterdir()):
        name = path.name
        for suffix in _VOLUME_SUFFIXES:
            if not name.endswith(suffix):
                continue
            stem = name[: -len(suffix)].lower()
            for key in (*MODALITIES, *_LABEL_STEMS):
                if stem == key or stem.endswith("_" + key):
                    found.setdefault("label" if key in _LABEL_STEMS else key, str(path))
            break
    images = tuple(found.get(m) for m in MODALITIES)
    return images, found.get("label")


def discover_samples(root: str | Path) -> dict[str, tuple[tuple[str | None, ...], str | None]]:
    """Map sample id -> files for every subdirectory holding volumes."""
    root = Path(root)
    out = {}
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        images, label = find_sample_files(child)
        if any(images):
            out[child.name] = (images, label)
    return out


def load_entry(entry: ManifestEntry) -> Sample:
    image, labels = load_sample(entry.image_paths, entry.label_path, entry.sample_id)
    return Sample(entry.sample_id, image, labels)


# ---------------------------------------------------------------------------
# Splits and pairs


def make_splits(
    sample_ids: Sequence[str],
    counts: tuple[int, int, int],
    seed: int,
    files: dict[str, tuple[tuple[str | None, ...], str | None]] | None = None,
) -> Manifest:
    """Seeded disjoint train/val/test partition of real sample ids."""
    n_train, n_val, n_test = counts
    if min(counts) < 0:
        raise ValueError(f"negative split count in {counts}")
    total = n_train + n_val + n_test
    if total > len(sample_ids):
        raise InsufficientSamples(f"need {total} ids, have {len(sample_ids)}")
    if len(set(sample_ids)) != len(sample_ids):
        raise ValueError("sample ids are not unique")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    order = list(sample_ids)
    rng.shuffle(order)
    assignment = (
        [(sid, "train") for sid in order[:n_train]]
        + [(sid, "val") for sid in order[n_train : n_train + n_val]]
        + [(sid, "test") for sid in order[n_train + n_val : total]]
    )
    assignment.sort(key=lambda pair: pair[0])
    entries = []
    for sid, split in assignment:
        images, label = files.get(sid, ((None,) * 4, None)) if files else ((None,) * 4, None)
        entries.append(
            ManifestEntry(sid, "real", split, image_paths=tuple(images), label_path=label)
        )
    return Manifest(seed=seed, ratio=0, entries=tuple(entries))


def sample_pairs(
    train_ids: Sequence[str], n_pairs: int, seed: int
) -> list[tuple[str, str]]:
    """Uniform ordered (host, donor) pairs with host != donor, sampled with
    replacement across the list."""
    if n_pairs < 0:
        raise ValueError(f"n_pairs must be >= 0, got {n_pairs}")
    n = len(train_ids)
    if n < 2:
        raise TooFewSamples(f"need >= 2 train ids to form pairs, have {n}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    pairs = []
    for _ in range(n_pairs):
        host = int(rng.integers(0, n))
        donor = int(rng.integers(0, n - 1))
        if donor >= host:
            donor += 1
        pairs.append((train_ids[host], train_ids[donor]))
    return pairs


# ---------------------------------------------------------------------------
# Corpus generation


def resolve_workers(requested: int) -> int:
    """Apply the ASYMFORGE_THREADS cap, if set."""
    cap = os.environ.get(THREAD_CAP_ENV)
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            warnings.warn(f"ignoring malformed {THREAD_CAP_ENV}={cap!r}")
    return max(1, requested)


@dataclass(frozen=True)
class GenerationTask:
    index: int
    host_id: str
    donor_id: str
    host_files: tuple[tuple[str | None, ...], str | None]
    donor_files: tuple[tuple[str | None, ...], str | None]
    seed: int
    out_dir: str
    method: str  # asymmetry | mixup
    mask_to_brain: bool
    mirror_radius: int
    mirror_axis: int
    mixup_alpha: float


@functools.lru_cache(maxsize=32)
def _prepared_cached(files_key: tuple, radius: int, axis: int):
    (image_paths, label_path), sid = files_key
    image, labels = load_sample(image_paths, label_path, sid)
    return prepare_sample(Sample(sid, image, labels), radius=radius, axis=axis)


def _generate_one(task: GenerationTask) -> tuple[int, dict[str, Any] | None, str | None]:
    """Build and write one synthetic sample. Returns (index, entry dict,
    error); failures are reported, not raised, so one bad pair cannot sink a
    batch."""
    try:
        host = _prepared_cached(
            (task.host_files, task.host_id), task.mirror_radius, task.mirror_axis
        )
        donor = _prepared_cached(
            (task.donor_files, task.donor_id), task.mirror_radius, task.mirror_axis
        )
        entry_seed = (task.seed, task.index)
        if task.method == "mixup":
            rng = np.random.default_rng(np.random.SeedSequence(list(entry_seed)))
            synthetic = mixup_synthesize(host, donor, task.mixup_alpha, rng, seed=entry_seed)
            sid = f"mix{task.index:05d}"
        else:
            cfg = SynthConfig(
                mask_to_brain=task.mask_to_brain,
                mirror_radius=task.mirror_radius,
                mirror_axis=task.mirror_axis,
            )
            synthetic = synthesize(host, donor, cfg, seed=entry_seed)
            sid = f"syn{task.index:05d}"

        sample_dir = Path(task.out_dir) / sid
        image_paths, label_path = save_sample(
            synthetic.image, synthetic.labels, sample_dir, stem=sid
        )
        sidecar = sample_dir / f"{sid}_provenance.json"
        sidecar.write_text(
            json.dumps(synthetic.provenance.to_dict(), sort_keys=True, indent=2) + "\n"
        )
        entry = ManifestEntry(
            sample_id=sid,
            kind="synthetic",
            split="train",
            image_paths=tuple(image_paths),
            label_path=label_path,
            provenance=synthetic.provenance,
        ).to_dict()
        return task.index, entry, None
    except Exception as exc:  # noqa: BLE001 - per-entry isolation is the contract
        return task.index, None, f"{type(exc).__name__}: {exc}"


@dataclass
class CorpusResult:
    manifest: Manifest
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def generate_corpus(
    manifest: Manifest,
    ratio: int,
    workers: int,
    seed: int,
    out_dir: str | Path,
    method: str = "asymmetry",
    mask_to_brain: bool = False,
    mirror_radius: int = 10,
    mirror_axis: int = 2,
    mixup_alpha: float = 0.4,
) -> CorpusResult:
    """Extend a real-data manifest with ratio x (#real train) synthetic
    samples, generated in parallel."""
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    if ratio > 8:
        warnings.warn(
            f"ratio {ratio} exceeds 8; corpus diversity tends to saturate well before this"
        )
    if method not in ("asymmetry", "mixup"):
        raise ValueError(f"unknown synthesis method {method!r}")
    real_train = manifest.select(kind="real", split="train")
    if not real_train:
        raise InsufficientSamples("manifest has no real train entries")
    files = {e.sample_id: (e.image_paths, e.label_path) for e in real_train}
    for sid, (images, label) in files.items():
        if not any(images) or label is None:
            raise InsufficientSamples(f"real train entry {sid} lacks image or label paths")

    n_synth = ratio * len(real_train)
    pairs = sample_pairs([e.sample_id for e in real_train], n_synth, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # The prepare cache is keyed by path, not content; drop it so reruns that
    # rewrote inputs in place cannot serve stale volumes.
    _prepared_cached.cache_clear()
    tasks = [
        GenerationTask(
            index=i,
            host_id=host,
            donor_id=donor,
            host_files=files[host],
            donor_files=files[donor],
            seed=seed,
            out_dir=str(out_dir),
            method=method,
            mask_to_brain=mask_to_brain,
            mirror_radius=mirror_radius,
            mirror_axis=mirror_axis,
            mixup_alpha=mixup_alpha,
        )
        for i, (host, donor) in enumerate(pairs)
    ]

    # Stage every real train sample once in this process; forked workers
    # inherit the warm cache instead of re-preparing per process.
    cache_slots = _prepared_cached.cache_parameters()["maxsize"]
    if len(files) <= cache_slots:
        for sid in sorted(files):
            try:
                _prepared_cached((files[sid], sid), mirror_radius, mirror_axis)
            except Exception:  # noqa: BLE001 - the owning task will report it
                pass

    workers = resolve_workers(workers)
    if workers == 1:
        results = [_generate_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))

    results.sort(key=lambda r: r[0])
    failures = [(i, err) for i, _e, err in results if err is not None]
    for i, err in failures:
        log.error("entry %d failed: %s", i, err)
    new_entries = tuple(
        ManifestEntry.from_dict(e) for _i, e, err in results if err is None
    )
    extended = replace(
        manifest, ratio=ratio, entries=manifest.entries + new_entries
    )
    extended.validate()
    return CorpusResult(manifest=extended, failures=failures)
