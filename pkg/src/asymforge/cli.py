"""Single command line entry point.

Subcommands cover the whole pipeline: ``calibrate``, ``aem``, ``synth``,
``make-dataset``, ``pretrain``, ``finetune``, ``posttrain``, ``eval`` and
``inspect``. Every option can also come from a TOML or JSON config file via
``--config``; explicit flags win over file values, file values win over
defaults, and unknown file keys are errors. Each run logs its fully
resolved configuration to stderr so any artifact can be regenerated from
its log alone.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import dataset as ds
from . import metrics
from .aem import asymmetry_map
from .errors import ConfigError, PipelineError
from .io import write_mmv, write_pgm
from .model import ToyModel, predict_labels
from .symmetry import calibrate, calibration_costs, pick_offset
from .synth import SynthConfig, mixup_synthesize, prepare_sample, synthesize
from .train import (
    KDSchedule,
    TrainConfig,
    TrainingPair,
    post_train,
    train_standard,
    write_log_csv,
)
from .volume import (
    MODALITIES,
    Sample,
    compute_brain_mask,
    load_sample,
    normalize_sample,
    save_sample,
)

log = logging.getLogger("asymforge")


class UsageError(Exception):
    """Bad flags or arguments; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


# Per-subcommand defaults; parsers use SUPPRESS so explicit flags are
# distinguishable from defaults when merging with a config file.
_DEFAULTS: dict[str, dict[str, Any]] = {}
_HANDLERS: dict[str, Callable[[dict[str, Any]], int]] = {}


def _load_config_file(path: str) -> dict[str, Any]:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text.decode())


def _resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    cfg = dict(_DEFAULTS[command])
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    config_path = getattr(args, "config", None)
    if config_path:
        file_cfg = _load_config_file(config_path)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(explicit)
    log.info("resolved config [%s]: %s", command, json.dumps(cfg, sort_keys=True, default=str))
    return cfg


def _load_sample_dir(path: str) -> Sample:
    images, label = ds.find_sample_files(path)
    if not any(images):
        raise UsageError(f"no volumes found under {path}")
    image, labels = load_sample(images, label)
    return Sample(Path(path).name, image, labels)


def _training_pairs(entries: list[ds.ManifestEntry]) -> list[TrainingPair]:
    """Real samples are z-scored at load; synthetic volumes were produced in
    normalized units and are consumed as stored."""
    pairs: list[TrainingPair] = []
    for entry in entries:
        sample = ds.load_entry(entry)
        if sample.labels is None:
            raise UsageError(f"entry {entry.sample_id} has no labels")
        if entry.kind == "real":
            image = normalize_sample(sample.image, compute_brain_mask(sample.image))
        else:
            image = sample.image
        pairs.append((image, sample.labels))
    return pairs


def _val_pairs(manifest: ds.Manifest) -> list[TrainingPair]:
    entries = manifest.select(kind="real", split="val")
    return _training_pairs(entries) if entries else []


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_calibrate(cfg: dict[str, Any]) -> int:
    sample = _load_sample_dir(cfg["in"])
    mask = compute_brain_mask(sample.image)
    costs = calibration_costs(mask, radius=cfg["radius"], axis=cfg["axis"])
    chosen = pick_offset(costs)
    lines = ["offset,cost"] + [f"{t},{c}" for t, c in costs]
    table = "\n".join(lines) + "\n"
    if cfg["out"]:
        Path(cfg["out"]).write_text(table)
    print(f"chosen_offset={chosen}")
    sys.stdout.write(table)
    return 0


def _cmd_aem(cfg: dict[str, Any]) -> int:
    sample = _load_sample_dir(cfg["in"])
    mask = compute_brain_mask(sample.image)
    mirror = calibrate(sample.image, radius=cfg["radius"], axis=cfg["axis"])
    image = normalize_sample(sample.image, mask)
    amap = asymmetry_map(image, mirror)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i, vol in amap.present():
        name = MODALITIES[i]
        write_mmv(out / f"aem_{name}.mmv", vol.data)
        write_pgm(out / f"aem_{name}_mid.pgm", vol.data[vol.dims[0] // 2])
    log.info("wrote %d asymmetry maps to %s (mirror offset %d)", sum(amap.availability), out, mirror.offset)
    return 0


def _cmd_synth(cfg: dict[str, Any]) -> int:
    root = Path(cfg["data"])
    host = prepare_sample(
        _load_sample_dir(str(root / cfg["host"])), radius=cfg["radius"], axis=cfg["axis"]
    )
    donor = prepare_sample(
        _load_sample_dir(str(root / cfg["donor"])), radius=cfg["radius"], axis=cfg["axis"]
    )
    if cfg["method"] == "mixup":
        rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"]]))
        result = mixup_synthesize(host, donor, cfg["alpha"], rng, seed=cfg["seed"])
    else:
        synth_cfg = SynthConfig(
            mask_to_brain=cfg["mask_to_brain"],
            mirror_radius=cfg["radius"],
            mirror_axis=cfg["axis"],
        )
        result = synthesize(host, donor, synth_cfg, seed=cfg["seed"])
    out = Path(cfg["out"])
    save_sample(result.image, result.labels, out, stem=result.sample_id)
    (out / f"{result.sample_id}_provenance.json").write_text(
        json.dumps(result.provenance.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    log.info("wrote synthetic sample %s to %s", result.sample_id, out)
    return 0


def _cmd_make_dataset(cfg: dict[str, Any]) -> int:
    files = ds.discover_samples(cfg["real"])
    if not files:
        raise UsageError(f"no samples discovered under {cfg['real']}")
    ids = sorted(files)
    if cfg["splits"]:
        counts = tuple(int(x) for x in str(cfg["splits"]).split(","))
        if len(counts) != 3:
            raise UsageError(f"--splits needs three comma-separated counts, got {cfg['splits']!r}")
    else:
        n = len(ids)
        n_train = max(1, int(round(n * 0.6)))
        n_val = max(0, int(round(n * 0.2)))
        counts = (n_train, n_val, n - n_train - n_val)
    manifest = ds.make_splits(ids, counts, cfg["seed"], files=files)
    out = Path(cfg["out"])
    result = ds.generate_corpus(
        manifest,
        ratio=cfg["ratio"],
        workers=cfg["workers"],
        seed=cfg["seed"],
        out_dir=out / "synthetic",
        method=cfg["method"],
        mask_to_brain=cfg["mask_to_brain"],
        mirror_radius=cfg["radius"],
        mirror_axis=cfg["axis"],
        mixup_alpha=cfg["alpha"],
    )
    result.manifest.save(out / "manifest.json")
    n_synth = len(result.manifest.select(kind="synthetic"))
    log.info("manifest: %d real + %d synthetic entries", len(manifest.entries), n_synth)
    if result.failures:
        log.error("%d of %d entries failed", len(result.failures), n_synth + len(result.failures))
        return 1
    return 0


def _train_common(cfg: dict[str, Any]) -> tuple[ds.Manifest, TrainConfig]:
    manifest = ds.Manifest.load(cfg["manifest"])
    train_cfg = TrainConfig(
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        seed=cfg["seed"],
        modality_dropout=cfg.get("dropout", False),
        fixed_modalities=_parse_modalities(cfg.get("modalities")),
    )
    return manifest, train_cfg


def _parse_modalities(spec: str | None) -> tuple[int, ...] | None:
    if not spec:
        return None
    names = {name: i for i, name in enumerate(MODALITIES)}
    out = []
    for token in str(spec).split(","):
        token = token.strip().lower()
        if token not in names:
            raise UsageError(f"unknown modality {token!r}; choose from {MODALITIES}")
        out.append(names[token])
    return tuple(out)


def _cmd_pretrain(cfg: dict[str, Any]) -> int:
    manifest, train_cfg = _train_common(cfg)
    data = _training_pairs(manifest.select(kind="synthetic", split="train"))
    if not data:
        raise UsageError("manifest has no synthetic train entries; run make-dataset first")
    model = ToyModel.init(cfg["hidden"], np.random.default_rng(np.random.SeedSequence([cfg["seed"], 1])))
    model, rows = train_standard(model, data, train_cfg, _val_pairs(manifest), stage="pretrain")
    model.save(cfg["out"])
    if cfg["log"]:
        write_log_csv(cfg["log"], rows)
    log.info("pretrained on %d synthetic samples -> %s", len(data), cfg["out"])
    return 0


def _cmd_finetune(cfg: dict[str, Any]) -> int:
    manifest, train_cfg = _train_common(cfg)
    entries = manifest.select(kind="real", split="train")
    if cfg["mixed"]:
        entries = entries + manifest.select(kind="synthetic", split="train")
        log.warning("mixed fine-tuning on real+synthetic; real-only is the recommended path")
    data = _training_pairs(entries)
    model = ToyModel.load(cfg["model"]) if cfg["model"] else ToyModel.init(
        cfg["hidden"], np.random.default_rng(np.random.SeedSequence([cfg["seed"], 1]))
    )
    model, rows = train_standard(model, data, train_cfg, _val_pairs(manifest), stage="finetune")
    model.save(cfg["out"])
    if cfg["log"]:
        write_log_csv(cfg["log"], rows)
    log.info("finetuned on %d samples -> %s", len(data), cfg["out"])
    return 0


def _cmd_posttrain(cfg: dict[str, Any]) -> int:
    manifest, train_cfg = _train_common(cfg)
    data = _training_pairs(manifest.select(kind="real", split="train"))
    sched = KDSchedule(k=cfg["k"], epochs=cfg["epochs"], distill_predictions=cfg["distill_predictions"])
    model = ToyModel.load(cfg["model"])
    student, rows = post_train(model, data, sched, train_cfg, _val_pairs(manifest))
    student.save(cfg["out"])
    if cfg["log"]:
        write_log_csv(cfg["log"], rows)
    log.info("post-trained student -> %s", cfg["out"])
    return 0


def _cmd_eval(cfg: dict[str, Any]) -> int:
    manifest = ds.Manifest.load(cfg["manifest"])
    entries = manifest.select(kind="real", split=cfg["split"])
    data = _training_pairs(entries)
    model = ToyModel.load(cfg["model"])
    report = metrics.evaluate_all(lambda image: predict_labels(model, image), data)
    report.save(cfg["out"])
    avg = report.average
    print(f"average,{avg.wt:.2f},{avg.tc:.2f},{avg.et:.2f}")
    log.info("evaluated %d samples over 15 combinations -> %s", len(data), cfg["out"])
    return 0


def _cmd_inspect(cfg: dict[str, Any]) -> int:
    sample = _load_sample_dir(cfg["in"])
    dims = sample.image.dims
    print(f"sample: {sample.sample_id}")
    print(f"dims: {dims[0]}x{dims[1]}x{dims[2]}")
    avail = ",".join(
        name for name, ok in zip(MODALITIES, sample.image.availability) if ok
    )
    print(f"available: {avail}")
    if sample.labels is not None:
        values, counts = np.unique(sample.labels.data, return_counts=True)
        hist = {int(v): int(c) for v, c in zip(values, counts)}
        for value in (0, 1, 2, 4):
            print(f"label {value}: {hist.get(value, 0)}")
    else:
        print("labels: none")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def _add(sub: argparse._SubParsersAction, name: str, help_text: str,
         defaults: dict[str, Any], handler: Callable[[dict[str, Any]], int]) -> _Parser:
    parser = sub.add_parser(name, help=help_text)
    parser.add_argument("--config", help="TOML or JSON file with the same keys as the flags")
    _DEFAULTS[name] = defaults
    _HANDLERS[name] = handler
    return parser


def build_parser() -> _Parser:
    root = _Parser(prog="asymforge", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = root.add_subparsers(dest="command", metavar="subcommand")
    S = argparse.SUPPRESS

    p = _add(sub, "calibrate", "find the mirror offset for one sample",
             {"in": None, "radius": 10, "axis": 2, "out": None}, _cmd_calibrate)
    p.add_argument("--in", dest="in", required=True, help="sample directory")
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--axis", type=int, default=S)
    p.add_argument("--out", default=S, help="also write the cost table CSV here")

    p = _add(sub, "aem", "write per-modality asymmetry error maps",
             {"in": None, "out": None, "radius": 10, "axis": 2}, _cmd_aem)
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--axis", type=int, default=S)

    p = _add(sub, "synth", "transplant one donor tumor into one host",
             {"data": None, "host": None, "donor": None, "out": None, "seed": 0,
              "mask_to_brain": False, "radius": 10, "axis": 2,
              "method": "asymmetry", "alpha": 0.4}, _cmd_synth)
    p.add_argument("--data", required=True, help="root directory of sample subdirectories")
    p.add_argument("--host", required=True)
    p.add_argument("--donor", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--mask-to-brain", dest="mask_to_brain", action="store_true", default=S)
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--axis", type=int, default=S)
    p.add_argument("--method", choices=("asymmetry", "mixup"), default=S)
    p.add_argument("--alpha", type=float, default=S, help="mixup Beta parameter")

    p = _add(sub, "make-dataset", "build splits and a synthetic corpus",
             {"real": None, "out": None, "ratio": 4, "workers": 1, "seed": 0,
              "splits": None, "method": "asymmetry", "mask_to_brain": False,
              "radius": 10, "axis": 2, "alpha": 0.4}, _cmd_make_dataset)
    p.add_argument("--real", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--splits", default=S, help="train,val,test counts, e.g. 219,50,100")
    p.add_argument("--method", choices=("asymmetry", "mixup"), default=S)
    p.add_argument("--mask-to-brain", dest="mask_to_brain", action="store_true", default=S)
    p.add_argument("--radius", type=int, default=S)
    p.add_argument("--axis", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)

    train_defaults = {"manifest": None, "out": None, "epochs": 100, "lr": 2e-4,
                      "seed": 0, "hidden": 16, "log": None, "dropout": False,
                      "modalities": None}

    p = _add(sub, "pretrain", "train from scratch on the synthetic corpus",
             dict(train_defaults), _cmd_pretrain)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--log", default=S, help="write per-epoch CSV here")
    p.add_argument("--dropout", action="store_true", default=S, help="one-to-many regime")
    p.add_argument("--modalities", default=S, help="one-to-one regime, e.g. flair,t2")

    p = _add(sub, "finetune", "continue training on real data only",
             {**train_defaults, "model": None, "mixed": False}, _cmd_finetune)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=S, help="checkpoint to start from (fresh init if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--log", default=S)
    p.add_argument("--dropout", action="store_true", default=S)
    p.add_argument("--modalities", default=S)
    p.add_argument("--mixed", action="store_true", default=S,
                   help="also include synthetic data (reported ablation; degrades)")

    p = _add(sub, "posttrain", "distillation post-training with modality dropout",
             {**train_defaults, "model": None, "k": 5, "epochs": 25,
              "distill_predictions": False}, _cmd_posttrain)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=S, help="teacher refresh period in epochs")
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--log", default=S)
    p.add_argument("--distill-predictions", dest="distill_predictions",
                   action="store_true", default=S)

    p = _add(sub, "eval", "Dice over all 15 modality combinations",
             {"manifest": None, "model": None, "split": "test", "out": None}, _cmd_eval)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=ds.SPLITS, default=S)
    p.add_argument("--out", required=True)

    p = _add(sub, "inspect", "print dims, availability and label histogram",
             {"in": None}, _cmd_inspect)
    p.add_argument("in", help="sample directory")

    return root


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        cfg = _resolve(args.command, args)
        return _HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, PipelineError, ValueError, NotImplementedError) as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 2
    except SystemExit as exc:  # argparse --help
        code = exc.code if isinstance(exc.code, int) else 0
        return code


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
