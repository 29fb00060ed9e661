"""Command-line pipeline: extract | gen-synthetic | train | eval | sweep | report.

Every run writes a resolved-config snapshot next to its outputs so any
command can be reproduced from that file alone. Exit codes: 0 success,
1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import (
    DatasetSplit,
    TrialRecord,
    generate_synthetic_dataset,
    load_record_matrix,
    parse_asvspoof_protocol,
    read_manifest,
    write_manifest,
)
from .detector import DetectorConfig, DetectorModel
from .errors import ConfigurationError, DataError, NonsemError, NumericError
from .features import (
    FrontendSpec,
    embedding_file_bytes,
    extract_matrix,
    read_embedding_file,
    read_wav,
)
from .metrics import (
    attack_table,
    eer_grid_csv,
    format_eer_grid,
    per_attack_eer,
    pooled_eer,
    read_scores,
    write_scores,
)
from .training import TrainConfig, evaluate_checkpoint, train


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# flat dotted-key configuration


def parse_config_file(path) -> dict[str, str]:
    """key=value lines with dotted keys; '#' comments and blanks ignored."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key=value, got '{stripped}'")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def apply_overrides(config: dict[str, str], sets: list[str] | None) -> dict[str, str]:
    for item in sets or []:
        if "=" not in item:
            raise DataError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _coerce(value: str, target_type):
    if target_type is bool:
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise DataError(f"expected boolean, got '{value}'")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def detector_config_from(config: dict[str, str], input_dim: int, seed: int) -> DetectorConfig:
    kwargs = {"input_dim": input_dim, "seed": seed}
    known = {f.name: f for f in dataclass_fields(DetectorConfig)}
    for key, raw in config.items():
        if not key.startswith("detector."):
            continue
        name = key[len("detector.") :]
        if name not in known:
            raise DataError(f"unknown config key '{key}'")
        if name == "conv_channels":
            kwargs[name] = int(raw)
        elif name == "use_delta":
            kwargs[name] = _coerce(raw, bool)
        elif name in ("seed", "input_dim"):
            kwargs[name] = int(raw)
        else:
            kwargs[name] = int(raw)
    return DetectorConfig(**kwargs)


def train_config_from(config: dict[str, str], seed: int, checkpoint_dir: str | None) -> TrainConfig:
    kwargs = {"seed": seed, "checkpoint_dir": checkpoint_dir}
    for key, raw in config.items():
        if not key.startswith("train."):
            continue
        name = key[len("train.") :]
        if name in ("epochs", "batch_size", "seed"):
            kwargs[name] = int(raw)
        elif name in ("lr0", "decay"):
            kwargs[name] = float(raw)
        elif name == "class_weights":
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 2:
                raise DataError(f"train.class_weights needs two values, got '{raw}'")
            kwargs[name] = (parts[0], parts[1])
        elif name == "loss_reduction":
            kwargs[name] = raw
        elif name == "checkpoint_dir":
            kwargs[name] = raw
        else:
            raise DataError(f"unknown config key '{key}'")
    return TrainConfig(**kwargs)


def write_resolved_config(out_dir: Path, subcommand: str, pairs: dict) -> None:
    lines = [f"subcommand={subcommand}"]
    for key in sorted(pairs):
        lines.append(f"{key}={pairs[key]}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{subcommand}.resolved.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _materialized(detector_cfg: DetectorConfig, train_cfg: TrainConfig) -> dict:
    """Every detector.*/train.* value after defaults, for the snapshot."""
    pairs = {}
    for f in dataclass_fields(DetectorConfig):
        pairs[f"detector.{f.name}"] = getattr(detector_cfg, f.name)
    for f in dataclass_fields(TrainConfig):
        if f.name == "checkpoint_dir":
            continue
        value = getattr(train_cfg, f.name)
        if f.name == "class_weights":
            value = f"{value[0]},{value[1]}"
        pairs[f"train.{f.name}"] = value
    return pairs


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    return int(os.environ.get("NONSEM_SEED", "0"))


def _parse_seeds(args) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    return [_resolve_seed(args.seed)]


# ---------------------------------------------------------------------------
# extract


def _labels_from_protocol(path) -> dict[str, tuple[str, str | None]]:
    records = parse_asvspoof_protocol(Path(path).read_text(encoding="utf-8").splitlines())
    return {r.utt_id: (r.label, r.attack_id) for r in records}


def _extract_one(wav_path: Path, frontend: FrontendSpec, window_ms: int, pad_mode: str) -> bytes:
    if frontend.kind == "precomputed":
        source = Path(frontend.root) / f"{wav_path.stem}.emb"
        if not source.is_file():
            raise DataError(f"missing precomputed embedding: {source}")
        read_embedding_file(source)  # validate before adopting
        return source.read_bytes()
    samples = read_wav(wav_path)
    matrix = extract_matrix(samples, frontend, window_ms, pad_mode=pad_mode)
    return embedding_file_bytes(matrix)


def cmd_extract(args) -> int:
    audio_dir = Path(args.audio_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(audio_dir.glob("*.wav"))
    if not wavs:
        raise DataError(f"no input files: {audio_dir} contains no .wav files")
    labels = _labels_from_protocol(args.protocol) if args.protocol else None
    seed = _resolve_seed(args.seed)
    if args.frontend == "synthetic":
        frontend = FrontendSpec("synthetic", seed=seed, dim=args.dim)
    else:
        if not args.precomputed_root:
            raise DataError("--frontend precomputed requires --precomputed-root")
        frontend = FrontendSpec("precomputed", root=Path(args.precomputed_root))

    def work(wav_path: Path):
        blob = _extract_one(wav_path, frontend, args.window_ms, args.pad_mode)
        target = out_dir / f"{wav_path.stem}.emb"
        if target.is_file() and hashlib.sha256(target.read_bytes()).digest() == hashlib.sha256(blob).digest():
            return "skipped"
        target.write_bytes(blob)
        return "wrote"

    outcomes: dict[str, str] = {}
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        futures = {wav.stem: pool.submit(work, wav) for wav in wavs}
        for stem, future in futures.items():
            try:
                outcomes[stem] = future.result()
            except NonsemError as exc:
                failures.append((stem, str(exc)))

    records = []
    for stem in sorted(outcomes):
        if labels is not None:
            if stem not in labels:
                failures.append((stem, "utterance missing from protocol"))
                continue
            label, attack = labels[stem]
        else:
            label, attack = args.default_label, None
        records.append(TrialRecord(stem, label, attack, embedding_path=f"{stem}.emb"))
    if records:
        write_manifest(DatasetSplit("extract", records, root=out_dir), out_dir / "manifest.tsv")

    write_resolved_config(
        out_dir,
        "extract",
        {
            "audio_dir": str(audio_dir),
            "out_dir": str(out_dir),
            "frontend": args.frontend,
            "frontend.dim": args.dim,
            "frontend.seed": seed,
            "precomputed_root": args.precomputed_root or "",
            "window_ms": args.window_ms,
            "pad_mode": args.pad_mode,
            "protocol": args.protocol or "",
            "default_label": args.default_label,
        },
    )
    wrote = sum(1 for v in outcomes.values() if v == "wrote")
    skipped = sum(1 for v in outcomes.values() if v == "skipped")
    print(f"extract: wrote {wrote}, skipped {skipped}, failed {len(failures)}")
    if failures:
        for stem, message in failures:
            print(f"extract: {stem}: {message}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# gen-synthetic


def cmd_gen_synthetic(args) -> int:
    out_dir = Path(args.out_dir)
    seed = _resolve_seed(args.seed)
    attacks = tuple(args.attacks.split(",")) if args.attacks else ("S01",)
    counts = {"train": args.train, "dev": args.dev, "eval": args.eval}
    for name, (n_bonafide, n_spoof) in counts.items():
        split = generate_synthetic_dataset(
            out_dir / name,
            seed=seed,
            n_bonafide=n_bonafide,
            n_spoof=n_spoof,
            d=args.dim,
            t=args.frames,
            separation=args.separation,
            name=name,
            window_ms=args.window_ms,
            attack_ids=attacks,
        )
        print(f"gen-synthetic: {name}: {len(split)} records in {out_dir / name}")
    write_resolved_config(
        out_dir,
        "gen-synthetic",
        {
            "seed": seed,
            "dim": args.dim,
            "frames": args.frames,
            "separation": args.separation,
            "window_ms": args.window_ms,
            "attacks": ",".join(attacks),
            "train": f"{args.train[0]},{args.train[1]}",
            "dev": f"{args.dev[0]},{args.dev[1]}",
            "eval": f"{args.eval[0]},{args.eval[1]}",
        },
    )
    return 0


# ---------------------------------------------------------------------------
# train


def _infer_input_dim(split: DatasetSplit) -> int:
    return load_record_matrix(split.records[0], split.root).d


def _run_training(train_split, dev_split, config: dict[str, str], seed: int, out_dir: Path):
    if "detector.input_dim" in config:
        input_dim = int(config["detector.input_dim"])
    else:
        input_dim = _infer_input_dim(train_split)
    detector_cfg = detector_config_from(config, input_dim, seed)
    train_cfg = train_config_from(config, seed, str(out_dir))
    model = DetectorModel(detector_cfg)
    best_path, log = train(model, train_split, dev_split, train_cfg)
    return model, best_path, log, (detector_cfg, train_cfg)


def cmd_train(args) -> int:
    config = apply_overrides(
        parse_config_file(args.config) if args.config else {}, args.set
    )
    train_split = read_manifest(args.train_manifest, name="train")
    dev_split = read_manifest(args.dev_manifest, name="dev")
    out_dir = Path(args.out_dir)
    seeds = _parse_seeds(args)

    results = []
    resolved = None
    for seed in seeds:
        run_dir = out_dir if len(seeds) == 1 else out_dir / f"seed-{seed}"
        _model, best_path, log, resolved = _run_training(train_split, dev_split, config, seed, run_dir)
        results.append((seed, log.best_epoch, log.best_dev_eer, best_path))
        print(
            f"train: seed {seed}: best epoch {log.best_epoch}, "
            f"dev EER {100.0 * log.best_dev_eer:.2f}% -> {best_path}"
        )
    if len(seeds) > 1:
        lines = ["seed\tbest_epoch\tbest_dev_eer\tcheckpoint"]
        for seed, epoch, eer, path in results:
            lines.append(f"{seed}\t{epoch}\t{eer!r}\t{path}")
        (out_dir / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        best = min(results, key=lambda r: (r[2], r[0]))
        print(f"train: best of {len(seeds)} seeds: seed {best[0]} (dev EER {100.0 * best[2]:.2f}%)")

    snapshot = _materialized(*resolved)
    snapshot.update(
        {
            "train_manifest": str(args.train_manifest),
            "dev_manifest": str(args.dev_manifest),
            "out_dir": str(out_dir),
            "seeds": ",".join(str(s) for s in seeds),
        }
    )
    write_resolved_config(out_dir, "train", snapshot)
    return 0


# ---------------------------------------------------------------------------
# eval


def _labeled_attacks(split: DatasetSplit) -> bool:
    return any(
        r.attack_id not in (None, "unknown") for r in split.records if r.label == "spoof"
    )


def cmd_eval(args) -> int:
    split = read_manifest(args.manifest, name="eval")
    entries = evaluate_checkpoint(args.checkpoint, split, batch_size=args.batch_size)
    out_scores = Path(args.out_scores)
    out_scores.parent.mkdir(parents=True, exist_ok=True)
    write_scores(entries, out_scores)

    pooled = pooled_eer(entries, split)
    report_lines = [
        f"trials: {pooled.n_bonafide} bonafide, {pooled.n_spoof} spoof",
        f"pooled EER: {100.0 * pooled.eer:.2f}%  (threshold {pooled.threshold:.6g})",
    ]
    csv_text = f"section,key,eer_percent\npooled,all,{100.0 * pooled.eer:.4f}\n"
    if _labeled_attacks(split):
        per_attack = per_attack_eer(entries, split)
        report_lines.append("")
        report_lines.append(attack_table(per_attack, row_name=Path(args.checkpoint).stem))
        for attack, result in per_attack.items():
            csv_text += f"per-attack,{attack},{100.0 * result.eer:.4f}\n"

    prefix = Path(args.report_prefix) if args.report_prefix else out_scores.with_suffix("")
    Path(f"{prefix}.report.txt").write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    Path(f"{prefix}.report.csv").write_text(csv_text, encoding="utf-8")
    print("\n".join(report_lines))

    write_resolved_config(
        out_scores.parent,
        "eval",
        {
            "checkpoint": str(args.checkpoint),
            "manifest": str(args.manifest),
            "out_scores": str(out_scores),
            "report_prefix": str(prefix),
            "batch_size": args.batch_size,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# sweep


def _cell_manifests(pattern: str, window: int) -> Path:
    return Path(pattern.replace("{window}", str(window)))


def _sweep_cell(args, config, window: int, use_delta: bool, seeds, out_dir: Path):
    """Train and evaluate one (type, window) cell; returns best eval EER."""
    paths = {
        "train": _cell_manifests(args.train_manifest, window),
        "dev": _cell_manifests(args.dev_manifest, window),
        "eval": _cell_manifests(args.eval_manifest, window),
    }
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        return None, f"missing inputs: {', '.join(missing)}"
    train_split = read_manifest(paths["train"], name="train")
    dev_split = read_manifest(paths["dev"], name="dev")
    eval_split = read_manifest(paths["eval"], name="eval")
    cell_config = dict(config)
    cell_config["detector.use_delta"] = "true" if use_delta else "false"
    best = None
    for seed in seeds:
        run_dir = out_dir / f"seed-{seed}"
        model, _, _, _ = _run_training(train_split, dev_split, cell_config, seed, run_dir)
        entries = evaluate_checkpoint(model, eval_split)
        write_scores(entries, run_dir / "eval_scores.tsv")
        eer = pooled_eer(entries, eval_split).eer
        if best is None or eer < best:
            best = eer
    return best, None


def cmd_sweep(args) -> int:
    config = apply_overrides(
        parse_config_file(args.config) if args.config else {}, args.set
    )
    windows = [int(w) for w in args.windows.split(",")]
    delta_modes = {"both": (False, True), "off": (False,), "on": (True,)}[args.delta]
    seeds = _parse_seeds(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells_spec = [
        ("Delta" if use_delta else "Direct", window, use_delta)
        for use_delta in delta_modes
        for window in windows
    ]

    def run_cell(spec):
        row, window, use_delta = spec
        cell_dir = out_dir / f"cell-{row.lower()}-{window}ms"
        value, problem = _sweep_cell(args, config, window, use_delta, seeds, cell_dir)
        return (row, window), value, problem

    results = {}
    problems = []
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for key, value, problem in pool.map(run_cell, cells_spec):
            results[key] = value
            if problem:
                problems.append((key, problem))

    rows = [name for name in ("Direct", "Delta") if any(k[0] == name for k in results)]
    cols = [f"{w}ms" for w in windows]
    cells = {(row, f"{w}ms"): results.get((row, w)) for row in rows for w in windows}
    grid = format_eer_grid(rows, cols, cells, mark_best=True, title="sweep EER(%), * = best")
    (out_dir / "sweep_grid.txt").write_text(grid, encoding="utf-8")
    (out_dir / "sweep_grid.csv").write_text(eer_grid_csv(rows, cols, cells), encoding="utf-8")
    print(grid, end="")
    for (row, window), problem in problems:
        print(f"sweep: cell {row}/{window}ms absent: {problem}", file=sys.stderr)

    snapshot = dict(config)
    snapshot.update(
        {
            "windows": args.windows,
            "delta": args.delta,
            "seeds": ",".join(str(s) for s in seeds),
            "train_manifest": args.train_manifest,
            "dev_manifest": args.dev_manifest,
            "eval_manifest": args.eval_manifest,
            "out_dir": str(out_dir),
        }
    )
    write_resolved_config(out_dir, "sweep", snapshot)
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    cells: dict[tuple[str, str], float] = {}
    rows: list[str] = []
    cols: list[str] = []
    for row, col, scores_path, manifest_path in args.entry:
        split = read_manifest(manifest_path)
        entries = read_scores(scores_path)
        eer = pooled_eer(entries, split).eer
        key = (row, col)
        # repeated (row, col) entries keep the best score (seed protocol)
        if key not in cells or eer < cells[key]:
            cells[key] = eer
        if row not in rows:
            rows.append(row)
        if col not in cols:
            cols.append(col)
    grid = format_eer_grid(rows, cols, cells, mark_best=True, title="EER(%), * = best")
    print(grid, end="")
    if args.out_prefix:
        prefix = Path(args.out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}.txt").write_text(grid, encoding="utf-8")
        Path(f"{prefix}.csv").write_text(eer_grid_csv(rows, cols, cells), encoding="utf-8")
        write_resolved_config(
            prefix.parent,
            "report",
            {
                "entries": ";".join(":".join(e) for e in args.entry),
                "out_prefix": str(prefix),
            },
        )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="nonsemdetect", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed WAV files into EMB1 matrices plus a manifest")
    p.add_argument("--audio-dir", required=True, help="directory of mono 16 kHz 16-bit WAV files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--window-ms", type=int, default=200, help="chunk window, must divide 6000")
    p.add_argument("--frontend", choices=["synthetic", "precomputed"], default="synthetic")
    p.add_argument("--dim", type=int, default=16, help="synthetic embedding dimension")
    p.add_argument("--precomputed-root", help="directory of <utt>.emb files for --frontend precomputed")
    p.add_argument("--pad-mode", choices=["cycle", "zero"], default="cycle")
    p.add_argument("--protocol", help="ASVspoof protocol file supplying labels")
    p.add_argument("--default-label", choices=["bonafide", "spoof"], default="bonafide",
                   help="label used when no protocol is given")
    p.add_argument("--seed", type=int, help="synthetic frontend seed (default NONSEM_SEED or 0)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gen-synthetic", help="write a deterministic synthetic train/dev/eval dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--window-ms", type=int, default=200)
    p.add_argument("--train", type=int, nargs=2, default=[200, 200], metavar=("BONAFIDE", "SPOOF"))
    p.add_argument("--dev", type=int, nargs=2, default=[50, 50], metavar=("BONAFIDE", "SPOOF"))
    p.add_argument("--eval", type=int, nargs=2, default=[100, 100], metavar=("BONAFIDE", "SPOOF"))
    p.add_argument("--attacks", help="comma-separated attack ids cycled over spoof records")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a detector from manifests")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--dev-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key=value config file (detector.* and train.* keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated list for a multi-seed loop")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest with a checkpoint and report EER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-scores", required=True)
    p.add_argument("--report-prefix")
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/eval a window-by-delta grid of configurations")
    p.add_argument("--windows", default="50,100,200,300")
    p.add_argument("--delta", choices=["both", "on", "off"], default="both")
    p.add_argument("--train-manifest", required=True, help="path pattern, may contain {window}")
    p.add_argument("--dev-manifest", required=True)
    p.add_argument("--eval-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tabulate EERs from score files")
    p.add_argument("--entry", action="append", nargs=4, required=True,
                   metavar=("ROW", "COL", "SCORES", "MANIFEST"))
    p.add_argument("--out-prefix")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
            return args.func(args)
    except NumericError as exc:
        print(f"nonsemdetect: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigurationError) as exc:
        print(f"nonsemdetect: {exc}", file=sys.stderr)
        return 2
    except NonsemError as exc:
        print(f"nonsemdetect: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
