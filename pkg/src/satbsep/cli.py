"""``satbsep`` command line: synth, extract-f0, train, separate, evaluate, report.

Exit codes: 0 success, 2 I/O failure, 3 missing prerequisite, 4 schema or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .audio import AudioClip, read_wav, write_wav
from .bsseval import MetricsRecord, batch_report, read_metrics_csv, sdr_sir_sar, write_metrics_csv
from .config import ConfigError, RunConfig
from .corpus import (
    PARTS,
    QuartetMix,
    Stem,
    VoicePart,
    enumerate_quartets,
    make_split,
    make_unison_mix,
    materialise,
    read_manifest,
    synthesize_piece,
    write_manifest,
)
from .dsp import n_frames_for
from .nets import DISPLAY_NAMES, KINDS, ModelConfig, load_checkpoint
from .pipeline import (
    ConfigurationError,
    TrainSpec,
    conditioning_tracks,
    references_of,
    separate,
    train,
    write_separation,
)
from .pitch import F0Track, estimate_f0, load_oracle_f0, write_f0_csv

logger = logging.getLogger("satbsep")

EXIT_OK, EXIT_IO, EXIT_MISSING, EXIT_SCHEMA = 0, 2, 3, 4
SIDECAR = "artifacts.json"
ORACLE_SUFFIX = ".f0.csv"
ESTIMATED_SUFFIX = ".est.f0.csv"


class MissingPrerequisite(Exception):
    pass


class SchemaError(Exception):
    pass


# ---------------------------------------------------------------------------
# artifact sidecars


def record_artifacts(out_dir: Path, files, cfg: RunConfig, command: str) -> Path:
    """Add ``files`` (paths under ``out_dir``) to the directory's sidecar with
    the config hash, command, creation time and content digest."""
    path = out_dir / SIDECAR
    meta = json.loads(path.read_text()) if path.exists() else {"configs": {}, "files": {}}
    meta["configs"][cfg.hash] = cfg.dumps()
    now = datetime.now(timezone.utc).isoformat()
    for f in files:
        f = Path(f)
        meta["files"][f.relative_to(out_dir).as_posix()] = {
            "config_hash": cfg.hash,
            "command": command,
            "created": now,
            "sha256": hashlib.sha256(f.read_bytes()).hexdigest(),
        }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def artifact_time(path: Path) -> datetime:
    """Creation time recorded in the sidecar, falling back to the file mtime."""
    side = path.parent / SIDECAR
    if side.exists():
        entry = json.loads(side.read_text()).get("files", {}).get(path.name)
        if entry:
            return datetime.fromisoformat(entry["created"])
    return datetime.fromtimestamp(path.stat().st_mtime, timezone.utc)


# ---------------------------------------------------------------------------
# corpus on disk: stems/<piece>/<singer>.wav (+ .f0.csv), manifest.jsonl, unison.jsonl


class CorpusStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest = self.root / "manifest.jsonl"
        self.unison = self.root / "unison.jsonl"
        self._cache: dict[tuple[str, str], Stem] = {}

    def require(self) -> None:
        if not self.manifest.exists():
            raise MissingPrerequisite(f"corpus manifest {self.manifest} not found; run `satbsep synth` first")

    def rows(self, path: Path) -> list[dict]:
        try:
            return read_manifest(path)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError(f"{path}: not a JSONL manifest ({exc})") from None

    def stem(self, rel: str, part: VoicePart, singer: str, piece: str, f0_suffix: str | None) -> Stem:
        key = (piece, singer, f0_suffix)
        if key in self._cache:
            return self._cache[key]
        wav = self.root / rel
        if not wav.exists():
            raise MissingPrerequisite(f"stem {wav} listed in the manifest is missing")
        audio = read_wav(wav)
        f0 = None
        if f0_suffix is not None:
            csv = wav.with_name(wav.stem + f0_suffix)
            if not csv.exists():
                hint = "; run `satbsep extract-f0` first" if f0_suffix == ESTIMATED_SUFFIX else ""
                raise MissingPrerequisite(f"F0 file {csv} not found{hint}")
            f0 = load_oracle_f0(csv, n_frames_for(len(audio)), sample_rate=audio.sample_rate)
        stem = Stem(part, singer, piece, audio, f0, rel)
        self._cache[key] = stem
        return stem

    def quartets(self, split: str | None, f0_suffix: str | None) -> list[QuartetMix]:
        self.require()
        out = []
        for row in self.rows(self.manifest):
            if split is not None and row.get("split") != split:
                continue
            try:
                stems = {
                    p: self.stem(row["stems"][p.label], p, row["singers"][p.label], row["piece_id"], f0_suffix)
                    for p in PARTS
                }
                out.append(QuartetMix(stems, None, float(row["scale"]), row["mix_id"], row["split"]))
            except KeyError as exc:
                raise SchemaError(f"{self.manifest}: manifest row lacks {exc}") from None
        return out

    def unison_mixes(self, f0_suffix: str | None):
        if not self.unison.exists():
            raise MissingPrerequisite(f"unison manifest {self.unison} not found; synthesise with >= 2 singers per part")
        out = []
        for row in self.rows(self.unison):
            stems = {
                p: [self.stem(rel, p, Path(rel).stem, row["piece_id"], f0_suffix) for rel in row["stems"][p.label]]
                for p in PARTS
            }
            out.append(make_unison_mix(stems, row["mix_id"], require_f0=f0_suffix is not None))
        return out

    def stem_files(self) -> list[Path]:
        return sorted((self.root / "stems").glob("*/*.wav"))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    store = CorpusStore(cfg.paths.corpus_root)
    c = cfg.corpus
    pieces = [f"piece{i}" for i in range(c.pieces)]
    test_pieces = pieces[len(pieces) - c.test_pieces :] if c.test_pieces else []
    quartets, unison, written, held = [], [], [], {}
    for i, piece in enumerate(pieces):
        stems = synthesize_piece(piece, c.singers_per_part, seed=cfg.seed * 100 + i, duration_s=c.duration_s)
        for part in PARTS:
            for stem in stems[part]:
                rel = f"stems/{piece}/{stem.singer_id}.wav"
                wav = store.root / rel
                # round to the stored precision so manifest scales match a reload
                stem.audio = AudioClip(stem.audio.samples.astype(np.float32).astype(np.float64),
                                       stem.audio.sample_rate)
                write_wav(wav, stem.audio)
                write_f0_csv(wav.with_name(stem.singer_id + ORACLE_SUFFIX), stem.f0)
                written += [wav, wav.with_name(stem.singer_id + ORACLE_SUFFIX)]
                stem.source = rel
        quartets += enumerate_quartets(stems, keep_audio=False)
        if piece in test_pieces and c.singers_per_part >= 2:
            u = make_unison_mix(stems)
            unison.append({
                "mix_id": u.mix_id, "piece_id": piece, "split": "test_case2",
                "stems": {p.label: [s.source for s in stems[p]] for p in PARTS},
            })
        elif c.hold_out_singer and c.singers_per_part >= 2:
            held[piece] = {p: stems[p][-1].singer_id for p in PARTS}
    plan = make_split(quartets, test_pieces, held)
    for m in quartets:
        m.split = m.split or "excluded"
    write_manifest(store.manifest, quartets)
    written.append(store.manifest)
    if unison:
        store.unison.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in unison))
        written.append(store.unison)
    record_artifacts(store.root, written, cfg, "synth")
    n_stems = len(pieces) * 4 * c.singers_per_part
    print(f"synthesised {n_stems} stems, {len(quartets)} quartets "
          f"({len(plan.train)} train, {len(plan.test_case1)} test), {len(unison)} unison mixes -> {store.root}")
    return EXIT_OK


def cmd_extract_f0(cfg: RunConfig, args) -> int:
    if args.inputs:
        wavs = [Path(p) for p in args.inputs]
        root = None
    else:
        store = CorpusStore(cfg.paths.corpus_root)
        store.require()
        wavs, root = store.stem_files(), store.root
    by_dir: dict[Path, list[Path]] = {}
    for wav in wavs:
        if not wav.exists():
            raise MissingPrerequisite(f"audio file {wav} not found")
        out_dir = Path(args.out) if args.out else wav.parent
        out = out_dir / (wav.stem + ESTIMATED_SUFFIX)
        write_f0_csv(out, estimate_f0(read_wav(wav)))
        by_dir.setdefault(out_dir, []).append(out)
    for out_dir, files in by_dir.items():
        record_artifacts(out_dir, files, cfg, "extract-f0")
    print(f"estimated F0 for {len(wavs)} file(s)" + (f" under {root}" if root else ""))
    return EXIT_OK


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(kind=cfg.model.kind, encoder_channels=cfg.model.encoder_channels, dropout=cfg.model.dropout)


def _train_spec(cfg: RunConfig) -> TrainSpec:
    t = cfg.train
    return TrainSpec(
        _model_config(cfg), learning_rate=t.learning_rate, batch_size=t.batch_size, max_steps=t.max_steps,
        patch_hop=t.patch_hop, seed=cfg.seed, checkpoint_every=t.checkpoint_every, eval_every=t.eval_every,
        patience=t.patience, val_fraction=t.val_fraction,
    )


def _checkpoint_dir(cfg: RunConfig) -> Path:
    return Path(cfg.paths.checkpoint_dir) / cfg.model.kind


def cmd_train(cfg: RunConfig, args) -> int:
    store = CorpusStore(cfg.paths.corpus_root)
    spec = _train_spec(cfg)
    suffix = ORACLE_SUFFIX if spec.model.pitch_conditioned else None
    mixes = store.quartets("train", suffix)
    if not mixes:
        raise MissingPrerequisite(f"{store.manifest} has no training mixes")
    out = _checkpoint_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpts = train(spec, mixes, out)
    record_artifacts(out, sorted(out.glob("*.ckpt")) + sorted(out.glob("train_log*.jsonl")), cfg, "train")
    for c in ckpts:
        print(f"{cfg.model.kind}{'/' + c.config.target_part if c.config.target_part else ''}: "
              f"step {c.step}, checkpoint {c.checkpoint_id}")
    return EXIT_OK


def load_checkpoints(directory: Path, kind: str) -> list:
    names = [f"model_{p.label.lower()}.ckpt" for p in PARTS] if kind == "unet" else ["model.ckpt"]
    out = []
    for name in names:
        path = directory / name
        if not path.exists():
            raise MissingPrerequisite(f"checkpoint {path} not found; run `satbsep train` with model.kind={kind}")
        try:
            out.append(load_checkpoint(path))
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: {exc}") from None
    return out


def _parse_f0_flags(values, n_frames: int) -> dict[VoicePart, F0Track]:
    out = {}
    for item in values or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--f0 expects PART=PATH, got {item!r}")
        try:
            part = VoicePart.from_name(name)
        except (KeyError, ValueError):
            raise ConfigError(f"unknown voice part {name!r}") from None
        if not Path(path).exists():
            raise MissingPrerequisite(f"F0 file {path} not found")
        out[part] = load_oracle_f0(path, n_frames)
    return out


def cmd_separate(cfg: RunConfig, args) -> int:
    kind = cfg.model.kind
    ckpts = load_checkpoints(_checkpoint_dir(cfg), kind)
    pitch = ckpts[0].config.pitch_conditioned

    if args.mixture:
        wav = Path(args.mixture)
        if not wav.exists():
            raise MissingPrerequisite(f"mixture {wav} not found")
        mixture = read_wav(wav)
        f0s = _parse_f0_flags(args.f0, n_frames_for(len(mixture))) if pitch else None
        if pitch and set(f0s) != set(PARTS):
            missing = [p.label for p in PARTS if p not in f0s]
            raise MissingPrerequisite(f"{kind} needs --f0 PART=CSV for {', '.join(missing)}")
        out = Path(args.out or Path(cfg.paths.results_dir) / kind / "single")
        res = separate(mixture, ckpts, f0s, wav.stem)
        res.f0_source = "file" if pitch else None
        side = write_separation(out, res, {"config_hash": cfg.hash, "model_kind": kind})
        record_artifacts(out, [side] + [out / n for n in json.loads(side.read_text())["stems"].values()],
                         cfg, "separate")
        print(f"separated {wav} -> {out}")
        return EXIT_OK

    store = CorpusStore(cfg.paths.corpus_root)
    suffix = None
    if pitch:
        suffix = ORACLE_SUFFIX if cfg.f0_mode == "oracle" else ESTIMATED_SUFFIX
    case = cfg.eval.use_case
    mixes = store.quartets("test_case1", suffix) if case == "quartet" else store.unison_mixes(suffix)
    if not mixes:
        raise MissingPrerequisite(f"corpus at {store.root} has no {case} test mixes")
    out = Path(cfg.paths.results_dir) / kind / case
    written = []
    for mix in mixes:
        if isinstance(mix, QuartetMix):
            mix = materialise(mix)
        f0s = conditioning_tracks(mix, "oracle") if pitch else None
        res = separate(mix.mixture, ckpts, f0s, mix.mix_id)
        res.f0_source = cfg.f0_mode if pitch else None
        res.use_case = case
        side = write_separation(out, res, {"config_hash": cfg.hash, "model_kind": kind})
        written += [side] + [out / n for n in json.loads(side.read_text())["stems"].values()]
    record_artifacts(out, written, cfg, "separate")
    print(f"separated {len(mixes)} {case} mixes with {kind} -> {out}")
    return EXIT_OK


def _score_one(store: CorpusStore, mixes: dict, sidecar: Path, model_id: str) -> list[MetricsRecord]:
    meta = json.loads(sidecar.read_text())
    try:
        mix_id, stems = meta["mix_id"], meta["stems"]
    except KeyError as exc:
        raise SchemaError(f"{sidecar}: separation sidecar lacks {exc}") from None
    if mix_id not in mixes:
        raise MissingPrerequisite(f"{sidecar}: mix {mix_id} is not in the corpus manifest")
    mix = mixes[mix_id]
    if isinstance(mix, QuartetMix):
        mix = materialise(mix)
    refs = references_of(mix)
    out = []
    for p in PARTS:
        path = sidecar.parent / stems[p.label]
        if not path.exists():
            raise MissingPrerequisite(f"estimate {path} not found")
        est = read_wav(path).samples
        out.append(sdr_sir_sar(est[: len(refs[0])], refs, p.index, p.label, mix_id, model_id))
    return out


def cmd_evaluate(cfg: RunConfig, args) -> int:
    kind, case = cfg.model.kind, cfg.eval.use_case
    results = Path(args.results or Path(cfg.paths.results_dir) / kind / case)
    sidecars = sorted(p for p in results.glob("*.json") if p.name != SIDECAR) if results.is_dir() else []
    if not sidecars:
        raise MissingPrerequisite(f"no separation outputs under {results}; run `satbsep separate` first")
    store = CorpusStore(cfg.paths.corpus_root)
    mixes = {m.mix_id: m for m in (store.quartets(None, None) if case == "quartet" else store.unison_mixes(None))}
    model_id = args.model_id or kind
    with ThreadPoolExecutor(max_workers=cfg.eval.workers) as pool:
        per_mix = list(pool.map(lambda s: _score_one(store, mixes, s, model_id), sidecars))
    records = [r for recs in per_mix for r in recs]
    out_dir = Path(cfg.paths.report_dir)
    path = out_dir / f"metrics_{model_id}_{case}.csv"
    write_metrics_csv(path, records)
    record_artifacts(out_dir, [path], cfg, "evaluate")
    sdr = np.mean([r.capped("sdr") for r in records])
    print(f"scored {len(sidecars)} mixes ({len(records)} rows), mean SDR {sdr:.2f} dB -> {path}")
    return EXIT_OK


MODEL_ORDER = list(DISPLAY_NAMES)


def merge_runs(paths: list[Path]) -> dict[str, list[MetricsRecord]]:
    """Records per model_id; a model_id found in several files keeps the newest file."""
    chosen: dict[str, tuple[datetime, Path, list[MetricsRecord]]] = {}
    for path in paths:
        try:
            records = read_metrics_csv(path)
        except (ValueError, KeyError) as exc:
            raise SchemaError(f"{path}: {exc}") from None
        stamp = artifact_time(path)
        by_model: dict[str, list[MetricsRecord]] = {}
        for r in records:
            by_model.setdefault(r.model_id, []).append(r)
        for model_id, recs in by_model.items():
            if model_id in chosen:
                old = chosen[model_id]
                newer = stamp > old[0]
                logger.warning("model_id %s appears in %s and %s; keeping the newer %s",
                               model_id, old[1], path, path if newer else old[1])
                if not newer:
                    continue
            chosen[model_id] = (stamp, path, recs)
    return {k: v[2] for k, v in chosen.items()}


def _model_sort_key(model_id: str):
    return (MODEL_ORDER.index(model_id) if model_id in MODEL_ORDER else len(MODEL_ORDER), model_id)


def build_comparison(runs: dict[str, list[MetricsRecord]]) -> dict:
    models = sorted(runs, key=_model_sort_key)
    tables = {m: batch_report(runs[m]) for m in models}
    out = {
        "models": models,
        "display_names": {m: DISPLAY_NAMES.get(m, m) for m in models},
        "columns": [p.label for p in PARTS] + ["Avg."],
        "tables": tables,
    }
    if len(models) > 1:
        best = {}
        for p in PARTS:
            have = [m for m in models if p.label in tables[m]["sdr_boxplot"]]
            if have:
                best[p.label] = max(have, key=lambda m: tables[m]["sdr_boxplot"][p.label]["median"])
        out["best_median"] = best
    return out


def write_comparison(out_dir: Path, comparison: dict) -> list[Path]:
    import csv

    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(comparison, indent=2, sort_keys=True))
    table_path = out_dir / "report.csv"
    with open(table_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "metric"] + comparison["columns"])
        for m in comparison["models"]:
            t = comparison["tables"][m]["table"]
            for metric in ("sdr", "sir", "sar"):
                row = [comparison["display_names"][m], metric.upper()]
                for col in comparison["columns"]:
                    cell = t[metric].get(col)
                    if cell is None:
                        row.append("")
                    elif col == "Avg.":
                        row.append(f"{cell:.2f}")
                    else:
                        row.append(f"{cell['mean']:.2f}±{cell['std']:.2f}")
                w.writerow(row)
    box_path = out_dir / "sdr_boxplot.csv"
    best = comparison.get("best_median")
    with open(box_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "part", "min", "q1", "median", "q3", "max", "n"] + (["best_median"] if best else []))
        for m in comparison["models"]:
            for part, b in comparison["tables"][m]["sdr_boxplot"].items():
                row = [comparison["display_names"][m], part] + [f"{b[k]:.4f}" for k in ("min", "q1", "median", "q3", "max")]
                row.append(b["n"])
                if best:
                    row.append("*" if best.get(part) == m else "")
                w.writerow(row)
    return [json_path, table_path, box_path]


def cmd_report(cfg: RunConfig, args) -> int:
    out_dir = Path(cfg.paths.report_dir)
    if args.metrics:
        paths = [Path(p) for p in args.metrics]
    else:
        paths = sorted(out_dir.glob(f"metrics_*_{cfg.eval.use_case}.csv"))
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise MissingPrerequisite(f"metrics file {missing[0]} not found")
    if not paths:
        raise MissingPrerequisite(f"no metrics files under {out_dir}; run `satbsep evaluate` first")
    comparison = build_comparison(merge_runs(paths))
    files = write_comparison(out_dir, comparison)
    record_artifacts(out_dir, files, cfg, "report")
    for m in comparison["models"]:
        t = comparison["tables"][m]["table"]
        print(f"{comparison['display_names'][m]:>14}: SDR avg {t['sdr']['Avg.']:.2f}  "
              f"SIR avg {t['sir']['Avg.']:.2f}  SAR avg {t['sar']['Avg.']:.2f}")
    print(f"report -> {files[1]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    return out


# convenience flags and the config keys they override
FLAG_KEYS = {
    "corpus_root": "paths.corpus_root",
    "checkpoint_dir": "paths.checkpoint_dir",
    "results_dir": "paths.results_dir",
    "report_dir": "paths.report_dir",
    "kind": "model.kind",
    "seed": "seed",
    "pieces": "corpus.pieces",
    "singers": "corpus.singers_per_part",
    "duration": "corpus.duration_s",
    "steps": "train.max_steps",
    "f0_mode": "f0_mode",
    "use_case": "eval.use_case",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="plain-text config file of 'key = value' lines")
    common.add_argument("--set", "-s", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--corpus-root", dest="corpus_root")
    common.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    common.add_argument("--results-dir", dest="results_dir")
    common.add_argument("--report-dir", dest="report_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="satbsep", description="SATB choir source separation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesise a corpus of stems, F0 tracks and manifests")
    p.add_argument("--pieces", type=int)
    p.add_argument("--singers", type=int, help="singers per part")
    p.add_argument("--duration", type=float, help="seconds per piece")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-f0", parents=[common], help="estimate F0 for corpus stems or given WAV files")
    p.add_argument("inputs", nargs="*", help="WAV files (default: every corpus stem)")
    p.add_argument("--out", help="output directory (default: next to each input)")
    p.set_defaults(func=cmd_extract_f0)

    p = sub.add_parser("train", parents=[common], help="train a model on the corpus training split")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", parents=[common], help="separate the test split or a single mixture")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--f0-mode", dest="f0_mode", choices=cfgmod.F0_MODES)
    p.add_argument("--use-case", dest="use_case", choices=["quartet", "unison16"])
    p.add_argument("--mixture", help="separate this WAV instead of the corpus test split")
    p.add_argument("--f0", action="append", metavar="PART=CSV", help="F0 track per part for --mixture")
    p.add_argument("--out", help="output directory for --mixture")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", parents=[common], help="score separation outputs against the references")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--use-case", dest="use_case", choices=["quartet", "unison16"])
    p.add_argument("--results", help="directory of separation outputs")
    p.add_argument("--model-id", dest="model_id", help="label written to the metrics file (default: model kind)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="merge metrics files into the comparison tables")
    p.add_argument("metrics", nargs="*", help="metrics CSV files (default: all for the use case)")
    p.add_argument("--use-case", dest="use_case", choices=["quartet", "unison16"])
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not Path(args.config).exists():
            raise MissingPrerequisite(f"config file {args.config} not found")
        cfg = cfgmod.resolve(args.config, _overrides(args))
        return args.func(cfg, args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SchemaError, ConfigError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
