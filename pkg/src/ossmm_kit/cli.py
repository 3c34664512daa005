"""Command-line front end: eight subcommands that drive the pipeline
from corpus synthesis to replayed nights.

Artifact rules, applied uniformly:
  * every JSON report embeds a "meta" block with the tool version, the
    run seed, and SHA-256 hashes of the files the command consumed;
  * CSV outputs keep their fixed column contract and carry the same
    block in a `<name>.meta.json` sidecar;
  * identical inputs plus identical seed reproduce every artifact byte
    for byte.

Exit codes: 0 success, 2 validation/config error, 3 missing input,
4 internal error. The OSSMM_KIT_THREADS environment variable caps the
worker threads feature extraction may use (default: one per CPU);
everything else runs single-threaded regardless.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, dsp, features, ingest, ml, stream, synth
from .errors import MissingInputError, OssmmError, ValidationError
from .model import CLASS_NAMES, DatasetSplit

PROG = "ossmm"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING_INPUT = 3
EXIT_INTERNAL = 4

FEATURES_CSV = "features.csv"
MODEL_JSON = "model.json"
CV_REPORT = "cv_report.json"


# --- plumbing -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_files(root: Path, paths: list[Path]) -> dict[str, str]:
    return {str(p.relative_to(root) if p.is_relative_to(root) else p): _sha256(p)
            for p in sorted(paths)}


def _corpus_files(corpus: ingest.Corpus) -> list[Path]:
    """The files the pipeline actually reads (sidecar truth files are
    generator bookkeeping, not pipeline input)."""
    out = []
    manifest = corpus.root / ingest.MANIFEST_FILE
    if manifest.is_file():
        out.append(manifest)
    for night in corpus.nights:
        for fname in (ingest.META_FILE, ingest.FRAMES_FILE, ingest.LABELS_FILE):
            out.append(night.path / fname)
    return out


def _meta(seed, input_hashes: dict[str, str]) -> dict:
    return {"tool_version": __version__, "seed": seed,
            "input_hashes": input_hashes}


def _write_json(path: Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _sidecar(csv_path: Path, meta: dict) -> None:
    _write_json(Path(str(csv_path) + ".meta.json"), meta)


def thread_cap() -> int:
    raw = os.environ.get("OSSMM_KIT_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"OSSMM_KIT_THREADS={raw!r} is not an integer")
    if cap < 1:
        raise ValidationError(f"OSSMM_KIT_THREADS must be >= 1, got {cap}")
    return cap


def _load_corpus(path: str) -> ingest.Corpus:
    root = Path(path)
    if not root.is_dir():
        raise MissingInputError(
            f"corpus directory not found: {root}; "
            f"create one with `{PROG} synth --out {root}`")
    return ingest.load_corpus(root)


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingInputError(
            f"{path} not found; produce it with `{PROG} {producer}`")
    return path


def _load_table(out_dir: Path) -> features.FeatureTable:
    return features.FeatureTable.read_csv(
        _require(out_dir / FEATURES_CSV, "extract"))


# --- run configuration ----------------------------------------------------------

_CONFIG_KEYS = {"seed", "k_folds", "grid", "split", "n_nights", "epochs_range"}
_GRID_ENTRY_KEYS = {"kind", "params"}
_SPLIT_KEYS = {"train_nights", "test_nights"}


@dataclass
class RunConfig:
    """Everything a command needs beyond its file paths. Built from the
    optional --config JSON merged with flags; flags win. Unknown keys
    anywhere in the JSON are rejected outright.
    """

    seed: int = 0
    k_folds: int = 6
    grid: list[ml.ClassifierConfig] | None = None
    split: DatasetSplit | None = None
    n_nights: int = 15
    epochs_range: tuple[int, int] = synth.DEFAULT_EPOCH_RANGE

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        raw = {}
        spec = getattr(args, "config", None)
        if spec:
            if spec.lstrip().startswith("{"):
                text = spec
            else:
                text = _require(Path(spec), "… (write the config file yourself)"
                                ).read_text()
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"--config is not valid JSON: {exc}")
            if not isinstance(raw, dict):
                raise ValidationError("--config must hold a JSON object")
            unknown = set(raw) - _CONFIG_KEYS
            if unknown:
                raise ValidationError(
                    f"unknown config key(s) {sorted(unknown)}; "
                    f"expected a subset of {sorted(_CONFIG_KEYS)}")

        cfg = cls()
        cfg.seed = int(raw.get("seed", 0))
        if getattr(args, "seed", None) is not None:
            cfg.seed = int(args.seed)
        cfg.k_folds = int(raw.get("k_folds", 6))
        if getattr(args, "folds", None) is not None:
            cfg.k_folds = int(args.folds)
        if "grid" in raw:
            cfg.grid = [cls._grid_entry(e) for e in raw["grid"]]
            if not cfg.grid:
                raise ValidationError("config grid must not be empty")
        if "split" in raw:
            s = raw["split"]
            if not isinstance(s, dict) or set(s) != _SPLIT_KEYS:
                raise ValidationError(
                    f"config split must have exactly the keys {sorted(_SPLIT_KEYS)}")
            cfg.split = DatasetSplit(tuple(s["train_nights"]),
                                     tuple(s["test_nights"]))
        cfg.n_nights = int(raw.get("n_nights", 15))
        er = raw.get("epochs_range", synth.DEFAULT_EPOCH_RANGE)
        if not (isinstance(er, (list, tuple)) and len(er) == 2):
            raise ValidationError("epochs_range must be a [lo, hi] pair")
        cfg.epochs_range = (int(er[0]), int(er[1]))
        return cfg

    @staticmethod
    def _grid_entry(entry) -> ml.ClassifierConfig:
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ValidationError("each grid entry must be an object with a 'kind'")
        unknown = set(entry) - _GRID_ENTRY_KEYS
        if unknown:
            raise ValidationError(
                f"grid entry for {entry.get('kind')!r}: unknown key(s) "
                f"{sorted(unknown)}")
        return ml.ClassifierConfig(entry["kind"], dict(entry.get("params", {})))


def _split_for(corpus: ingest.Corpus, cfg: RunConfig) -> DatasetSplit:
    if cfg.split is not None:
        split = cfg.split
    elif corpus.manifest and "split" in corpus.manifest:
        s = corpus.manifest["split"]
        split = DatasetSplit(tuple(s["train_nights"]), tuple(s["test_nights"]))
    else:
        raise ValidationError(
            "corpus manifest has no train/test split; provide one via --config")
    split.validate(corpus.night_ids)
    return split


# --- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = RunConfig.from_args(args)
    out = Path(args.out)
    manifest = synth.generate_corpus(out, cfg.seed, n_nights=cfg.n_nights,
                                     epochs_range=cfg.epochs_range)
    epochs = manifest["epochs_per_night"]
    print(f"corpus written to {out}")
    print(f"nights: {manifest['n_nights']} "
          f"({min(epochs)}-{max(epochs)} epochs each), seed {cfg.seed}")
    print(f"train: {', '.join(manifest['split']['train_nights'])}")
    print(f"test:  {', '.join(manifest['split']['test_nights'])}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    per_night, total = ingest.census(corpus)
    for nid, s in per_night.items():
        print(f"{nid}: {s.labels_total} labels, {s.qualified} qualified, "
              f"{s.excluded_short} short, {s.excluded_not_detected} dropout")
    print(f"total: {total.labels_total} labels, {total.qualified} qualified, "
          f"{total.excluded_short} short, {total.excluded_not_detected} dropout")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = {
            "meta": _meta(cfg.seed, _hash_files(corpus.root,
                                                _corpus_files(corpus))),
            "nights": {nid: asdict(s) for nid, s in per_night.items()},
            "total": asdict(total),
        }
        _write_json(out / "ingest_report.json", report)
        print(f"report: {out / 'ingest_report.json'}")
    return EXIT_OK


def _extract_table(corpus: ingest.Corpus) -> features.FeatureTable:
    def one_night(cn: ingest.CorpusNight) -> list:
        recording, labels = cn.load()
        epochs, _ = ingest.align(recording, labels)
        return features.extract_epochs(epochs)

    cap = min(thread_cap(), len(corpus.nights))
    if cap == 1:
        per_night = [one_night(cn) for cn in corpus.nights]
    else:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            per_night = list(pool.map(one_night, corpus.nights))
    return features.FeatureTable.from_vectors(
        [v for night in per_night for v in night])


def cmd_extract(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    table = _extract_table(corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / FEATURES_CSV
    table.write_csv(csv_path)
    meta = _meta(cfg.seed, _hash_files(corpus.root, _corpus_files(corpus)))
    meta.update(n_epochs=len(table), n_features=features.N_FEATURES,
                stage_counts=table.stage_counts())
    _sidecar(csv_path, meta)
    print(f"features: {csv_path}")
    print(f"epochs: {len(table)} x {features.N_FEATURES} features")
    print("stages: " + ", ".join(f"{k} {v}"
                                 for k, v in table.stage_counts().items()))
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    out = Path(args.out)
    table = _load_table(out)
    split = _split_for(corpus, cfg)
    train_table = table.select_nights(split.train_nights)
    grid = cfg.grid if cfg.grid is not None else ml.stock_configs()
    results = ml.run_cv(train_table, grid, k=cfg.k_folds, seed=cfg.seed)
    selected = ml.select_config(results)
    for res in results:
        c = res["config"]
        marker = " *" if res is selected else ""
        print(f"{c['kind']}: macro F1 {res['mean_macro_f1']:.4f} "
              f"+/- {res['std_macro_f1']:.4f}, accuracy "
              f"{res['mean_accuracy']:.4f}{marker}")
    print(f"selected: {selected['config']['kind']}")
    report = {
        "meta": _meta(cfg.seed, _hash_files(out, [out / FEATURES_CSV])),
        "k_folds": cfg.k_folds,
        "train_nights": list(split.train_nights),
        "results": results,
        "selected": selected["config"],
    }
    _write_json(out / CV_REPORT, report)
    print(f"report: {out / CV_REPORT}")
    return EXIT_OK


def _train_config(cfg: RunConfig, out: Path) -> tuple[ml.ClassifierConfig, list[Path]]:
    """--config beats the cv selection beats the stock forest."""
    if cfg.grid is not None:
        if len(cfg.grid) != 1:
            raise ValidationError(
                f"train needs exactly one config, the grid has {len(cfg.grid)}")
        return cfg.grid[0], []
    cv_path = out / CV_REPORT
    if cv_path.is_file():
        sel = json.loads(cv_path.read_text())["selected"]
        return ml.ClassifierConfig.from_dict(sel), [cv_path]
    return ml.stock_config(ml.KIND_RF), []


def cmd_train(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    out = Path(args.out)
    table = _load_table(out)
    split = _split_for(corpus, cfg)
    classifier_cfg, extra_inputs = _train_config(cfg, out)

    train_table = table.select_nights(split.train_nights)
    if len(train_table) == 0:
        raise ValidationError("no training epochs after the split")
    Xb, yb = ml.smote(train_table.X, train_table.stages, seed=cfg.seed)
    model = ml.train(classifier_cfg, Xb, yb, seed=cfg.seed)

    model_path = Path(args.model) if args.model else out / MODEL_JSON
    inputs = _hash_files(out, [out / FEATURES_CSV] + extra_inputs)
    ml.save_model(model, model_path, meta=_meta(cfg.seed, inputs))
    report = {
        "meta": _meta(cfg.seed, inputs),
        "config": classifier_cfg.to_dict(),
        "train_nights": list(split.train_nights),
        "n_train_epochs": len(train_table),
        "n_after_resample": int(len(yb)),
        "model_path": str(model_path),
    }
    _write_json(out / "train_report.json", report)
    print(f"trained {classifier_cfg.kind} on {len(train_table)} epochs "
          f"({len(yb)} after resampling)")
    print(f"model: {model_path}")
    return EXIT_OK


def _top_importances(model, k: int = 10) -> list[list]:
    imp = np.asarray(model.feature_importances(), dtype=np.float64)
    order = np.argsort(-imp, kind="stable")[:k]
    return [[features.FEATURE_NAMES[i], float(imp[i])] for i in order]


def cmd_eval(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    out = Path(args.out)
    table = _load_table(out)
    split = _split_for(corpus, cfg)
    model_path = Path(args.model) if args.model else _require(
        out / MODEL_JSON, "train")
    model = ml.load_model(model_path)

    test_table = table.select_nights(split.test_nights)
    if len(test_table) == 0:
        raise ValidationError("no test epochs after the split")
    rep = ml.evaluate(test_table.stages, model.predict(test_table.X))
    dist = ml.class_distribution(test_table.stages, len(CLASS_NAMES))
    chance = ml.chance_accuracy(dist)
    majority = ml.majority_accuracy(dist)

    print(f"model: {model.kind}")
    print(f"test nights: {', '.join(split.test_nights)}")
    print(f"epochs: {rep.n_epochs}")
    print(f"accuracy: {rep.accuracy:.4f}")
    print(f"macro F1: {rep.macro_f1:.4f}")
    print("per-class F1: " + ", ".join(f"{k} {v:.4f}"
                                       for k, v in rep.per_class_f1.items()))
    print(f"baselines: stratified chance {chance:.4f}, majority {majority:.4f}")
    print(f"confusion counts (rows true, cols predicted; "
          f"order {', '.join(CLASS_NAMES)}):")
    for row in rep.confusion_counts:
        print("  " + " ".join(f"{v:5d}" for v in row))

    top = None
    if hasattr(model, "feature_importances"):
        top = _top_importances(model)
        print("top-10 feature importances (mean decrease in impurity):")
        for rank, (name, weight) in enumerate(top, start=1):
            print(f"  {rank:2d}. {name:<28s} {weight:.4f}")
    else:
        print(f"feature importances: not defined for {model.kind}")

    report = {
        "meta": _meta(cfg.seed, _hash_files(
            out, [out / FEATURES_CSV, model_path])),
        "model_kind": model.kind,
        "model_config": dict(model.config),
        "test_nights": list(split.test_nights),
        **rep.to_dict(),
        "baselines": {
            "stratified_chance": chance,
            "majority": majority,
            "accuracy_minus_chance": rep.accuracy - chance,
        },
        "top_importances": top,
    }
    _write_json(out / "eval_report.json", report)
    print(f"report: {out / 'eval_report.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    model = ml.load_model(_require(Path(args.model), "train"))
    night = corpus.night(args.night)
    recording, labels = night.load()
    policy = stream.ModulationPolicy()
    result = stream.replay(recording, labels, model, policy)
    for event in result.events:
        print(json.dumps(event.to_dict()))
        if args.realtime:
            time.sleep(30.0)        # one epoch of wall-clock per epoch of data
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        night_files = [night.path / f for f in
                       (ingest.META_FILE, ingest.FRAMES_FILE, ingest.LABELS_FILE)]
        report = {
            "meta": _meta(cfg.seed, _hash_files(corpus.root, night_files)),
            "night": args.night,
            "n_epochs": len(result.events),
            "n_qualified": sum(e.qualified for e in result.events),
            "n_triggers": len(result.triggers),
            "frames": {"fed": result.frames_fed,
                       "emitted": result.frames_emitted,
                       "dropped": result.frames_dropped},
            "events": [e.to_dict() for e in result.events],
        }
        path = out / f"simulate_{args.night}.json"
        _write_json(path, report)
        print(f"report: {path}", file=sys.stderr)
    return EXIT_OK


def _write_matrix_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_inspect(args) -> int:
    cfg = RunConfig.from_args(args)
    corpus = _load_corpus(args.corpus)
    night = corpus.night(args.night)
    recording, labels = night.load()
    epochs, _ = ingest.align(recording, labels)
    idx = int(args.epoch)
    if not 0 <= idx < len(epochs):
        raise ValidationError(
            f"epoch {idx} out of range; night {args.night} has {len(epochs)}")
    epoch = epochs[idx]
    if epoch.sample_count < 2:
        raise ValidationError(f"epoch {idx} holds {epoch.sample_count} samples")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"inspect_{args.night}_epoch{idx:03d}"
    fs = recording.fs_hz
    ch = epoch.frames.channels

    ts_path = out / f"{stem}_timeseries.csv"
    names = ["t_ms"] + list(ch)
    cols = [epoch.frames.t_ms] + [ch[name] for name in ch]
    _write_matrix_csv(ts_path, names,
                      ([int(c[i]) for c in cols] for i in range(epoch.sample_count)))

    eog = ch["eog"].astype(np.float64)
    ppg = ch["ppg"].astype(np.float64)
    psd_eog = dsp.periodogram(eog, fs)
    psd_ppg = dsp.periodogram(ppg, fs)
    psd_path = out / f"{stem}_psd.csv"
    _write_matrix_csv(psd_path, ["freq_hz", "eog_power", "ppg_power"],
                      ((float(f), float(pe), float(pp)) for f, pe, pp in
                       zip(psd_eog.freqs_hz, psd_eog.power, psd_ppg.power)))

    freqs, times, S = dsp.spectrogram(eog, fs, win_s=1.0, hop_s=0.25)
    spec_path = out / f"{stem}_spectrogram.csv"
    _write_matrix_csv(spec_path, ["t_s"] + [f"f_{f:g}" for f in freqs],
                      ((float(times[j]), *(float(v) for v in S[:, j]))
                       for j in range(times.size)))

    night_files = [night.path / f for f in
                   (ingest.META_FILE, ingest.FRAMES_FILE, ingest.LABELS_FILE)]
    meta = _meta(cfg.seed, _hash_files(corpus.root, night_files))
    meta.update(night=args.night, epoch_idx=idx, stage=epoch.stage.display,
                sample_count=epoch.sample_count, qualified=epoch.qualified)
    for path in (ts_path, psd_path, spec_path):
        _sidecar(path, meta)
        print(f"wrote {path}")
    print(f"epoch {idx}: stage {epoch.stage.display}, "
          f"{epoch.sample_count} samples, "
          f"{'qualified' if epoch.qualified else 'not qualified'}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Deterministic sleep-staging pipeline: synthesize a "
                    "corpus, extract features, cross-validate, train, "
                    "evaluate, and replay nights online.")
    parser.add_argument("--version", action="version",
                        version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    def opt_corpus(p, required=True):
        p.add_argument("--corpus", required=required, metavar="DIR",
                       help="corpus directory (from `ossmm synth`)")

    def opt_out(p, required=True, help_text="artifact output directory"):
        p.add_argument("--out", required=required, metavar="DIR",
                       help=help_text)

    def opt_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (default 0, or the config file's)")

    def opt_config(p):
        p.add_argument("--config", metavar="JSON",
                       help="run config: a JSON file path or an inline "
                            "JSON object")

    p = add("synth", cmd_synth, "generate a labeled synthetic corpus")
    opt_out(p, help_text="directory to write the corpus into")
    opt_seed(p)
    opt_config(p)

    p = add("ingest", cmd_ingest, "load a corpus and report epoch bookkeeping")
    opt_corpus(p)
    opt_out(p, required=False)
    opt_config(p)

    p = add("extract", cmd_extract, "extract per-epoch features to CSV")
    opt_corpus(p)
    opt_out(p)
    opt_seed(p)
    opt_config(p)

    p = add("cv", cmd_cv, "night-grouped cross-validation over a config grid")
    opt_corpus(p)
    opt_out(p)
    opt_seed(p)
    opt_config(p)
    p.add_argument("--folds", type=int, default=None,
                   help="number of grouped folds (default 6)")

    p = add("train", cmd_train, "train the final model on the training nights")
    opt_corpus(p)
    opt_out(p)
    opt_seed(p)
    opt_config(p)
    p.add_argument("--model", metavar="PATH",
                   help=f"where to write the model (default OUT/{MODEL_JSON})")

    p = add("eval", cmd_eval, "evaluate a trained model on the held-out nights")
    opt_corpus(p)
    opt_out(p)
    opt_seed(p)
    opt_config(p)
    p.add_argument("--model", metavar="PATH",
                   help=f"model file (default OUT/{MODEL_JSON})")

    p = add("simulate", cmd_simulate,
            "replay one night online, print JSON-lines events")
    opt_corpus(p)
    opt_out(p, required=False)
    opt_config(p)
    p.add_argument("--model", required=True, metavar="PATH",
                   help="trained model file (from `ossmm train`)")
    p.add_argument("--night", required=True, metavar="ID", help="night id")
    p.add_argument("--realtime", action="store_true",
                   help="pace playback at one epoch per 30 s of wall clock")

    p = add("inspect", cmd_inspect,
            "export PSD, spectrogram, and time-series CSVs for one epoch")
    opt_corpus(p)
    opt_out(p)
    opt_config(p)
    p.add_argument("--night", required=True, metavar="ID", help="night id")
    p.add_argument("--epoch", required=True, type=int, metavar="IDX",
                   help="epoch index within the night")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:               # argparse handles --help/--version
        code = exc.code or 0
        return EXIT_VALIDATION if code == 2 else int(code)
    try:
        return args.func(args)
    except MissingInputError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ValidationError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OssmmError as exc:
        print(f"{PROG}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:                # noqa: BLE001 - the CLI boundary
        print(f"{PROG}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
