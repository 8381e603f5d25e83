"""Command-line interface: synth, train, detect, eval, confusion and cv.

Every command reads an optional YAML config, applies flag overrides on top,
and writes the effective config next to its outputs. Outputs go to
``--out``, else ``<$ALARMDET_OUT or ./alarmdet_out>/<command>``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .audio import (AudioBuffer, AudioFormatError, UnsupportedAudioError, frame_labels_from_annotations, frame_signal, read_annotations,
                    read_wav, write_annotations, write_wav)
from .evaluation import THRESHOLD_MODES, FoldError, MetricsReport, class_references, confusion_counts, run_cv
from .metrics import CONFUSION_TOL, PBERR_TOL, ClassResult, frame_metrics, period_metrics
from .nn.engine import NetworkError, TrainConfig, TrainingDiverged
from .registry import Registry, RegistryError, load_registry, registry_from_dict, registry_to_dict
from .sinusoid import train_sinusoid_models
from .synth import AnnotatedScenario, SynthError, make_benchmark, read_manifest, write_manifest
from .systems import SCHEMES, SYSTEMS, make_system, reference_periods, system_from_dict

log = logging.getLogger("alarmdet")

OUT_ENV = "ALARMDET_OUT"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
MODEL_FILE = "model.json"
MODEL_FORMAT = 1

DEFAULTS = {
    "registry": None,
    "manifest": None,
    "system": "nonmodel",
    "post": None,
    "nn_variant": None,
    "nn_arch": None,
    "epochs": 70,
    "seed": 0,
    "folds": 10,
    "oracle": False,
    "threshold_mode": "test_eer",
    "sinusoid_train_peaks": 10000,
    "synth": {
        "sessions": 10,
        "scenarios_per_session": 1,
        "snr_db": math.inf,
        "noise": "white",
        "periods_per_stream": 2,
        "overlap_prob": 0.0,
    },
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# config ----------------------------------------------------------------------

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"config: unknown key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config: {where}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a mapping at top level")
    return _merge(DEFAULTS, doc)


def effective_config(args) -> dict:
    cfg = load_config(args.config)
    for key in ("registry", "manifest", "system", "post", "seed", "folds", "epochs", "threshold_mode"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "oracle", False):
        cfg["oracle"] = True
    for key in ("sessions", "scenarios_per_session", "snr_db", "noise"):
        val = getattr(args, key, None)
        if val is not None:
            cfg["synth"][key] = val
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["system"] not in SYSTEMS:
        raise ConfigError(f"system: expected one of {SYSTEMS}, got {cfg['system']!r}")
    post = cfg["post"]
    if post is not None:
        if cfg["system"] == "nonmodel" and post != "none":
            raise ConfigError("post: the nonmodel system has no frame post-processing schemes")
        if post not in SCHEMES + ("all",):
            raise ConfigError(f"post: expected one of {SCHEMES + ('all',)}, got {post!r}")
    if cfg["oracle"] and cfg["system"] != "nonmodel":
        raise ConfigError("oracle: applies to the nonmodel system only")
    if cfg["threshold_mode"] not in THRESHOLD_MODES:
        raise ConfigError(f"threshold_mode: expected one of {THRESHOLD_MODES}")
    for key in ("seed", "folds", "epochs"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise ConfigError(f"{key}: expected an integer")
    if cfg["folds"] < 2:
        raise ConfigError("folds: must be at least 2")
    if cfg["epochs"] < 1:
        raise ConfigError("epochs: must be positive")


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def output_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV) or "alarmdet_out") / command
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def echo_config(cfg: dict, out: Path, command: str) -> None:
    doc = {"command": command, "alarmdet_version": __version__, "config_hash": config_hash(cfg), "config": cfg}
    (out / "effective_config.yaml").write_text(yaml.safe_dump(_yaml_safe(doc), sort_keys=True))


def _yaml_safe(v):
    if isinstance(v, dict):
        return {k: _yaml_safe(x) for k, x in v.items()}
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# data ------------------------------------------------------------------------

def registry_of(cfg: dict) -> Registry:
    return load_registry(cfg["registry"])


def load_scenarios(manifest, registry: Registry) -> list[AnnotatedScenario]:
    if manifest is None:
        raise ConfigError("manifest: required for this command (run `alarmdet synth` first)")
    try:
        rows = read_manifest(manifest)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"manifest {manifest}: malformed ({exc})") from exc
    out = []
    for r in rows:
        try:
            audio = read_wav(r["wav"], registry.sample_rate)
            ann = read_annotations(r["annotations"])
        except OSError as exc:
            raise DataError(f"scenario {r['scenario_id']}: {exc}") from exc
        out.append(AnnotatedScenario(audio, tuple(ann), r["snr_db"], r["seed"], r["scenario_id"], r["session"]))
    if not out:
        raise DataError(f"manifest {manifest} lists no scenarios")
    return out


def group_sessions(scenarios) -> list[list[AnnotatedScenario]]:
    groups: dict[int, list] = {}
    for sc in scenarios:
        groups.setdefault(sc.session, []).append(sc)
    return [groups[k] for k in sorted(groups)]


def synth_sessions(cfg: dict, registry: Registry) -> list[list[AnnotatedScenario]]:
    s = cfg["synth"]
    return make_benchmark(registry, n_sessions=int(s["sessions"]), snr_db=float(s["snr_db"]), seed=cfg["seed"],
                          periods_per_stream=int(s["periods_per_stream"]), noise=s["noise"],
                          scenarios_per_session=int(s["scenarios_per_session"]),
                          overlap_prob=float(s["overlap_prob"]))


def system_factory(cfg: dict, registry: Registry, sinusoid_models=None):
    name = cfg["system"]
    scheme = None if cfg["post"] == "all" else cfg["post"]
    kw = {}
    if name.startswith("nn-"):
        kw["train_cfg"] = TrainConfig(epochs=cfg["epochs"], seed=cfg["seed"])
        if cfg["nn_variant"]:
            kw["variant"] = cfg["nn_variant"]
        if cfg["nn_arch"]:
            kw["arch"] = cfg["nn_arch"]
    if name == "combined" and sinusoid_models is None:
        sinusoid_models = train_sinusoid_models(int(cfg["sinusoid_train_peaks"]), seed=cfg["seed"])

    def build():
        try:
            return make_system(name, registry, scheme, cfg["seed"], cfg["oracle"], sinusoid_models, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return build


def save_model(system, cfg: dict, out: Path) -> Path:
    ref_dir = out / "references"

    def ref_writer(name, ref):
        ref_dir.mkdir(exist_ok=True)
        peak = float(np.max(np.abs(ref.samples))) or 1.0
        path = ref_dir / f"{name}.wav"
        write_wav(path, AudioBuffer(ref.samples / peak * 0.9, ref.sample_rate))
        # the gain is stored so the matched filter sees the original scale
        return {"path": str(path.relative_to(out)), "gain": peak / 0.9}

    body = system.to_dict(ref_writer) if system.name == "nonmodel" else system.to_dict()
    doc = {"format": MODEL_FORMAT, "provenance": {"seed": cfg["seed"], "config_hash": config_hash(cfg),
                                                  "alarmdet_version": __version__},
           "registry": registry_to_dict(system.registry), "model": body}
    path = out / MODEL_FILE
    path.write_text(json.dumps(doc))
    return path


def load_model(model_dir, cfg: dict):
    model_dir = Path(model_dir)
    path = model_dir / MODEL_FILE if model_dir.is_dir() else model_dir
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model {path}: not valid JSON ({exc})") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"model {path}: unsupported format {doc.get('format')!r}")
    body = doc["model"]
    if body.get("system") != cfg["system"]:
        raise ConfigError(f"model {path} holds a {body.get('system')!r} system but system is {cfg['system']!r}")
    base = path.parent

    def ref_reader(entry):
        return read_wav(base / entry["path"], None).samples * entry["gain"]

    registry = registry_from_dict(doc["registry"])
    system = system_from_dict(body, registry, ref_reader)
    if cfg["post"] not in (None, "all") and hasattr(system, "scheme") and system.name != "nonmodel":
        system.scheme = cfg["post"]
    if cfg["oracle"]:
        system.oracle = True
    return system, doc["provenance"]


# commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = effective_config(args)
    registry = registry_of(cfg)
    out = output_dir(args, "synth")
    sessions = synth_sessions(cfg, registry)
    rows = []
    for scenarios in sessions:
        for sc in scenarios:
            write_wav(out / f"{sc.scenario_id}.wav", sc.audio)
            write_annotations(out / f"{sc.scenario_id}.csv", sc.annotations)
            rows.append({"scenario_id": sc.scenario_id, "session": sc.session, "wav": f"{sc.scenario_id}.wav",
                         "annotations": f"{sc.scenario_id}.csv", "snr_db": sc.snr_db, "seed": sc.seed})
    write_manifest(out / "manifest.csv", rows)
    echo_config(cfg, out, "synth")
    print(f"wrote {len(rows)} scenarios and {out / 'manifest.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = effective_config(args)
    registry = registry_of(cfg)
    scenarios = load_scenarios(cfg["manifest"], registry)
    if args.sessions_subset:
        keep = {int(s) for s in args.sessions_subset.split(",")}
        scenarios = [sc for sc in scenarios if sc.session in keep]
        if not scenarios:
            raise DataError(f"no scenarios in sessions {sorted(keep)}")
    out = output_dir(args, "train")
    system = system_factory(cfg, registry)()
    log.info("training %s on %d scenarios", system.name, len(scenarios))
    try:
        system.fit(scenarios)
    except ValueError as exc:
        raise DataError(f"training failed: {exc}") from exc
    path = save_model(system, cfg, out)
    echo_config(cfg, out, "train")
    print(f"wrote {path} (config hash {config_hash(cfg)})")
    return 0


def _inputs(args, cfg, registry) -> list[AnnotatedScenario]:
    if args.inputs:
        out = []
        for p in args.inputs:
            try:
                audio = read_wav(p, registry.sample_rate)
            except OSError as exc:
                raise DataError(f"cannot read {p}: {exc}") from exc
            out.append(AnnotatedScenario(audio, (), math.nan, 0, Path(p).stem, 0))
        return out
    return load_scenarios(cfg["manifest"], registry)


def cmd_detect(args) -> int:
    cfg = effective_config(args)
    system, _ = load_model(args.model, cfg)
    out = output_dir(args, "detect")
    scenarios = _inputs(args, cfg, system.registry)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "scenario_id", "onset_s", "peak_height"])
    frame_rows = []
    for sc in scenarios:
        results = system.detect(sc)
        for cid in system.registry.class_ids:
            r = results[cid]
            heights = r.heights if r.heights is not None else np.full(len(r.period_onsets), np.nan)
            for t, h in zip(r.period_onsets, heights):
                w.writerow([cid, sc.scenario_id, f"{t:.4f}", "" if np.isnan(h) else f"{h:.6f}"])
            if args.frames:
                frame_rows.append((sc.scenario_id, cid, r.frame_labels))
        if args.plot:
            _plot_scenario(system, sc, results, out)
    (out / "detections.csv").write_text(buf.getvalue())
    if args.frames:
        with open(out / "frame_labels.csv", "w", newline="") as fh:
            fw = csv.writer(fh, lineterminator="\n")
            fw.writerow(["scenario_id", "class_id", "frame", "alarm"])
            for sid, cid, labels in frame_rows:
                for i, v in enumerate(labels):
                    fw.writerow([sid, cid, i, int(v)])
    echo_config(cfg, out, "detect")
    print(f"wrote {out / 'detections.csv'}")
    return 0


def _plot_scenario(system, sc, results, out: Path) -> None:
    from .plots import plot_detections
    for cid, r in results.items():
        if r.scores is None or not len(r.scores):
            continue
        times = system.offset_s + system.hop_s * np.arange(len(r.scores))
        refs = [a.start_s for a in sc.for_class(cid)]
        plot_detections(times, r.scores, r.period_onsets, refs, out / f"{sc.scenario_id}_{cid}.png",
                        title=f"{sc.scenario_id} / {cid}")


def _evaluate(system, scenarios, registry, schemes) -> MetricsReport:
    report = MetricsReport(system.name, list(registry.class_ids))
    report.results = {v: {c: ClassResult() for c in registry.class_ids} for v in schemes}
    if getattr(system, "oracle", False):
        report.notes.append("oracle thresholds: U taken from each test scenario's own labels")
    hits, tot = {}, {}
    for sc in scenarios:
        scores = system.score(sc)
        n = frame_signal(sc.audio).shape[0]
        for variant in schemes:
            results = system.detect(sc, None, None if system.name == "nonmodel" else variant, scores)
            for cid in registry.class_ids:
                spec = registry[cid]
                labels = frame_labels_from_annotations(sc.annotations, cid, n)
                res = report.results[variant][cid]
                if scores[cid] is not None:
                    res.eer_scores.append(scores[cid])
                    res.eer_labels.append(labels)
                counts = frame_metrics(results[cid].frame_labels, labels)[2]
                ref, per = reference_periods(sc, spec)
                res.counts = res.counts + counts + period_metrics(results[cid].period_onsets, ref, per, PBERR_TOL)[1]
            refs = class_references(sc, registry)
            h = confusion_counts(refs, {c: results[c].period_onsets for c in registry.class_ids}, CONFUSION_TOL)[2]
            hits[variant] = hits.get(variant, 0) + h
            tot[variant] = tot.get(variant, 0) + np.array([len(refs[c]) for c in registry.class_ids])
    for variant in schemes:
        t = tot[variant]
        pct = np.where(t[:, None] > 0, 100.0 * hits[variant] / np.maximum(t, 1)[:, None], 0.0)
        report.confusion[variant] = (list(registry.class_ids), list(registry.class_ids), pct)
        report.confusion_counts[variant] = (hits[variant], t)
    return report


def _schemes(cfg, system) -> list[str]:
    if system.name == "nonmodel":
        return ["none"]
    if cfg["post"] == "all":
        return list(SCHEMES)
    return [cfg["post"] or system.scheme]


def write_report(report: MetricsReport, out: Path, stem: str = "report") -> list[Path]:
    from .plots import plot_class_errors, plot_confusion
    paths = [out / f"{stem}.txt", out / f"{stem}.csv"]
    paths[0].write_text(report.to_text())
    paths[1].write_text(report.to_csv())
    paths.append(plot_class_errors(report, out / f"{stem}_pb_err.png", "pb_err"))
    if report.system != "nonmodel":
        paths.append(plot_class_errors(report, out / f"{stem}_eer.png", "eer"))
    for variant, (rows, cols, m) in report.confusion.items():
        tag = variant.replace("&", "and")
        p = out / f"confusion_{tag}.csv"
        p.write_text(report.confusion_csv(variant))
        paths.append(p)
        paths.append(plot_confusion(rows, cols, m, out / f"confusion_{tag}.png", f"{report.system} ({variant})"))
    return paths


def cmd_eval(args) -> int:
    cfg = effective_config(args)
    system, _ = load_model(args.model, cfg)
    scenarios = load_scenarios(cfg["manifest"], system.registry)
    out = output_dir(args, "eval")
    report = _evaluate(system, scenarios, system.registry, _schemes(cfg, system))
    report.notes.append("frame threshold: train_eer")
    write_report(report, out)
    echo_config(cfg, out, "eval")
    sys.stdout.write(report.to_text())
    return 0


def cmd_confusion(args) -> int:
    from .plots import plot_confusion
    cfg = effective_config(args)
    system, _ = load_model(args.model, cfg)
    scenarios = load_scenarios(cfg["manifest"], system.registry)
    out = output_dir(args, "confusion")
    schemes = _schemes(cfg, system)
    report = _evaluate(system, scenarios, system.registry, schemes[:1])
    rows, cols, m = report.confusion[schemes[0]]
    (out / "confusion.csv").write_text(report.confusion_csv(schemes[0]))
    plot_confusion(rows, cols, m, out / "confusion.png", f"{system.name} ({schemes[0]})")
    echo_config(cfg, out, "confusion")
    lines = ["ref\\det " + " ".join(f"{c:>6}" for c in cols)]
    lines += [f"{r:<7} " + " ".join(f"{v:6.1f}" for v in vals) for r, vals in zip(rows, m)]
    print("\n".join(lines))
    return 0


def cmd_cv(args) -> int:
    cfg = effective_config(args)
    registry = registry_of(cfg)
    if cfg["manifest"]:
        sessions = group_sessions(load_scenarios(cfg["manifest"], registry))
    else:
        log.info("no manifest given: synthesising the benchmark in memory")
        sessions = synth_sessions(cfg, registry)
    out = output_dir(args, "cv")
    factory = system_factory(cfg, registry)
    probe = factory()
    schemes = _schemes(cfg, probe)
    report = run_cv(sessions, factory, registry, schemes=schemes if probe.name != "nonmodel" else None,
                    folds=cfg["folds"], threshold_mode=cfg["threshold_mode"], progress=log.info)
    write_report(report, out)
    echo_config(cfg, out, "cv")
    sys.stdout.write(report.to_text())
    return 0


# entry point -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser, system: bool = True) -> None:
    p.add_argument("--config", help="YAML run config; flags override its values")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>)")
    p.add_argument("--registry", help="alarm registry YAML (default: bundled synthetic registry)")
    p.add_argument("--seed", type=int)
    if system:
        p.add_argument("--system", choices=SYSTEMS)
        p.add_argument("--post", help="post-processing scheme: none, S, TM, S&TM, or all")
        p.add_argument("--oracle", action="store_true", help="nonmodel: thresholds from test labels")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alarmdet", description="Alarm sound detection toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scenario corpus and its manifest")
    _common(p, system=False)
    p.add_argument("--sessions", type=int)
    p.add_argument("--scenarios-per-session", dest="scenarios_per_session", type=int)
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.add_argument("--noise", choices=("white", "pink", "babble"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the selected system on a manifest")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--sessions", dest="sessions_subset", help="comma-separated session ids to train on")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run trained detectors on WAV files or a manifest")
    _common(p)
    p.add_argument("--model", required=True, help="training output directory or model.json")
    p.add_argument("--manifest")
    p.add_argument("--frames", action="store_true", help="also dump per-frame labels")
    p.add_argument("--plot", action="store_true", help="render a score plot per scenario and class")
    p.add_argument("inputs", nargs="*", help="WAV files (default: the manifest's scenarios)")
    p.set_defaults(func=cmd_detect)

    for name, func, text in (("eval", cmd_eval, "score a trained model on an annotated manifest"),
                             ("confusion", cmd_confusion, "cross-class confusion matrix of a trained model")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--manifest")
        p.set_defaults(func=func)

    p = sub.add_parser("cv", help="leave-one-session-out cross-validation")
    _common(p)
    p.add_argument("--manifest", help="session-grouped manifest (default: synthesise from config)")
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=THRESHOLD_MODES)
    p.add_argument("--sessions", type=int, help="sessions to synthesise when no manifest is given")
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.set_defaults(func=cmd_cv)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RegistryError, NetworkError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FoldError, AudioFormatError, UnsupportedAudioError, SynthError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
