"""Command-line entry point.

Settings resolve as flags > config file > defaults. The config file is JSON
with the same flat keys as the long flags (dashes become underscores); it is
taken from ``--config`` or the ``ADATILE_CONFIG`` environment variable.

Exit status: 0 success, 1 validation error, 2 I/O error. Nothing is written
unless every input validated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from adatile import __version__
from adatile.core import ImageDims, Nba
from adatile.costmodel import COST_COLUMNS, avg_tiles, cost_rows, estimate, format_table, load_profiles
from adatile.crop import crop_image, crop_name, read_ppm
from adatile.dataset import SynthConfig, load_dataset, read_dataset, save_dataset, synth_generate
from adatile.detector import (
    FUSED_FORMAT, PREDICTIONS_FORMAT, SimDetectorConfig, detection_to_record, dumps_jsonl, header_record,
    load_external, load_fused,
)
from adatile.fusion import FusionConfig
from adatile.metrics import MatchMode, evaluate
from adatile.pipeline import (
    FUSION_STRATEGIES, SWEEP_COLUMNS, default_match_mode, fuse_image, pmap, simulate_image, sweep,
)
from adatile.tiling import ObjectStats, manifest_from_json, manifest_to_json, plan_dataset

log = logging.getLogger("adatile")

CONFIG_ENV = "ADATILE_CONFIG"

DEFAULTS = {
    "out_dir": ".",
    "dataset": None,
    "manifest": None,
    "predictions": None,
    "fused": None,
    # ingest
    "root": None,
    "split": "test",
    "dims": "1280x720",
    "swap_corners": False,
    # synth
    "images": 10,
    "count": "20-200",
    "extent": "20-40",
    "min_spacing": 0.0,
    "layout": "random",
    # planning
    "target_nba": "0.8%",
    "input_resolution": 192,
    "object_nba": None,
    "object_extent": None,
    "max_tiles": 1024,
    # crop
    "images_dir": None,
    "crops_dir": None,
    # detector
    "mode": "boxes",
    "miss_rate": 0.0,
    "jitter_sigma": 0.0,
    "fp_per_tile": 0.0,
    "visibility_threshold": 0.25,
    "score_threshold": 0.5,
    "seed": 0,
    # fusion / eval
    "strategy": "one_way_ratio",
    "threshold": None,
    "reduce_policy": "largest_box",
    "match": None,
    # sweep / cost
    "nba_list": "0.8%,2%,4%,6%",
    "strategies": "one_way_ratio,iou",
    "profile": None,
    "profiles_file": None,
    "avg_tiles": None,
    "overhead": 0.0,
    "format": "table",
    "workers": None,
}

# execution-only settings left out of the config echo so outputs do not depend on them
_NOT_ECHOED = {"workers", "out_dir", "format"}

_INT = {"images", "input_resolution", "max_tiles", "seed", "workers"}
_FLOAT = {"min_spacing", "miss_rate", "jitter_sigma", "fp_per_tile", "visibility_threshold", "score_threshold",
          "threshold", "overhead", "object_nba", "object_extent"}


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if key in _INT:
            return int(value)
        if key in _FLOAT:
            return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: expected a number, got {value!r}") from None
    return value


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    cfg_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if cfg_path:
        try:
            file_cfg = json.loads(Path(cfg_path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {cfg_path}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ValidationError(f"config {cfg_path}: expected a JSON object")
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise ValidationError(f"config {cfg_path}: unknown keys {unknown}")
        settings.update(file_cfg)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return {k: _coerce(k, v) for k, v in settings.items()}


def echo(settings: dict, keys) -> dict:
    return {k: settings[k] for k in keys if k not in _NOT_ECHOED}


def _path(settings: dict, key: str, default_name: str) -> Path:
    v = settings.get(key)
    return Path(v) if v else Path(settings["out_dir"]) / default_name


def _parse_range(text, key: str) -> tuple:
    if isinstance(text, (list, tuple)):
        lo, hi = text
    else:
        parts = str(text).split("-")
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise ValidationError(f"{key}: expected LO-HI, got {text!r}")
        lo, hi = parts
    try:
        return int(lo), int(hi)
    except ValueError:
        raise ValidationError(f"{key}: expected integers, got {text!r}") from None


def _parse_dims(text) -> ImageDims:
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
        return ImageDims(w, h)
    except ValueError:
        raise ValidationError(f"dims: expected WxH, got {text!r}") from None


def _parse_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _nba(text) -> float:
    try:
        return Nba.parse(text).value
    except ValueError as exc:
        raise ValidationError(f"target NBA: {exc}") from None


def _override(settings: dict) -> Optional[ObjectStats]:
    nba, extent = settings["object_nba"], settings["object_extent"]
    if nba is None and extent is None:
        return None
    if nba is None or extent is None:
        raise ValidationError("--object-nba and --object-extent must be given together")
    return ObjectStats(Nba.parse(nba).value, float(extent))


def _sim(settings: dict) -> SimDetectorConfig:
    return SimDetectorConfig(
        settings["miss_rate"], settings["jitter_sigma"], settings["fp_per_tile"],
        settings["visibility_threshold"], settings["seed"],
    )


def _match(settings: dict) -> MatchMode:
    m = settings["match"]
    return MatchMode.parse(m) if m else default_match_mode(settings["mode"])


def _profile(settings: dict):
    profiles = load_profiles(settings["profiles_file"])
    name = settings["profile"]
    if name is None:
        return None
    if name not in profiles:
        raise ValidationError(f"unknown profile {name!r}; available: {sorted(profiles)}")
    return profiles[name]


def _read_text(path: Path) -> str:
    return path.read_text()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _manifest_plans(settings: dict):
    return manifest_from_json(_read_text(_path(settings, "manifest", "manifest.json")))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(s: dict) -> None:
    if not s["root"]:
        raise ValidationError("ingest needs --root")
    dataset = load_dataset(s["root"], s["split"], _parse_dims(s["dims"]), bool(s["swap_corners"]))
    save_dataset(_path(s, "dataset", "dataset.json"), dataset, echo(s, ("root", "split", "dims", "swap_corners")))
    log.info("ingested %d images", len(dataset))


def cmd_synth(s: dict) -> None:
    dims = _parse_dims(s["dims"])
    cfg = SynthConfig(
        width=dims.width, height=dims.height, n_images=s["images"],
        count_range=_parse_range(s["count"], "count"), extent_range=_parse_range(s["extent"], "extent"),
        min_spacing=s["min_spacing"], seed=s["seed"], layout=s["layout"],
    )
    dataset = synth_generate(cfg)
    save_dataset(_path(s, "dataset", "dataset.json"), dataset, cfg.to_dict())


def cmd_plan(s: dict) -> None:
    dataset = read_dataset(_path(s, "dataset", "dataset.json"))
    plans = plan_dataset(dataset, _nba(s["target_nba"]), s["input_resolution"], _override(s), s["max_tiles"])
    keys = ("dataset", "target_nba", "input_resolution", "object_nba", "object_extent", "max_tiles")
    _write(_path(s, "manifest", "manifest.json"), manifest_to_json(plans, echo(s, keys)))


def cmd_crop(s: dict) -> None:
    if not s["images_dir"]:
        raise ValidationError("crop needs --images-dir")
    plans = _manifest_plans(s)
    src = Path(s["images_dir"])
    images = {}
    for p in plans:
        img = read_ppm(src / f"{p.image_id}.ppm")
        if img.shape[:2] != (p.dims.height, p.dims.width):
            raise ValidationError(f"{p.image_id}: image is {img.shape[1]}x{img.shape[0]}, manifest says {p.dims.width}x{p.dims.height}")
        images[p.image_id] = img
    out = Path(s["crops_dir"]) if s["crops_dir"] else Path(s["out_dir"]) / "crops"
    out.mkdir(parents=True, exist_ok=True)
    listing = []
    for p in plans:
        crop_image(images[p.image_id], p, out)
        listing.extend({"image_id": p.image_id, "tile": [t.col, t.row], "file": crop_name(p.image_id, t.index)} for t in p.tiles)
    doc = {"format": "adatile.crops", "version": 1, "config": echo(s, ("manifest", "images_dir")), "crops": listing}
    _write(out / "crops.json", json.dumps(doc, indent=1) + "\n")


def cmd_simulate(s: dict) -> None:
    dataset = read_dataset(_path(s, "dataset", "dataset.json"))
    plans = {p.image_id: p for p in _manifest_plans(s)}
    missing = [a.image_id for a in dataset if a.image_id not in plans]
    if missing:
        raise ValidationError(f"manifest lacks plans for {missing[:5]}")
    sim = _sim(s)
    if s["mode"] not in ("boxes", "grid"):
        raise ValidationError(f"unknown detector mode {s['mode']!r}")
    results = pmap(lambda a: simulate_image(a, plans[a.image_id], sim, s["mode"], s["score_threshold"]), dataset, s["workers"])
    keys = ("dataset", "manifest", "mode", "miss_rate", "jitter_sigma", "fp_per_tile", "visibility_threshold",
            "score_threshold", "seed")
    records = [header_record(PREDICTIONS_FORMAT, echo(s, keys))]
    for ann, dets in zip(dataset, results):
        records.extend(detection_to_record(ann.image_id, d) for d in dets)
    _write(_path(s, "predictions", "predictions.jsonl"), dumps_jsonl(records))


def cmd_fuse(s: dict) -> None:
    strategy = s["strategy"]
    if strategy not in FUSION_STRATEGIES:
        raise ValidationError(f"unknown fusion strategy {strategy!r}")
    cfg = None if strategy == "adjacency" else FusionConfig(strategy, s["threshold"], s["reduce_policy"])
    plan_list = _manifest_plans(s)
    plans = {p.image_id: p for p in plan_list}
    groups = load_external(_read_text(_path(s, "predictions", "predictions.jsonl")), plans)
    per_image: dict = {}
    for (image_id, _), dets in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1][1], kv[0][1][0])):
        per_image.setdefault(image_id, []).extend(dets)
    ids = [p.image_id for p in plan_list if p.image_id in per_image]
    fused = pmap(lambda i: fuse_image(plans[i], per_image[i], strategy, cfg), ids, s["workers"])
    cfg_echo = echo(s, ("manifest", "predictions", "strategy", "reduce_policy"))
    cfg_echo["threshold"] = None if cfg is None else cfg.threshold
    records = [header_record(FUSED_FORMAT, cfg_echo)]
    for image_id, dets in zip(ids, fused):
        records.extend(detection_to_record(image_id, d, with_tile=False) for d in dets)
    _write(_path(s, "fused", "fused.jsonl"), dumps_jsonl(records))


def cmd_eval(s: dict) -> None:
    dataset = read_dataset(_path(s, "dataset", "dataset.json"))
    preds = load_fused(_read_text(_path(s, "fused", "fused.jsonl")))
    mode = _match(s)
    report = evaluate(preds, dataset, mode, echo(s, ("dataset", "fused")) | {"match": mode.to_dict()})
    out = Path(s["out_dir"])
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    summ = report.summary()
    print(f"F1 {summ['f1']:.4f}  Pr {summ['precision']:.4f}  Re {summ['recall']:.4f}  MAE {summ['count_mae']:.4f}")


def cmd_sweep(s: dict) -> None:
    dataset = read_dataset(_path(s, "dataset", "dataset.json"))
    nbas = [_nba(t) for t in _parse_list(s["nba_list"])]
    strategies = _parse_list(s["strategies"])
    profile = _profile(s)
    thresholds = {}
    if s["threshold"] is not None:
        thresholds = {k: s["threshold"] for k in strategies}
    rows = sweep(
        dataset, nbas, strategies, s["input_resolution"], _sim(s), s["mode"],
        MatchMode.parse(s["match"]) if s["match"] else None, thresholds, s["reduce_policy"], profile,
        _override(s), s["score_threshold"], s["max_tiles"], s["workers"],
    )
    table = [r.as_dict() for r in rows]
    keys = ("dataset", "nba_list", "strategies", "input_resolution", "mode", "miss_rate", "jitter_sigma",
            "fp_per_tile", "visibility_threshold", "score_threshold", "seed", "threshold", "reduce_policy",
            "match", "profile", "object_nba", "object_extent", "max_tiles")
    doc = {"format": "adatile.sweep", "version": 1, "config": echo(s, keys), "rows": table}
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(table)
    out = Path(s["out_dir"])
    _write(out / "sweep.json", json.dumps(doc, indent=1) + "\n")
    _write(out / "sweep.csv", buf.getvalue())
    print(format_table(table, SWEEP_COLUMNS, digits=2), end="")


def cmd_cost(s: dict) -> None:
    profiles = load_profiles(s["profiles_file"])
    name = s["profile"] or "tinyissimoyolo-gap9"
    if name not in profiles:
        raise ValidationError(f"unknown profile {name!r}; available: {sorted(profiles)}")
    profile = profiles[name]
    rows = []
    if s["avg_tiles"] is not None:
        for v in _parse_list(s["avg_tiles"]):
            try:
                tiles = float(v)
            except ValueError:
                raise ValidationError(f"avg tiles: not a number: {v!r}") from None
            rows.append(("-", estimate(tiles, profile, s["overhead"])))
    else:
        dataset = read_dataset(_path(s, "dataset", "dataset.json"))
        for t in _parse_list(s["nba_list"]):
            tiles = avg_tiles(dataset, _nba(t), s["input_resolution"], _override(s), s["max_tiles"])
            rows.append((f"{Nba.parse(t).percent:g}", estimate(tiles, profile, s["overhead"])))
    table = []
    for (t, e), r in zip(rows, cost_rows([(name, e) for _, e in rows])):
        table.append({"target_nba_pct": t, **r})
    cols = ("target_nba_pct",) + COST_COLUMNS
    if s["format"] == "json":
        print(json.dumps({"profile": name, "rows": table}, indent=1))
    else:
        print(format_table(table, cols, digits=1), end="")


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "plan": cmd_plan,
    "crop": cmd_crop,
    "simulate": cmd_simulate,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "cost": cmd_cost,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add(p: argparse.ArgumentParser, *names: str, **kw) -> None:
    for name in names:
        kw_ = dict(kw)
        kw_.setdefault("default", None)
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, **kw_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adatile", description="Adaptive tiling for small-object detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")
    _add(common, "out_dir", help="directory for outputs and default inputs")
    _add(common, "workers", help="worker threads (default: all cores)")

    planning = argparse.ArgumentParser(add_help=False)
    _add(planning, "target_nba", help="target NBA, e.g. 0.8%% or 0.008")
    _add(planning, "input_resolution", help="square network input side in pixels")
    _add(planning, "object_nba", help="external object size estimate (NBA), overrides annotations")
    _add(planning, "object_extent", help="external object extent in pixels, paired with --object-nba")
    _add(planning, "max_tiles", help="cap on tiles per image")

    detector = argparse.ArgumentParser(add_help=False)
    _add(detector, "mode", choices=("boxes", "grid"))
    _add(detector, "miss_rate", "jitter_sigma", "fp_per_tile", "visibility_threshold", "score_threshold", "seed")

    fusion = argparse.ArgumentParser(add_help=False)
    _add(fusion, "strategy", help="one_way_ratio | iou | adjacency")
    _add(fusion, "threshold", help="match threshold (defaults: iou 0.25, one_way_ratio 0.8)")
    _add(fusion, "reduce_policy", choices=("largest_box", "max_confidence"))

    p = sub.add_parser("ingest", parents=[common], help="convert a CARPK-style split to the dataset format")
    _add(p, "root", "split", "dims", "dataset")
    p.add_argument("--swap-corners", dest="swap_corners", action="store_const", const=True, default=None)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic parking-lot dataset")
    _add(p, "images", "count", "extent", "dims", "min_spacing", "seed", "dataset")
    _add(p, "layout", choices=("random", "rows"))

    p = sub.add_parser("plan", parents=[common, planning], help="write the tile manifest")
    _add(p, "dataset", "manifest")

    p = sub.add_parser("crop", parents=[common], help="cut and resample PPM tile crops")
    _add(p, "manifest", "images_dir", "crops_dir")

    p = sub.add_parser("simulate", parents=[common, detector], help="run the simulated detector on every tile")
    _add(p, "dataset", "manifest", "predictions")

    p = sub.add_parser("fuse", parents=[common, fusion], help="fuse per-tile predictions per image")
    _add(p, "manifest", "predictions", "fused")

    p = sub.add_parser("eval", parents=[common], help="score fused detections against ground truth")
    _add(p, "dataset", "fused")
    _add(p, "match", help="centroid | iou | iou@T")
    _add(p, "mode", choices=("boxes", "grid"), help="picks the default match mode")

    p = sub.add_parser("sweep", parents=[common, planning, detector, fusion], help="target-NBA x strategy grid")
    _add(p, "dataset", "nba_list", "strategies", "profile", "profiles_file")
    _add(p, "match")

    p = sub.add_parser("cost", parents=[common, planning], help="latency / FPS / energy table")
    _add(p, "profile", "profiles_file", "avg_tiles", "overhead", "dataset", "nba_list")
    _add(p, "format", choices=("table", "json"))
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 is reserved for I/O failures
        return 1 if exc.code == 2 else (exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        settings = resolve_settings(args)
        COMMANDS[args.command](settings)
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"adatile {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"adatile {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
