"""Batch command-line front end.

Every command reads a JSON config (numeric parameters live there, never
in flags), takes --seed/--threads/--out, writes its artifacts under
--out, and records a run.json with the resolved config and its hash.
Unknown config keys are hard errors. Outputs are deterministic for a
fixed config and seed, independent of --threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, alignment, pca, ridge, stats, synth, transfer
from .data_model import (STIMULUS_NAME, dump_json, fmt_float, load_json,
                         read_payload, write_payload)
from .errors import (ArgError, CorruptError, DataError, FormatError, IoError,
                     TrialError, XencError)
from .ridge import RidgeConfig
from .stats import PermConfig
from .temporal import DelaySpec, LanczosConfig, build_design
from .transfer import load_scoremap, load_table, save_scoremap, save_table

EXIT_INPUT = 2
EXIT_COMPUTE = 3


def check_keys(cfg: dict, allowed: dict, path: str = "config") -> None:
    """Reject unknown keys anywhere in the config tree."""
    if not isinstance(cfg, dict):
        raise ArgError(f"{path} must be a JSON object")
    for key, value in cfg.items():
        if key not in allowed:
            raise ArgError(f"unknown config key {path}.{key}")
        sub = allowed[key]
        if isinstance(sub, dict) and isinstance(value, dict):
            check_keys(value, sub, f"{path}.{key}")


def _ridge_schema():
    return {"lambda_grid": None, "n_cv_iters": None, "holdout_fraction": None,
            "cv_chunk_trs": None}


def _ridge_config(cfg: dict, seed: int) -> RidgeConfig:
    r = cfg.get("ridge", {}) or {}
    kwargs = {"seed": seed}
    if "lambda_grid" in r:
        kwargs["lambda_grid"] = tuple(r["lambda_grid"])
    for key in ("n_cv_iters", "holdout_fraction", "cv_chunk_trs"):
        if key in r:
            kwargs[key] = r[key]
    return RidgeConfig(**kwargs)


def _perm_config(cfg: dict, seed: int, default_trials: int) -> PermConfig:
    p = cfg.get("perm", {}) or {}
    return PermConfig(block_trs=p.get("block_trs", 10),
                      n_trials=p.get("n_trials", default_trials),
                      seed=seed, fdr_q=p.get("fdr_q", 0.05))


def _world_scans(world: synth.World, modality: str, trim: int = 0):
    """(design, response) pairs for one modality, via the real pipeline."""
    from .data_model import check_consistent_features
    spec = world.spec
    check_consistent_features([f for f, _ in world.scans(modality)])
    delays = DelaySpec(delays_seconds=spec.delays_seconds,
                       tr_seconds=spec.tr_seconds)
    pairs = []
    for feat, resp in world.scans(modality):
        design = build_design(feat, resp.n_trs, resp.tr_seconds, delays,
                              LanczosConfig(), trim_trs=trim)
        if trim:
            from .data_model import ResponseMatrix
            resp = ResponseMatrix(scan_id=resp.scan_id, tr_seconds=resp.tr_seconds,
                                  data=resp.data[trim:-trim])
        pairs.append((design, resp))
    return pairs


def _write_run(out: str, command: str, config: dict, seed: int, threads: int,
               summary: dict | None = None) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    run = {"command": command, "config": config,
           "config_sha256": hashlib.sha256(blob).hexdigest(),
           "seed": seed, "threads": threads, "version": __version__,
           "created_unix": time.time()}
    if summary is not None:
        run["summary"] = summary
    dump_json(os.path.join(out, "run.json"), run)


def _nanmean(values: np.ndarray) -> float:
    ok = np.isfinite(values)
    return float(values[ok].mean()) if ok.any() else float("nan")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg, seed, threads, out):
    check_keys(cfg, {"world": {k: None for k in synth.WorldSpec().to_dict()},
                     "kind": None})
    world_cfg = dict(cfg.get("world", {}))
    if seed is not None:
        world_cfg["seed"] = seed
    spec = synth.WorldSpec.from_dict(world_cfg)
    kind = cfg.get("kind", "normal")
    if kind not in ("normal", "null"):
        raise ArgError(f"kind must be 'normal' or 'null', got {kind!r}")
    world = synth.generate_world(spec) if kind == "normal" \
        else synth.generate_null_world(spec)
    synth.write_world(world, out)
    return {"kind": kind, "m": spec.m, "scans_per_modality": spec.n_scans_per_modality}


def cmd_fit(cfg, seed, threads, out):
    check_keys(cfg, {"world": None, "modality": None, "ridge": _ridge_schema(),
                     "trim_trs": None})
    world = synth.load_world(_require(cfg, "world"))
    modality = _require(cfg, "modality")
    scans = _world_scans(world, modality, trim=cfg.get("trim_trs", 0))
    rcfg = _ridge_config(cfg, seed or 0)
    model = ridge.fit_encoding_model([d for d, _ in scans], [r for _, r in scans],
                                     rcfg, threads=threads)
    ridge.save_weightset(model, os.path.join(out, "weights"),
                         extra_meta={"lambda_grid": list(rcfg.lambda_grid),
                                     "seed": rcfg.seed,
                                     "n_cv_iters": rcfg.n_cv_iters})
    return {"modality": modality, "n_voxels": model.n_voxels,
            "median_lambda": float(np.median(model.lambda_per_voxel))}


def cmd_within(cfg, seed, threads, out):
    check_keys(cfg, {"world": None, "modality": None, "ridge": _ridge_schema(),
                     "trim_trs": None, "write_predictions": None})
    world = synth.load_world(_require(cfg, "world"))
    modality = _require(cfg, "modality")
    scans = _world_scans(world, modality, trim=cfg.get("trim_trs", 0))
    rcfg = _ridge_config(cfg, seed or 0)
    table, score, preds = transfer.within_modality_scores(
        scans, rcfg, threads=threads, return_predictions=True)
    save_table(table, os.path.join(out, "table"))
    save_scoremap(score, os.path.join(out, "scoremap"))
    if cfg.get("write_predictions", True):
        for (design, resp), pred in zip(scans, preds):
            write_payload(os.path.join(out, f"pred_{design.scan_id}.bin"), pred)
            write_payload(os.path.join(out, f"actual_{design.scan_id}.bin"),
                          resp.data)
        dump_json(os.path.join(out, "predictions.json"),
                  {"scan_ids": [d.scan_id for d, _ in scans]})
    return {"modality": modality, "mean_r": _nanmean(score.values),
            "n_nan": int(score.nan_mask.sum())}


def cmd_align(cfg, seed, threads, out):
    check_keys(cfg, {"world": None, "direction": None, "lambda_grid": None,
                     "n_cv_iters": None, "cv_chunk": None})
    world = synth.load_world(_require(cfg, "world"))
    direction = _require(cfg, "direction")
    if direction == "image_to_caption":
        src, tgt = world.pair_vis, world.pair_lang
    elif direction == "caption_to_image":
        src, tgt = world.pair_lang, world.pair_vis
    else:
        raise ArgError(f"unknown direction {direction!r}")
    grid = cfg.get("lambda_grid")
    amap = alignment.fit_alignment(
        src.data, tgt.data, lambda_grid=grid,
        n_cv_iters=cfg.get("n_cv_iters", 20), direction=direction,
        layer=world.spec.layer, seed=seed or 0,
        cv_chunk=cfg.get("cv_chunk", 10), threads=threads)
    alignment.save_alignment(amap, os.path.join(out, "alignmap"))
    return {"direction": direction, "fit_lambda": amap.fit_lambda}


_DIRECTIONS = {"story_to_movie": ("language", "vision"),
               "movie_to_story": ("vision", "language")}


def cmd_transfer(cfg, seed, threads, out):
    check_keys(cfg, {"world": None, "model": None, "alignment": None,
                     "direction": None, "trim_trs": None})
    world = synth.load_world(_require(cfg, "world"))
    direction = _require(cfg, "direction")
    if direction not in _DIRECTIONS:
        raise ArgError(f"unknown direction {direction!r}")
    source_mod, target_mod = _DIRECTIONS[direction]
    model = ridge.load_weightset(_require(cfg, "model"))
    if model.modality != source_mod:
        raise ArgError(f"direction {direction} needs a {source_mod} model, "
                       f"got {model.modality}")
    amap_path = cfg.get("alignment")
    if amap_path is None:
        raise ArgError(
            f"transfer {direction} requires an AlignmentMap "
            f"({'image_to_caption' if target_mod == 'vision' else 'caption_to_image'}); "
            "run `xenc align` first and pass its path as config.alignment"
        )
    amap = alignment.load_alignment(amap_path)
    feats = world.vis_features if target_mod == "vision" else world.lang_features
    resps = world.vis_responses if target_mod == "vision" else world.lang_responses
    aligned = [alignment.apply_alignment(amap, f) for f in feats]
    spec = world.spec
    delays = DelaySpec(delays_seconds=spec.delays_seconds, tr_seconds=spec.tr_seconds)
    designs = [build_design(f, r.n_trs, r.tr_seconds, delays)
               for f, r in zip(aligned, resps)]
    table, score = transfer.cross_modality_scores(model, designs, resps)
    tag = f"{STIMULUS_NAME[source_mod]}→{STIMULUS_NAME[target_mod]}"
    score.source = tag
    save_table(table, os.path.join(out, "table"))
    save_scoremap(score, os.path.join(out, "scoremap"))
    return {"direction": direction, "mean_r": _nanmean(score.values),
            "n_nan": int(score.nan_mask.sum())}


def cmd_layers(cfg, seed, threads, out):
    check_keys(cfg, {"tables": None})
    paths = _require(cfg, "tables")
    if not isinstance(paths, list) or not paths:
        raise ArgError("config.tables must be a nonempty list of table dirs")
    stacked = transfer.stack_tables([load_table(p) for p in paths])
    score = transfer.layer_select_bootstrap(stacked)
    save_scoremap(score, os.path.join(out, "scoremap"))
    per_layer = {str(l): _nanmean(stacked.values[i].mean(axis=0))
                 for i, l in enumerate(stacked.layers)}
    dump_json(os.path.join(out, "per_layer_means.json"), per_layer)
    return {"layers": list(stacked.layers), "mean_r": _nanmean(score.values)}


def cmd_signfix(cfg, seed, threads, out):
    check_keys(cfg, {"table": None})
    table = load_table(_require(cfg, "table"))
    corrected = transfer.sign_flip_correct(table)
    uncorrected = table.mean_map(source="uncorrected")
    save_scoremap(corrected, os.path.join(out, "scoremap"))
    save_scoremap(uncorrected, os.path.join(out, "uncorrected"))
    return {"mean_r_corrected": _nanmean(corrected.values),
            "mean_r_uncorrected": _nanmean(uncorrected.values)}


def cmd_permtest(cfg, seed, threads, out):
    # Tests one held-out scan: its predictions come from a model fit on
    # the other scans, so prediction and actual are independent under the
    # null. Averaging over all leave-one-out scans would couple the
    # per-scan scores through shared training data and break calibration.
    check_keys(cfg, {"within_run": None, "scan_index": None,
                     "perm": {"block_trs": None, "n_trials": None, "fdr_q": None}})
    run_dir = _require(cfg, "within_run")
    scan_ids = load_json(os.path.join(run_dir, "predictions.json"))["scan_ids"]
    scan_id = scan_ids[cfg.get("scan_index", -1)]
    pred, _ = read_payload(os.path.join(run_dir, f"pred_{scan_id}.bin"))
    actual, _ = read_payload(os.path.join(run_dir, f"actual_{scan_id}.bin"))
    pcfg = _perm_config(cfg, seed or 0, default_trials=10000)
    true_scores = ridge.score_correlation(pred, actual, source=f"within:{scan_id}")
    null = stats.blockwise_null_scores(pred, actual, pcfg, threads=threads)
    result = stats.voxel_significance(true_scores, null, pcfg)
    stats.save_significance_csv(result, true_scores,
                                os.path.join(out, "significance.csv"))
    save_scoremap(result.p, os.path.join(out, "p"))
    save_scoremap(result.q, os.path.join(out, "q"))
    write_payload(os.path.join(out, "mask.bin"),
                  result.mask.astype(np.float64)[None, :])
    return {"n_trials": pcfg.n_trials,
            "n_significant": int(result.mask.sum()),
            "frac_p_below_05": float((result.p.values < 0.05).mean())}


def cmd_pca(cfg, seed, threads, out):
    check_keys(cfg, {"weights": None, "normalize_voxels": None,
                     "select": {"criterion": None, "n": None, "score": None,
                                "other": None},
                     "project_components": None})
    weights = ridge.load_weightset(_require(cfg, "weights"))
    collapsed = pca.collapse_delays(weights)
    sel = cfg.get("select")
    if sel is None:
        raise ArgError("config.select is required")
    score = load_scoremap(_require(sel, "score", "config.select"))
    other = load_scoremap(sel["other"]) if sel.get("other") else None
    idx = pca.select_top_voxels(score, _require(sel, "n", "config.select"),
                                criterion=sel.get("criterion", "value"),
                                other=other)
    basis = pca.fit_pca(collapsed[:, idx],
                        normalize_voxels=cfg.get("normalize_voxels", False))
    pca.save_basis(basis, os.path.join(out, "basis"))
    dump_json(os.path.join(out, "selection.json"),
              {"criterion": sel.get("criterion", "value"),
               "n": int(idx.size), "indices": [int(i) for i in idx]})
    comps = cfg.get("project_components", [0, 1, 2])
    for c in comps:
        proj = pca.project_weights(collapsed, basis, c)
        save_scoremap(proj, os.path.join(out, f"weight_proj_pc{c}"))
    ratios = basis.explained_ratio()
    return {"n_selected": int(idx.size), "rank": basis.rank,
            "explained_ratio_top3": [float(r) for r in ratios[:3]]}


def cmd_pcstat(cfg, seed, threads, out):
    check_keys(cfg, {"world": None, "lang_weights": None, "vision_weights": None,
                     "basis": None, "components": None,
                     "voxels": {"criterion": None, "n": None, "score": None,
                                "other": None, "indices": None},
                     "perm": {"block_trs": None, "n_trials": None, "fdr_q": None}})
    world = synth.load_world(_require(cfg, "world"))
    lang_w = ridge.load_weightset(_require(cfg, "lang_weights"))
    vis_w = ridge.load_weightset(_require(cfg, "vision_weights"))
    basis = pca.load_basis(_require(cfg, "basis"))
    components = _require(cfg, "components")
    vox_cfg = _require(cfg, "voxels")
    if "indices" in vox_cfg and vox_cfg["indices"] is not None:
        voxel_set = np.asarray(vox_cfg["indices"], dtype=np.int64)
    else:
        score = load_scoremap(_require(vox_cfg, "score", "config.voxels"))
        other = load_scoremap(vox_cfg["other"]) if vox_cfg.get("other") else None
        voxel_set = pca.select_top_voxels(
            score, _require(vox_cfg, "n", "config.voxels"),
            criterion=vox_cfg.get("criterion", "min_pair"), other=other)
    lang_proj = pca.project_weights_many(pca.collapse_delays(lang_w), basis,
                                         components)
    scans = _world_scans(world, "vision")
    pcfg = _perm_config(cfg, seed or 0, default_trials=1000)
    result = stats.pc_spatial_corr_test(
        lang_proj, [d for d, _ in scans], [r for _, r in scans], basis,
        components, voxel_set, vis_w, pcfg, threads=threads)
    stats.save_pc_csv(result, os.path.join(out, "pc_stats.csv"))
    return {"components": list(result.components),
            "statistic": [float(s) for s in result.statistic],
            "n_rejected": int(result.reject.sum())}


def cmd_compare(cfg, seed, threads, out):
    check_keys(cfg, {"a": None, "b": None})
    a = load_scoremap(_require(cfg, "a"))
    b = load_scoremap(_require(cfg, "b"))
    cmp = transfer.compare_feature_sets(a, b)
    save_scoremap(cmp.difference, os.path.join(out, "difference"))
    summary = {"mean_a": cmp.mean_a, "mean_b": cmp.mean_b,
               "mean_difference": cmp.mean_difference,
               "n_voxels_used": cmp.n_voxels_used}
    dump_json(os.path.join(out, "summary.json"), summary)
    return summary


def cmd_report(cfg, seed, threads, out):
    check_keys(cfg, {"runs": None, "labels": None})
    runs = _require(cfg, "runs")
    if not isinstance(runs, list) or not runs:
        raise ArgError("config.runs must be a nonempty list of run dirs")
    labels = cfg.get("labels") or [f"run{i}" for i in range(len(runs))]
    if len(labels) != len(runs):
        raise ArgError("labels and runs must have equal length")
    rows = []
    report = {}
    for label, run_dir in zip(labels, runs):
        table = load_table(os.path.join(run_dir, "table"))
        entry = {"layers": list(table.layers), "mean_r_per_layer": [],
                 "n_voxels": table.n_voxels}
        for i, layer in enumerate(table.layers):
            mean_r = _nanmean(table.values[i].mean(axis=0))
            entry["mean_r_per_layer"].append(mean_r)
            rows.append((label, layer, mean_r))
        report[label] = entry
    with open(os.path.join(out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write("run,layer,mean_r\n")
        for label, layer, mean_r in rows:
            fh.write(f"{label},{layer},{fmt_float(mean_r)}\n")
    dump_json(os.path.join(out, "report.json"), report)
    return {"n_runs": len(runs)}


def _require(cfg: dict, key: str, path: str = "config"):
    if key not in cfg or cfg[key] is None:
        raise ArgError(f"missing required key {path}.{key}")
    return cfg[key]


COMMANDS = {
    "synth": cmd_synth, "fit": cmd_fit, "within": cmd_within,
    "transfer": cmd_transfer, "align": cmd_align, "layers": cmd_layers,
    "signfix": cmd_signfix, "permtest": cmd_permtest, "pca": cmd_pca,
    "pcstat": cmd_pcstat, "compare": cmd_compare, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xenc",
        description="Voxelwise encoding models with cross-modality transfer.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True, help="output directory")
        if name == "transfer":
            p.add_argument("--direction", choices=sorted(_DIRECTIONS),
                           help="overrides config.direction")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_json(args.config) if args.config else {}
        if not isinstance(config, dict):
            raise ArgError("config must be a JSON object")
        if getattr(args, "direction", None):
            config["direction"] = args.direction
        os.makedirs(args.out, exist_ok=True)
        summary = COMMANDS[args.command](config, args.seed, args.threads, args.out)
        _write_run(args.out, args.command, config, args.seed, args.threads, summary)
    except (ArgError, FormatError, CorruptError, IoError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DataError, TrialError, XencError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    print(json.dumps({"command": args.command, "out": args.out,
                      "summary": summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
