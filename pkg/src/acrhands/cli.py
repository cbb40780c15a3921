"""acrhands command line: synth, aggregate, fit, export, eval.

Results go to files (or stdout for eval); logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aggregation import InteractionConfig, aggregate_maps
from .attention_maps import MapStack
from .config import RunConfig, build_section, load_config
from .errors import ACRError, FormatError
from .fitting import fit_scene
from .formats import read_json, read_tensor, write_json, write_obj, write_pgm, write_tensor, write_trace_csv
from .hand_model import HANDS, regress_joints, skin_mesh
from .losses import joint_errors, vertex_errors
from .synth import hand_from_json, hand_to_json, oracle_maps, perturb_params, sample_scene, scene_from_json, scene_to_json

log = logging.getLogger("acrhands")

EXIT_OK = 0
EXIT_ERROR = 1


def default_seed() -> int:
    value = os.environ.get("ACR_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"ACR_SEED must be an integer, got {value!r}") from None


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene seed, stable regardless of --count or --jobs."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _load_scene(path, cfg: RunConfig):
    doc = read_json(path)
    try:
        return scene_from_json(doc, cfg.rigs(), cfg.interaction, cfg.kernel, cfg.map_size)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid scene ({exc})") from None


def _params_doc(params: dict, seed=None) -> dict:
    doc = {"seed": seed}
    doc.update({h: hand_to_json(params[h]) for h in HANDS if h in params})
    return doc


# ---------------------------------------------------------------- synth

def _synth_one(args):
    index, seed, out, cfg = args
    scene = sample_scene(seed, cfg.synth, cfg.rigs(), cfg.interaction, cfg.kernel)
    write_json(out / f"scene_{index}.json", scene_to_json(scene))
    write_tensor(out / f"maps_{index}.acrt", oracle_maps(scene).to_tensor())
    return index


def cmd_synth(ns) -> int:
    cfg = load_config(ns.config)
    seed = ns.seed if ns.seed is not None else default_seed()
    if ns.count < 0:
        raise FormatError("--count must be nonnegative")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, scene_seed(seed, i), out, cfg) for i in range(ns.count)]
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            for i in pool.map(_synth_one, jobs):
                log.info("wrote scene %d", i)
    else:
        for job in jobs:
            log.info("wrote scene %d", _synth_one(job))
    return EXIT_OK


# ---------------------------------------------------------------- aggregate

def cmd_aggregate(ns) -> int:
    cfg = load_config(ns.config)
    icfg = cfg.interaction
    if ns.interaction_config:
        icfg = build_section(InteractionConfig, "interaction", read_json(ns.interaction_config))
    tensor = read_tensor(ns.maps)
    try:
        maps = MapStack.from_tensor(tensor)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    result = aggregate_maps(maps, icfg=icfg, kcfg=cfg.kernel)
    doc = {"lambda": result.lam, "hands": {}}
    for h, agg in result.hands.items():
        entry = hand_to_json(agg.params)
        entry.update({
            "center_pre": agg.center.tolist(),
            "center_post": agg.center_repulsed.tolist(),
            "kernel": agg.kernel,
            "vector": agg.feature.F_out.tolist(),
        })
        doc["hands"][h] = entry
    _emit(doc, ns.out)
    return EXIT_OK


# ---------------------------------------------------------------- fit

def cmd_fit(ns) -> int:
    cfg = load_config(ns.config)
    scene = _load_scene(ns.scene, cfg)
    if ns.noise < 0:
        raise FormatError("--noise must be nonnegative")
    seed = ns.seed if ns.seed is not None else default_seed()
    init = {h: perturb_params(p, ns.noise, scene_seed(seed, i)) for i, (h, p) in enumerate(sorted(scene.params.items()))}
    result = fit_scene(scene, init, cfg.fit, cfg.loss_weights)
    log.info("fit stopped after %d iterations (%s)", len(result.trace) - 1, result.reason)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "trace.csv", result.trace, result.terms)
    write_json(out / "metrics.json", {"reason": result.reason, "iterations": len(result.trace) - 1,
                                      **result.metrics})
    write_json(out / "params.json", _params_doc(result.params, scene.seed))
    return EXIT_OK


# ---------------------------------------------------------------- export

def cmd_export(ns) -> int:
    cfg = load_config(ns.config)
    scene = _load_scene(ns.scene, cfg)
    if not ns.obj and not ns.heatmap:
        raise FormatError("nothing to export: pass --obj and/or --heatmap")
    if ns.obj:
        out = Path(ns.obj)
        out.mkdir(parents=True, exist_ok=True)
        for h, state in scene.hands.items():
            write_obj(out / f"{h}.obj", state.mesh, scene.rigs[h].faces)
    if ns.heatmap:
        out = Path(ns.heatmap)
        out.mkdir(parents=True, exist_ok=True)
        for i, h in enumerate(HANDS):
            write_pgm(out / f"center_{h}.pgm", scene.center_map[i])
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _hand_geometry(entry, h, rig):
    """(joints, vertices) of one hand entry: params, or explicit joints/vertices."""
    if "vertices" in entry or "joints" in entry:
        verts = np.asarray(entry["vertices"], dtype=np.float64) if "vertices" in entry else None
        if "joints" in entry:
            joints = np.asarray(entry["joints"], dtype=np.float64)
        elif verts is not None:
            joints = regress_joints(rig, verts)
        return joints, verts
    params = hand_from_json(entry, h)
    mesh = skin_mesh(rig, params)
    return regress_joints(rig, mesh), mesh


def evaluate_docs(pred: dict, gt: dict, rigs) -> dict:
    pred_hands = {h for h in HANDS if pred.get(h) is not None}
    gt_hands = {h for h in HANDS if gt.get(h) is not None}
    if pred_hands != gt_hands:
        raise FormatError(f"hand presence differs: pred {sorted(pred_hands)}, gt {sorted(gt_hands)}")
    metrics = {}
    for h in HANDS:
        if h not in gt_hands:
            continue
        pj, pv = _hand_geometry(pred[h], h, rigs[h])
        gj, gv = _hand_geometry(gt[h], h, rigs[h])
        if pj.shape != gj.shape:
            raise FormatError(f"{h}: joint arrays differ in shape {pj.shape} vs {gj.shape}")
        m = dict(zip(("mpjpe", "pa_mpjpe"), joint_errors(pj, gj)))
        if pv is not None and gv is not None:
            if pv.shape != gv.shape:
                raise FormatError(f"{h}: vertex arrays differ in shape {pv.shape} vs {gv.shape}")
            m.update(zip(("mpvpe", "pa_mpvpe"), vertex_errors(pv, gv, pj[0], gj[0])))
        metrics[h] = m
    if metrics:
        keys = set.intersection(*(set(m) for m in metrics.values()))
        metrics["mean"] = {k: float(np.mean([metrics[h][k] for h in gt_hands])) for k in sorted(keys)}
    return metrics


def cmd_eval(ns) -> int:
    cfg = load_config(ns.config)
    metrics = evaluate_docs(read_json(ns.pred), read_json(ns.gt), cfg.rigs())
    _emit(metrics, ns.out)
    return EXIT_OK


def _emit(doc, out: Optional[str]) -> None:
    if out:
        write_json(out, doc)
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acrhands", description="Two-hand attention aggregation toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for independent scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate scenes and their oracle maps")
    p.add_argument("--seed", type=int, default=None, help="base seed (default: $ACR_SEED or 0)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", help="decode per-hand parameters from a map tensor")
    p.add_argument("--maps", required=True)
    p.add_argument("--interaction-config", help="JSON object with alpha, gamma, lambda_clamp")
    p.add_argument("--config")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit", help="recover a scene's parameters from perturbed ones")
    p.add_argument("--scene", required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None, help="perturbation seed (default: $ACR_SEED or 0)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("export", help="write meshes as OBJ and center heatmaps as PGM")
    p.add_argument("--scene", required=True)
    p.add_argument("--obj")
    p.add_argument("--heatmap")
    p.add_argument("--config")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="MPJPE / PA-MPJPE / MPVPE / PA-MPVPE in mm")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(ns.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except (ACRError, OSError, ValueError) as exc:
        print(f"acrhands {ns.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
