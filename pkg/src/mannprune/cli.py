"""``mannprune`` command-line entry point.

Run directory layout (per command, under ``--out``)::

    gen-data  config.json schema.json manifest.json clips/<clip>.csv
    train     config.json checkpoint.bin train_report.json [prune_report.json]
    eval      skating.json skating.csv cost.json cost.csv
    sweep     config.json sweep.json sweep.csv cost_table.csv
    compare   config.json compare.json compare.csv
    ablate    ablation.json ablation/<expert>.csv
    trace     traces.json traces/<model>_<gait>.csv
    bench     bench.json bench.csv
    export    tensors.npz cost.json [prune_report.json]

Set ``MANNPRUNE_LOG`` (e.g. ``DEBUG``) to change log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import CONFIG_SCHEMA, load_config
from .errors import ConfigError, NumericError, ShapeError

log = logging.getLogger("mannprune")


def parse_sparsity_list(text: str) -> list[float]:
    """``"0.1..0.9"`` (step 0.1), ``"0.1..0.9:0.2"`` or ``"0.1,0.5,0.9"``."""
    text = text.strip()
    try:
        if ".." in text:
            rng, _, step = text.partition(":")
            lo, hi = (float(v) for v in rng.split(".."))
            step_f = float(step) if step else 0.1
            if step_f <= 0 or hi < lo:
                raise ValueError
            n = int(round((hi - lo) / step_f))
            values = [round(lo + i * step_f, 10) for i in range(n + 1)]
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sparsity list {text!r}") from None
    if not values or any(not 0 <= v < 1 for v in values):
        raise ConfigError(f"sparsities must lie in [0, 1): {text!r}")
    return values


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def _load_data_dir(data_dir):
    from .data import MotionClip, SkeletonSchema

    d = Path(data_dir)
    try:
        schema = SkeletonSchema.from_json((d / "schema.json").read_text())
        manifest = json.loads((d / "manifest.json").read_text())
    except OSError as e:
        raise ConfigError(f"dataset directory {d} is incomplete: {e}") from None
    clips = []
    for entry in manifest["clips"]:
        clip = MotionClip.read_csv(d / entry["file"], schema, entry["id"])
        clip.gait = entry.get("gait", "")
        clips.append(clip)
    return schema, clips, manifest


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> int:
    from .data import GaitSpec, generate_gait, gait_suite

    d = cfg.section("data")
    schema = cfg.schema()
    if d.get("clips"):
        specs = [GaitSpec.from_dict(c) for c in d["clips"]]
    else:
        specs = gait_suite(cfg.seed, d["duration"], d["variants"], d["gaits"])
        specs = [GaitSpec(**{**s.to_dict(), "noise": d["noise"]}) for s in specs]
    clips = [generate_gait(s, schema) for s in specs]
    out = Path(args.out)
    entries = []
    for i, (spec, clip) in enumerate(zip(specs, clips)):
        name = f"{i:03d}_{clip.clip_id}"
        _write(out / "clips" / f"{name}.csv", clip.to_csv())
        entries.append({"id": name, "file": f"clips/{name}.csv", "gait": spec.gait,
                        "frames": clip.n_frames, "pairs": clip.n_frames - 1,
                        "spec": spec.to_dict()})
    manifest = {"seed": cfg.seed, "clips": entries,
                "total_pairs": sum(e["pairs"] for e in entries)}
    _write(out / "schema.json", schema.to_json() + "\n")
    _write(out / "manifest.json", _dump(manifest))
    _write(out / "config.json", cfg.to_json() + "\n")
    print(f"wrote {len(clips)} clips ({manifest['total_pairs']} pairs) to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    from .data import build_dataset
    from .network import init_network
    from .numeric import make_rng
    from .pruning import PruneState
    from .training import train

    schema, clips, _ = _load_data_dir(args.data)
    dataset = build_dataset(clips, cfg.section("data")["val_fraction"])
    tcfg = cfg.train_config()
    if args.resume:
        loaded = ckpt.load(args.resume)
        net, state, opt = loaded.net, loaded.prune_state, loaded.optimizer
        if net.config.d_in != schema.d_in or net.config.d_out != schema.d_out:
            raise ConfigError("checkpoint network does not match the dataset schema")
    else:
        net = init_network(cfg.network_config(schema), make_rng(cfg.seed, 0))
        net.norm = dataset.normalization()
        state = PruneState.for_network(net, cfg.prune_config()) if cfg.prune_enabled else None
        opt = None
    from .training import OptimizerState

    opt = opt or OptimizerState.zeros_like(net)
    report = train(net, dataset, tcfg, prune=state, optimizer=opt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "epochs": tcfg.epochs, "schema": schema.to_dict()}
    ckpt.save(out / "checkpoint.bin", net, state, opt, meta)
    _write(out / "train_report.json", report.to_json() + "\n")
    _write(out / "config.json", cfg.to_json() + "\n")
    if state is not None:
        _write(out / "prune_report.json", state.report_json() + "\n")
    final = report.val_loss[-1] if report.epochs else float("nan")
    print(f"trained {tcfg.epochs} epochs, final val MSE {final:.5f}, "
          f"sparsity {state.sparsity if state else 0.0:.4f}")
    return 0


def _checkpoint_schema(loaded):
    from .data import SkeletonSchema

    if "schema" not in loaded.meta:
        raise ConfigError("checkpoint carries no schema metadata")
    return SkeletonSchema.from_dict(loaded.meta["schema"])


def _reference_clips(args, cfg, schema):
    from .data import GaitSpec, generate_gait
    from .pipeline import eval_clips

    if getattr(args, "data", None):
        _, clips, _ = _load_data_dir(args.data)
        return clips
    if getattr(args, "gait_spec", None):
        doc = json.loads(Path(args.gait_spec).read_text())
        docs = doc if isinstance(doc, list) else [doc]
        return [generate_gait(GaitSpec.from_dict(d), schema) for d in docs]
    e = cfg.section("eval")
    return eval_clips(schema, e["gaits"], duration=e["duration"])


def cmd_eval(args, cfg) -> int:
    from .data import rollout_like
    from .evaluation import cost_report, foot_skate, rows_to_csv

    loaded = ckpt.load(args.checkpoint)
    schema = _checkpoint_schema(loaded)
    clips = _reference_clips(args, cfg, schema)
    out = Path(args.out)
    skating, rows = {}, []
    for clip in clips:
        try:
            rep = foot_skate(rollout_like(loaded.net, clip).clip, args.threshold_cm)
            skating[clip.clip_id] = rep.to_dict()
            rows += [{"clip": clip.clip_id, **r} for r in rep.to_rows(schema.feet)]
        except NumericError as e:
            skating[clip.clip_id] = {"error": str(e)}
            rows.append({"clip": clip.clip_id, "leg": "all",
                         "skating_cm_per_frame": float("inf"), "contact_frames": 0})
    cost = cost_report(loaded.net, loaded.prune_state)
    _write(out / "skating.json", _dump(skating))
    _write(out / "skating.csv", rows_to_csv(rows))
    _write(out / "cost.json", _dump(cost.to_dict()))
    _write(out / "cost.csv", rows_to_csv([cost.table_row()]))
    print(f"size {cost.size_mb:.3f} Mb, {cost.mflops:.4f} MFLOPs, sparsity {cost.sparsity:.4f}")
    return 0


def cmd_sweep(args, cfg) -> int:
    from .data import build_dataset
    from .evaluation import rows_to_csv
    from .pipeline import eval_clips, sweep

    sparsities = parse_sparsity_list(args.sparsity)
    schema, clips, _ = _load_data_dir(args.data)
    dataset = build_dataset(clips, cfg.section("data")["val_fraction"])
    e = cfg.section("eval")
    rows = sweep(dataset, eval_clips(schema, e["gaits"], duration=e["duration"]),
                 cfg.network_config(schema), cfg.train_config(), cfg.prune_config(),
                 sparsities, args.threshold_cm)
    out = Path(args.out)
    _write(out / "config.json", cfg.to_json() + "\n")
    _write(out / "sweep.json", _dump({"seed": cfg.seed, "rows": rows}))
    _write(out / "sweep.csv", rows_to_csv(rows))
    _write(out / "cost_table.csv", rows_to_csv(
        [{"sparsity": r["sparsity"], "size_Mb": r["size_Mb"], "MFLOPs": r["MFLOPs"]}
         for r in rows]))
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"sweep of {len(rows)} points written to {out} ({failed} failed)")
    return 0


def cmd_compare(args, cfg) -> int:
    from .data import build_dataset
    from .evaluation import ComparisonProtocol, compare_equal_params, rows_to_csv
    from .pipeline import eval_clips

    schema, clips, _ = _load_data_dir(args.data)
    dataset = build_dataset(clips, cfg.section("data")["val_fraction"])
    e = cfg.section("eval")
    protocol = ComparisonProtocol(
        dense_sizes=e["compare_dense_sizes"], large=cfg.network_config(schema),
        train=cfg.train_config(), prune=cfg.prune_config(), seeds=[cfg.seed],
        threshold_cm=args.threshold_cm)
    rows = compare_equal_params(protocol, dataset,
                                eval_clips(schema, ["walk"], duration=e["duration"]))
    out = Path(args.out)
    _write(out / "config.json", cfg.to_json() + "\n")
    _write(out / "compare.json", _dump({"seed": cfg.seed, "rows": rows}))
    _write(out / "compare.csv", rows_to_csv(rows))
    print(f"{len(rows)} comparison rows written to {out}")
    return 0


def cmd_ablate(args, cfg) -> int:
    from .analysis import ablation_study

    loaded = ckpt.load(args.checkpoint)
    schema = _checkpoint_schema(loaded)
    out = Path(args.out)
    summary = []
    for clip in _reference_clips(args, cfg, schema):
        for res in ablation_study(loaded.net, clip, args.renormalize, args.threshold_cm):
            summary.append({"clip": clip.clip_id, "gait": clip.gait, **res.summary()})
            if res.rollout is not None:
                _write(out / "ablation" / f"{clip.clip_id}_expert{res.expert}.csv",
                       res.rollout.clip.to_csv())
    _write(out / "ablation.json", _dump({"renormalize": args.renormalize, "results": summary}))
    print(f"ablation of {loaded.net.n_experts} experts written to {out}")
    return 0


def cmd_trace(args, cfg) -> int:
    from .analysis import compare_traces, trace_activations
    from .data import rollout_like

    models = [(args.label_a, args.checkpoint)]
    if args.compare:
        models = [(args.label_a, args.checkpoint), (args.label_b, args.compare)]
    out = Path(args.out)
    traces = {}
    for label, path in models:
        loaded = ckpt.load(path)
        schema = _checkpoint_schema(loaded)
        rolls = [rollout_like(loaded.net, c) for c in _reference_clips(args, cfg, schema)]
        traces[label] = trace_activations(loaded.net, rolls, label)
        for tr in traces[label]:
            _write(out / "traces" / f"{label}_{tr.gait}.csv", tr.to_csv())
    doc = {"summaries": [t.summary() for ts in traces.values() for t in ts]}
    if args.compare:
        doc["comparisons"] = [compare_traces(a, b)
                              for a, b in zip(traces[args.label_a], traces[args.label_b])]
    _write(out / "traces.json", _dump(doc))
    print(f"traces written to {out}")
    return 0


def cmd_bench(args, cfg) -> int:
    from .evaluation import bench_inference, rows_to_csv
    from .network import init_network
    from .numeric import make_rng

    if args.checkpoint:
        net = ckpt.load(args.checkpoint).net
    else:
        net = init_network(cfg.network_config(cfg.schema()), make_rng(cfg.seed, 0))
    sparsities = parse_sparsity_list(args.sparsity)
    report = bench_inference(net, sparsities, cfg.section("eval")["bench_reps"],
                             cfg.prune_config())
    out = Path(args.out)
    _write(out / "bench.json", _dump(report.to_dict()))
    _write(out / "bench.csv", rows_to_csv(report.to_rows()))
    for t in report.layers:
        print(f"{t.layer:8s} s={t.sparsity:.2f} dense {t.dense_s * 1e6:8.2f}us "
              f"csr {t.csr_s * 1e6:8.2f}us speedup {t.speedup:.2f}")
    return 0


def cmd_export(args, cfg) -> int:
    from .evaluation import cost_report
    from .network import PARAM_ORDER
    from .numeric import csr_from_dense

    if args.schema:
        text = json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True) + "\n"
        if args.out:
            _write(Path(args.out) / "config_schema.json", text)
        else:
            sys.stdout.write(text)
        return 0
    if not args.checkpoint or not args.out:
        raise ConfigError("export needs --checkpoint and --out (or --schema)")
    loaded = ckpt.load(args.checkpoint)
    arrays = {}
    for name in PARAM_ORDER:
        t = loaded.net.params[name]
        mats = t.reshape(-1, t.shape[-1]) if t.ndim > 1 else t[None, :]
        csr = csr_from_dense(mats)
        arrays[f"{name}.shape"] = np.array(t.shape, dtype=np.int64)
        arrays[f"{name}.row_offsets"] = csr.row_offsets
        arrays[f"{name}.col_indices"] = csr.col_indices
        arrays[f"{name}.values"] = csr.values
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "tensors.npz", **arrays)
    _write(out / "cost.json", _dump(cost_report(loaded.net, loaded.prune_state).to_dict()))
    if loaded.prune_state is not None:
        _write(out / "prune_report.json", loaded.prune_state.report_json() + "\n")
    print(f"exported {len(PARAM_ORDER)} tensors to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
    "compare": cmd_compare, "ablate": cmd_ablate, "trace": cmd_trace, "bench": cmd_bench,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mannprune",
        description="Train, prune and evaluate a mixture-of-experts motion network.",
        epilog="Set MANNPRUNE_LOG=INFO|DEBUG for progress logs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, *, out=True, data=False, checkpoint=False, sparsity=None):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", required=out, help="output directory")
        sp.add_argument("--threshold-cm", type=float,
                        help="foot contact height threshold in cm (default: config eval "
                             "section, 2.5)")
        if data:
            sp.add_argument("--data", required=data == "required", help="gen-data output directory")
        if checkpoint:
            sp.add_argument("--checkpoint", required=checkpoint == "required")
        if sparsity is not None:
            sp.add_argument("--sparsity", default=sparsity,
                            help='sparsity list: "0.1..0.9", "0.1..0.9:0.2" or "0.1,0.5"')
        return sp

    add("gen-data", "synthesize a procedural gait dataset")
    tr = add("train", "train (and optionally prune) a network", data="required")
    tr.add_argument("--resume", help="continue from this checkpoint")
    ev = add("eval", "roll out and score skating, size and FLOPs", data=True,
             checkpoint="required")
    ev.add_argument("--gait-spec", help="GaitSpec JSON (object or list) to roll out")
    add("sweep", "train one pruned model per sparsity", data="required", sparsity="0.1..0.9")
    add("compare", "equal-parameter dense vs pruned comparison", data="required")
    ab = add("ablate", "deactivate experts one by one", data=True, checkpoint="required")
    ab.add_argument("--gait-spec")
    ab.add_argument("--renormalize", action="store_true",
                    help="rescale remaining coefficients to sum to 1")
    trc = add("trace", "export gating activations", data=True, checkpoint="required")
    trc.add_argument("--gait-spec")
    trc.add_argument("--compare", help="second checkpoint to compare against")
    trc.add_argument("--label-a", default="dense")
    trc.add_argument("--label-b", default="sparse")
    add("bench", "dense vs CSR matvec timing", checkpoint=True, sparsity="0,0.5,0.9")
    exp = add("export", "export tensors as CSR plus reports", out=False, checkpoint=True)
    exp.add_argument("--schema", action="store_true", help="emit the config JSON schema")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MANNPRUNE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if args.threshold_cm is None:
            args.threshold_cm = cfg.section("eval")["threshold_cm"]
        elif args.threshold_cm <= 0:
            raise ConfigError("--threshold-cm must be > 0")
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
