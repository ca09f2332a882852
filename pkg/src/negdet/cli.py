"""Command-line entry points: data synthesis, training, evaluation,
sweeps, one-shot inference, and the HTTP server.

Every run writes a resolved_config.json next to its outputs so results
stay reproducible from the manifest alone. Precedence: defaults <
--config file < explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import replace
from pathlib import Path

from .dataengine import DataConfig, load_dataset, save_dataset, synthesize_dataset
from .detector import (Detector, DetectorConfig, TrainConfig, load_checkpoint,
                       save_checkpoint, train)
from .evalkit import default_bank_builder, evaluate, run_sweep
from .losses import NNHConfig
from .scoring import NNCConfig
from .seeding import substream


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise SystemExit(f"config file {path} must hold a JSON object")
    return doc


def _build(cls, file_section: dict, overrides: dict):
    """Dataclass from defaults, then config-file section, then CLI flags."""
    allowed = {f.name for f in dataclasses.fields(cls)}
    bad = set(file_section) - allowed
    if bad:
        raise SystemExit(f"unknown {cls.__name__} keys in config file: {sorted(bad)}")
    merged = dict(file_section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "strides" in merged:
        merged["strides"] = tuple(merged["strides"])
    if "confusable_pairs" in merged:
        merged["confusable_pairs"] = tuple(tuple(p) for p in merged["confusable_pairs"])
    return cls(**merged)


def _write_resolved(out_dir: Path, command: str, configs: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command}
    for name, cfg in configs.items():
        doc[name] = dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else cfg
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _parse_box(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("box must be x,y,w,h")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="negdet",
                                description="negative-prompt open-set detection workbench")
    p.add_argument("--config", help="JSON config file with data/detector/train/nnc sections")
    p.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a labeled scene corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--num-scenes", type=int)
    g.add_argument("--num-categories", type=int)
    g.add_argument("--image-size", type=int)

    t = sub.add_parser("train", help="train a detector on a saved corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--beta", type=float)
    t.add_argument("--eta", type=float)
    t.add_argument("--mode-policy", choices=("fixed_0", "fixed_1", "bernoulli"))

    e = sub.add_parser("eval", help="evaluate a checkpoint against a fixed prompt bank")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--beta", type=float)
    e.add_argument("--indicator", type=int, choices=(0, 1), default=1)
    e.add_argument("--bank-images", type=int, default=32)
    e.add_argument("--bank-negatives", type=int, default=3)

    s = sub.add_parser("sweep", help="sweep one axis and record AP per value")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--axis", required=True, choices=("beta", "eta", "mode_policy"))
    s.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0.0,0.3,0.9 or fixed_0,bernoulli")
    s.add_argument("--checkpoint", help="reuse this checkpoint (beta axis only)")
    s.add_argument("--steps", type=int)
    s.add_argument("--bank-images", type=int, default=32)

    i = sub.add_parser("infer", help="run one prompted inference and print JSON")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image-id", type=int, required=True)
    i.add_argument("--positive", type=_parse_box, required=True, metavar="x,y,w,h")
    i.add_argument("--negative", type=_parse_box, action="append", default=[],
                   metavar="x,y,w,h")
    i.add_argument("--mode", choices=("user_curated", "auto_suggested"),
                   default="user_curated")
    i.add_argument("--beta", type=float, default=0.3)
    i.add_argument("--indicator", type=int, choices=(0, 1), default=1)
    i.add_argument("--score-threshold", type=float, default=0.25)

    v = sub.add_parser("serve", help="serve the workbench HTTP API")
    v.add_argument("--data", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return p


def _train_config(args, file_cfg: dict) -> TrainConfig:
    tcfg = _build(TrainConfig, file_cfg.get("train", {}),
                  {"steps": getattr(args, "steps", None),
                   "batch_size": getattr(args, "batch_size", None),
                   "seed": args.seed})
    nnc = _build(NNCConfig, file_cfg.get("nnc", {}),
                 {"beta": getattr(args, "beta", None),
                  "mode_policy": getattr(args, "mode_policy", None)})
    if getattr(args, "eta", None) is not None:
        tcfg = replace(tcfg, nnh=NNHConfig(eta=args.eta))
    return replace(tcfg, nnc=nnc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_cfg = _load_config_file(args.config)

    if args.command == "gen-data":
        dcfg = _build(DataConfig, file_cfg.get("data", {}),
                      {"num_scenes": args.num_scenes,
                       "num_categories": args.num_categories,
                       "image_size": args.image_size, "seed": args.seed})
        out = Path(args.out)
        save_dataset(synthesize_dataset(dcfg), out)
        _write_resolved(out, "gen-data", {"data": dcfg, "seed": args.seed})
        print(f"wrote dataset ({dcfg.num_scenes} scenes) to {out}")
        return 0

    if args.command == "train":
        manifest = load_dataset(args.data)
        mcfg = _build(DetectorConfig, file_cfg.get("detector", {}),
                      {"image_size": manifest.config.image_size})
        tcfg = _train_config(args, file_cfg)
        model = Detector(mcfg, substream(args.seed, "init"))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        history = train(model, manifest, tcfg, log=lambda m: print(m, file=sys.stderr))
        save_checkpoint(model, out / "model.ckpt")
        (out / "metrics.json").write_text(json.dumps(history, indent=1))
        _write_resolved(out, "train", {"detector": mcfg, "train": tcfg,
                                       "seed": args.seed})
        print(f"trained {tcfg.steps} steps; final loss "
              f"{history[-1]['loss']:.4f}; checkpoint at {out / 'model.ckpt'}")
        return 0

    if args.command == "eval":
        manifest = load_dataset(args.data)
        model = load_checkpoint(args.checkpoint)
        nnc = _build(NNCConfig, file_cfg.get("nnc", {}), {"beta": args.beta})
        bank = default_bank_builder(model, manifest, args.bank_images,
                                    args.bank_negatives, args.seed)
        res = evaluate(model, manifest, bank, nnc, args.indicator)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps({
            "ap": res.ap,
            "per_category": {str(k): v for k, v in res.per_category.items()},
            "bucket_ap": res.bucket_ap,
            "counting_mae": res.counting_mae,
            "num_images": res.num_images,
            "indicator": args.indicator,
            "beta": nnc.beta,
        }, indent=1, sort_keys=True))
        _write_resolved(out, "eval", {"nnc": nnc, "seed": args.seed,
                                      "checkpoint": str(args.checkpoint)})
        print(f"AP {res.ap:.4f} over {res.num_images} images; buckets {res.bucket_ap}")
        return 0

    if args.command == "sweep":
        manifest = load_dataset(args.data)
        mcfg = _build(DetectorConfig, file_cfg.get("detector", {}),
                      {"image_size": manifest.config.image_size})
        tcfg = _train_config(args, file_cfg)
        nnc = tcfg.nnc
        raw = args.values.split(",")
        values = [v if args.axis == "mode_policy" else float(v) for v in raw]

        def factory(v):
            if args.axis == "beta" and args.checkpoint:
                return load_checkpoint(args.checkpoint)
            return Detector(mcfg, substream(args.seed, "init"))

        def train_fn(model, v):
            if args.axis == "beta" and args.checkpoint:
                return
            cfg = tcfg
            if args.axis == "eta":
                cfg = replace(tcfg, nnh=NNHConfig(eta=float(v)))
            elif args.axis == "mode_policy":
                cfg = replace(tcfg, nnc=replace(nnc, mode_policy=v))
            train(model, manifest, cfg)

        def bank_fn(model):
            return default_bank_builder(model, manifest, args.bank_images,
                                        model.cfg.k_negatives, args.seed)

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = run_sweep(manifest, args.axis, values, factory, train_fn, bank_fn,
                         nnc, args.seed, out_csv=out / "sweep.csv")
        _write_resolved(out, "sweep", {"detector": mcfg, "train": tcfg,
                                       "axis": args.axis, "values": values,
                                       "seed": args.seed})
        for r in rows:
            print(f"{args.axis}={r['axis_value']}: ap={r['ap']:.4f}")
        return 0

    if args.command == "infer":
        from .service import BoxIn, InferRequest, create_app
        from fastapi.testclient import TestClient

        manifest = load_dataset(args.data)
        model = load_checkpoint(args.checkpoint)
        req = InferRequest(
            image_id=args.image_id,
            positive_box=BoxIn(x=args.positive[0], y=args.positive[1],
                               w=args.positive[2], h=args.positive[3]),
            negative_boxes=[BoxIn(x=b[0], y=b[1], w=b[2], h=b[3])
                            for b in args.negative],
            mode=args.mode, beta=args.beta, indicator=args.indicator,
            score_threshold=args.score_threshold, seed=args.seed)
        client = TestClient(create_app(model, manifest))
        resp = client.post("/infer", json=json.loads(req.model_dump_json()))
        if resp.status_code != 200:
            print(json.dumps(resp.json(), indent=1), file=sys.stderr)
            return 1
        print(json.dumps(resp.json(), indent=1, sort_keys=True))
        return 0

    if args.command == "serve":
        import uvicorn
        from .service import create_app

        manifest = load_dataset(args.data)
        model = load_checkpoint(args.checkpoint)
        uvicorn.run(create_app(model, manifest), host=args.host, port=args.port)
        return 0

    raise SystemExit(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
