"""Command-line entry point.

Exit codes: 0 success, 1 computational failure, 2 usage/config error.
Config files use ``key = value`` lines with ``#`` comments; command-line
flags override file values.  Every run logs its resolved configuration
to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import colorimetry as cm
from .dataset import DatasetSpec, extract_pairs, make_synthetic_shard, read_shard, synth_scene, write_shard
from .decomposition import DecompositionParams, decompose
from .errors import ConfigError, FormatError, SritmError, TrainingDiverged
from .metrics import KNOWN_METRICS, evaluate_pairs
from .network import NetworkConfig, extract_modulation_maps
from .selfcheck import SUITES
from .tensor import Tensor
from .trainer import TrainConfig, Trainer
from .weights_io import load_weights, save_weights

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    entries: dict[str, str] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        entries[key.strip()] = value.strip()
    return entries


def _convert(key: str, value: str, target_type):
    try:
        if target_type is bool:
            return _BOOL[value.lower()]
        return target_type(value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {target_type.__name__}") from exc


_NET_TYPES = {
    "sf": int, "m": int, "n": int, "base_channels": int, "pre_shuffle_channels": int,
    "out_channels": int, "use_gf_decomposition": bool, "use_skips": bool,
    "use_modulation": bool, "toy": bool, "toy_input_variant": str, "smf_input_variant": str,
}
_DECOMP_TYPES = {"radius": int, "eps": float, "div_floor": float}
_TRAIN_TYPES = {
    "stage1_iters": int, "stage2_iters": int, "lr_weights": float, "lr_biases": float,
    "batch_size": int, "eval_every": int, "checkpoint_every": int, "seed": int,
}


def resolve_network_config(entries: dict[str, str], base: NetworkConfig | None = None) -> NetworkConfig:
    cfg_kwargs = {}
    decomp_kwargs = {}
    for key, value in entries.items():
        if key in _NET_TYPES:
            cfg_kwargs[key] = _convert(key, value, _NET_TYPES[key])
        elif key in _DECOMP_TYPES:
            decomp_kwargs[key] = _convert(key, value, _DECOMP_TYPES[key])
        else:
            raise ConfigError(f"unknown network config key {key!r}")
    if base is not None:
        merged = dataclasses.asdict(base)
        merged.pop("decomposition")
        merged.update(cfg_kwargs)
        cfg_kwargs = merged
        base_decomp = dataclasses.asdict(base.decomposition)
        base_decomp.update(decomp_kwargs)
        decomp_kwargs = base_decomp
    return NetworkConfig(decomposition=DecompositionParams(**decomp_kwargs), **cfg_kwargs)


def resolve_train_configs(entries: dict[str, str]) -> tuple[TrainConfig, NetworkConfig]:
    entries = dict(entries)
    desk = _convert("desk", entries.pop("desk", "false"), bool)
    if desk:
        train_base, net_base = TrainConfig.desk_preset()
    else:
        train_base, net_base = TrainConfig(), NetworkConfig()
    train_kwargs = dataclasses.asdict(train_base)
    net_entries = {}
    for key, value in entries.items():
        if key in _TRAIN_TYPES:
            train_kwargs[key] = _convert(key, value, _TRAIN_TYPES[key])
        elif key in _NET_TYPES or key in _DECOMP_TYPES:
            net_entries[key] = value
        else:
            raise ConfigError(f"unknown train config key {key!r}")
    net_config = resolve_network_config(net_entries, base=net_base)
    return TrainConfig(**train_kwargs), net_config


def _log_config(name: str, obj) -> None:
    if dataclasses.is_dataclass(obj):
        pairs = " ".join(f"{f.name}={getattr(obj, f.name)!r}" for f in dataclasses.fields(obj))
    else:
        pairs = " ".join(f"{k}={v!r}" for k, v in obj.items())
    print(f"# resolved {name}: {pairs}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_decompose(args) -> int:
    params = DecompositionParams(radius=args.radius, eps=args.eps)
    _log_config("decomposition", params)
    frame = cm.load_frame(args.input)
    image = Tensor(frame.planes[None].astype(np.float64))
    base, detail = decompose(image, params)
    base_frame = cm.ImageFrame(np.clip(base.data[0], 0.0, 1.0),
                               dataclasses.replace(frame.spec, bit_depth=16))
    cm.save_frame(base_frame, args.out_base, comment="guided-filter base layer")
    detail_spec = cm.ColorimetrySpec(frame.spec.primaries, "linear", "identity", 16)
    detail_frame = cm.ImageFrame(np.clip(detail.data[0] / 2.0, 0.0, 1.0), detail_spec)
    cm.save_frame(detail_frame, args.out_detail,
                  comment="detail layer, values mapped v = d/2 (d in [0,2])")
    if args.verify:
        recombined = base.data[0] * detail.data[0]
        floor_ok = base.data[0] >= params.div_floor
        err = float(np.max(np.abs((recombined - frame.planes) * floor_ok)))
        print(f"recombination max abs error (above divisor floor): {err:.3e}")
        if err > 1e-6:
            print("verify FAILED", file=sys.stderr)
            return 1
        print("verify OK")
    return 0


def cmd_infer(args) -> int:
    entries = parse_config_file(args.config) if args.config else {}
    config = resolve_network_config(entries)
    _log_config("network", config)
    net = load_weights(args.weights, config)
    frame = cm.load_frame(args.input)
    if frame.spec.transfer != "gamma24":
        raise ConfigError(f"inference expects an SDR (gamma24) input frame, got {frame.spec.transfer}")
    image = Tensor(frame.planes[None].astype(np.float32))
    if args.dump_modulation_maps:
        record: dict = {}
        out = net.forward(image, record=record)
        dump_dir = Path(args.dump_modulation_maps)
        dump_dir.mkdir(parents=True, exist_ok=True)
        map_spec = cm.ColorimetrySpec("bt709", "linear", "identity", 16)
        for key, tensor in record.items():
            if not key.endswith(".map"):
                continue
            block = key[: -len(".map")]
            mean_map = tensor.data[0].mean(axis=0)
            lo, hi = float(mean_map.min()), float(mean_map.max())
            viewable = (mean_map - lo) / (hi - lo) if hi > lo else np.zeros_like(mean_map)
            planes = np.repeat(viewable[None], 3, axis=0)
            cm.save_frame(cm.ImageFrame(planes, map_spec), dump_dir / f"{block.replace('.', '_')}.png",
                          comment=f"modulation map of {block}, min/max normalized from [{lo:.4g}, {hi:.4g}]")
        print(f"wrote modulation maps to {dump_dir}")
    else:
        out = net.forward(image)
    planes = cm.quantize_to_grid(np.clip(out.data[0].astype(np.float64), 0.0, 1.0), 10)
    cm.save_frame(cm.ImageFrame(planes, cm.HDR_SPEC), args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_train(args) -> int:
    entries = parse_config_file(args.config) if args.config else {"desk": "true"}
    if args.seed is not None:
        entries["seed"] = str(args.seed)
    train_config, net_config = resolve_train_configs(entries)
    _log_config("train", train_config)
    _log_config("network", net_config)
    samples = []
    for shard in args.shards:
        samples.extend(read_shard(shard))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train.log"
    with open(log_path, "a") as sink:
        if args.resume:
            trainer = Trainer.resume(args.resume, net_config, train_config, samples,
                                     out_dir=out_dir, log_sink=sink)
        else:
            trainer = Trainer(net_config, train_config, samples, out_dir=out_dir, log_sink=sink)
        try:
            trainer.run()
        except TrainingDiverged as exc:
            print(f"training diverged: {exc}; checkpoint: {exc.checkpoint_path}", file=sys.stderr)
            return 1
    weights_path = out_dir / "weights.sritm"
    save_weights(trainer.net, weights_path)
    trainer.save(out_dir / "final.ckpt")
    print(f"wrote {weights_path} and {out_dir / 'final.ckpt'}; log at {log_path}")
    return 0


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    _log_config("eval", {"pred": args.pred, "gt": args.gt, "metrics": metrics, "peak_nits": args.peak_nits})
    report = evaluate_pairs(args.pred, args.gt, metrics=metrics, peak_nits=args.peak_nits)
    print(report.as_table())
    report_path = Path(args.report)
    report_path.write_text(report.as_key_values())
    print(f"wrote {report_path}")
    return 0


def cmd_convert(args) -> int:
    frame = cm.load_frame(args.input)
    _log_config("convert", {"input": args.input, "to": args.to, "peak_nits": args.peak_nits})
    if args.to == "pq2020":
        if frame.spec == cm.HDR_SPEC:
            cm.save_frame(frame, args.output)
            print(f"already pq2020; wrote bit-exact copy to {args.output}")
            return 0
        if frame.spec.transfer != "gamma24":
            raise ConfigError(f"cannot convert transfer {frame.spec.transfer!r} to pq2020")
        lum = cm.sdr_to_linear(frame, peak_nits=args.peak_nits)
        cm.save_frame(cm.hdr_encode(lum), args.output)
    elif args.to == "gamma709":
        if frame.spec == cm.SDR_SPEC:
            cm.save_frame(frame, args.output)
            print(f"already gamma709; wrote bit-exact copy to {args.output}")
            return 0
        if frame.spec.transfer != "pq":
            raise ConfigError(f"cannot convert transfer {frame.spec.transfer!r} to gamma709")
        lum = cm.hdr_to_linear(frame, peak_nits=args.peak_nits)
        sdr, clipped = cm.sdr_encode(lum)
        if clipped:
            print(f"warning: {clipped} sample(s) clamped (out of gamut or above diffuse white)",
                  file=sys.stderr)
        cm.save_frame(sdr, args.output)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unsupported conversion target {args.to!r}")
    print(f"wrote {args.output}")
    return 0


def cmd_selfcheck(args) -> int:
    checks = SUITES[args.suite]()
    failed = 0
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        failed += not passed
    return 1 if failed else 0


def cmd_make_dataset(args) -> int:
    spec = DatasetSpec(sf=args.sf, patch_size=args.patch_size, seed=args.seed)
    _log_config("dataset", spec)
    if args.synthetic is not None:
        if args.frame_size < args.patch_size:
            raise ConfigError(f"frame size {args.frame_size} smaller than patch size {args.patch_size}")
        samples = make_synthetic_shard(args.synthetic, spec, size=args.frame_size)
    else:
        frames_dir = Path(args.frames)
        hdr_files = sorted(frames_dir.glob("*.hdr.png"))
        if not hdr_files:
            raise ConfigError(f"no '<name>.hdr.png' frames found in {frames_dir}")
        samples = []
        for fid, hdr_path in enumerate(hdr_files):
            sdr_path = frames_dir / hdr_path.name.replace(".hdr.png", ".sdr.png")
            if not sdr_path.exists():
                raise ConfigError(f"missing SDR counterpart for {hdr_path.name}")
            hdr = cm.load_frame(hdr_path)
            sdr = cm.load_frame(sdr_path)
            if hdr.planes.shape != sdr.planes.shape:
                raise ConfigError(
                    f"{hdr_path.name}: HDR {hdr.planes.shape[1:]} vs SDR {sdr.planes.shape[1:]} size mismatch"
                )
            samples.extend(extract_pairs(hdr, sdr, spec, frame_id=fid))
    write_shard(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_synth_frames(args) -> int:
    """Emit synthetic HDR/SDR frame pairs as files (for eval/infer demos)."""
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        hdr, sdr = synth_scene(args.seed + i, args.size)
        cm.save_frame(hdr, out_dir / f"scene{i:03d}.hdr.png")
        cm.save_frame(sdr, out_dir / f"scene{i:03d}.sdr.png")
    print(f"wrote {args.count} frame pair(s) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sritm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="dump guided-filter base/detail layers of a frame")
    p.add_argument("--input", required=True)
    p.add_argument("--radius", type=int, default=5)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--out-base", required=True)
    p.add_argument("--out-detail", required=True)
    p.add_argument("--verify", action="store_true", help="check base*detail recombines to the input")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("infer", help="run the network on an LR SDR frame")
    p.add_argument("--weights", required=True)
    p.add_argument("--config", help="network config file (key = value)")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dump-modulation-maps", metavar="DIR")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="run the two-stage training schedule")
    p.add_argument("--config", help="train config file; defaults to the desk preset")
    p.add_argument("--shards", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute metrics over matching frame directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default=",".join(KNOWN_METRICS))
    p.add_argument("--report", default="metrics.kv")
    p.add_argument("--peak-nits", type=float, default=cm.DEFAULT_PEAK_NITS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert a frame between display formats")
    p.add_argument("--input", required=True)
    p.add_argument("--to", choices=("pq2020", "gamma709"), required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--peak-nits", type=float, default=cm.DEFAULT_PEAK_NITS)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("selfcheck", help="run a built-in verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("make-dataset", help="produce a training shard")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--synthetic", type=int, metavar="N_FRAMES")
    source.add_argument("--frames", metavar="DIR", help="directory of <name>.hdr.png / <name>.sdr.png pairs")
    p.add_argument("--sf", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=160)
    p.add_argument("--frame-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("synth-frames", help="write synthetic HDR/SDR frame pairs")
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--size", type=int, default=192)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_frames)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SritmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
