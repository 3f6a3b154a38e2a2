"""Declarative network builder and forward evaluator.

The architecture is a two-pass residual network over guided-filter
base/detail inputs: the base pass alternates plain residual blocks with
modulated ones, the detail pass bridges base-pass features through
skip blocks, and both are fused and synthesized to the upscaled output
through a pixel shuffler with a global bicubic residual.

The same grammar also produces the reduced "toy" networks and every
ablation variant (input-combination variants a-e, modulation-input
variants, and independent decomposition/skip/modulation flags).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decomposition import DecompositionParams, decompose, make_inputs
from .errors import ConfigError, ShapeError
from .optim import xavier_init
from .tensor import ConvParams, Tensor, add, concat_channels, conv2d, mul, pixel_shuffle, relu, resize_bicubic

_INPUT_CHANNELS = {
    "image": 3,
    "base": 3,
    "detail": 3,
    "image_base": 6,
    "image_detail": 6,
    "image_base_detail": 9,
}

_TOY_PASSES = {
    "a": [("main", "image")],
    "b": [("main", "image_base_detail")],
    "c": [("base", "base"), ("detail", "detail")],
    "d": [("base", "image_base"), ("detail", "image_detail")],
    "e": [("image", "image"), ("base", "base"), ("detail", "detail")],
}


@dataclass(frozen=True)
class NetworkConfig:
    sf: int = 2
    m: int = 3
    n: int = 10
    base_channels: int = 64
    pre_shuffle_channels: int | None = None  # default: 4 * base_channels
    out_channels: int = 3
    use_gf_decomposition: bool = True
    use_skips: bool = True
    use_modulation: bool = True
    toy: bool = False
    toy_input_variant: str = "d"
    smf_input_variant: str = "stacked"
    decomposition: DecompositionParams = field(default_factory=DecompositionParams)

    def __post_init__(self):
        if self.sf not in (2, 4):
            raise ConfigError(f"sf must be 2 or 4, got {self.sf}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.n < 0:
            raise ConfigError(f"n must be >= 0, got {self.n}")
        if self.toy_input_variant not in _TOY_PASSES:
            raise ConfigError(f"unknown toy input variant {self.toy_input_variant!r}")
        if not self.toy and self.toy_input_variant != "d":
            raise ConfigError("toy_input_variant is only valid for toy networks")
        if self.smf_input_variant not in ("image", "layer", "stacked"):
            raise ConfigError(f"unknown SMF input variant {self.smf_input_variant!r}")
        if self.shuffle_channels % 4 != 0:
            raise ConfigError(f"pre-shuffle channels must be divisible by 4, got {self.shuffle_channels}")

    @property
    def shuffle_channels(self) -> int:
        return 4 * self.base_channels if self.pre_shuffle_channels is None else self.pre_shuffle_channels

    @classmethod
    def toy_default(cls, sf: int = 2, base_channels: int = 16, m: int = 1, n: int = 1, **overrides) -> "NetworkConfig":
        return cls(sf=sf, base_channels=base_channels, m=m, n=n, toy=True, **overrides)


@dataclass(frozen=True)
class BlockPlan:
    name: str  # e.g. "base.rb1"
    kind: str  # rb | rmb | rsb | rsmb (parameter structure)
    bridge: str | None = None  # bridged source block for rsb/rsmb


@dataclass(frozen=True)
class PassPlan:
    name: str
    input_kind: str
    blocks: tuple[BlockPlan, ...]
    smf_input_kind: str | None  # None when the pass has no modulation subnet


def _smf_input_kind(cfg: NetworkConfig, pass_name: str, pass_input_kind: str) -> str:
    if cfg.smf_input_variant == "image":
        return "image"
    if cfg.smf_input_variant == "layer":
        return {"base": "base", "detail": "detail"}.get(pass_name, "image")
    return {"base": "image_base", "detail": "image_detail"}.get(pass_name, pass_input_kind)


def plan_network(cfg: NetworkConfig) -> list[PassPlan]:
    """Expand the config into per-pass block plans (the architecture grammar)."""
    if not cfg.use_gf_decomposition:
        specs = [("main", "image")]
    elif cfg.toy:
        specs = _TOY_PASSES[cfg.toy_input_variant]
    else:
        specs = [("base", "image_base"), ("detail", "image_detail")]

    detail_pass = specs[-1][0] if len(specs) > 1 else None
    bridge_pass = specs[-2][0] if len(specs) > 1 else None
    passes = []
    for pname, ikind in specs:
        blocks: list[BlockPlan] = []
        if pname == detail_pass:
            blocks.append(BlockPlan(f"{pname}.rb1", "rb"))
            for i in range(1, cfg.m + 1):
                if cfg.use_skips:
                    kind = "rsmb" if cfg.use_modulation else "rsb"
                    bridge = f"{bridge_pass}.rb{i}"
                else:
                    kind = "rmb" if cfg.use_modulation else "rb"
                    bridge = None
                blocks.append(BlockPlan(f"{pname}.rsmb{i}", kind, bridge))
                if i < cfg.m:
                    if cfg.use_skips:
                        blocks.append(BlockPlan(f"{pname}.rsb{i}", "rsb", f"{bridge_pass}.rmb{i}"))
                    else:
                        blocks.append(BlockPlan(f"{pname}.rsb{i}", "rb"))
        else:
            for i in range(1, cfg.m + 1):
                blocks.append(BlockPlan(f"{pname}.rb{i}", "rb"))
                blocks.append(BlockPlan(f"{pname}.rmb{i}", "rmb" if cfg.use_modulation else "rb"))
        smf_kind = _smf_input_kind(cfg, pname, ikind) if cfg.use_modulation else None
        passes.append(PassPlan(pname, ikind, tuple(blocks), smf_kind))

    # grammar self-checks (the structural contract of the builder)
    if detail_pass is not None:
        dp = passes[-1]
        assert sum(b.name.startswith(f"{detail_pass}.rsmb") for b in dp.blocks) == cfg.m
        assert sum(b.name.startswith(f"{detail_pass}.rsb") for b in dp.blocks) == cfg.m - 1
        assert dp.blocks[0].kind == "rb"
    for p in passes[:-1] if detail_pass else passes:
        assert len(p.blocks) == 2 * cfg.m
    return passes


_BLOCK_CONVS = {
    "rb": ("conv1", "conv2"),
    "rmb": ("conv1", "conv2", "mod1", "mod2"),
    "rsb": ("dr", "conv1", "conv2"),
    "rsmb": ("dr", "conv1", "conv2", "mod1", "mod2"),
}


class Network:
    """A built network: named weight store plus the structural plan."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.passes = plan_network(config)
        self.store: dict[str, Tensor] = {}
        self.convs: dict[str, ConvParams] = {}
        self.modulation_enabled = config.use_modulation
        self._build()

    # -- construction ---------------------------------------------------------

    def _add_conv(self, name: str, c_in: int, c_out: int, k: int) -> None:
        w = xavier_init((c_out, c_in, k, k), self.seed, name=f"{name}.weight", dtype=self.dtype)
        b = xavier_init((c_out,), self.seed, name=f"{name}.bias", dtype=self.dtype)
        self.store[f"{name}.weight"] = w
        self.store[f"{name}.bias"] = b
        self.convs[name] = ConvParams(w, b)

    def _build(self) -> None:
        cfg = self.config
        c = cfg.base_channels
        for p in self.passes:
            self._add_conv(f"{p.name}.head", _INPUT_CHANNELS[p.input_kind], c, 3)
            for blk in p.blocks:
                for conv_name in _BLOCK_CONVS[blk.kind]:
                    if conv_name == "dr":
                        self._add_conv(f"{blk.name}.dr", 2 * c, c, 1)
                    else:
                        self._add_conv(f"{blk.name}.{conv_name}", c, c, 3)
            if p.smf_input_kind is not None:
                self._add_conv(f"{p.name}.smf.conv1", _INPUT_CHANNELS[p.smf_input_kind], c, 3)
                self._add_conv(f"{p.name}.smf.conv2", c, c, 3)
                self._add_conv(f"{p.name}.smf.conv3", c, c, 3)
        if len(self.passes) > 1:
            self._add_conv("fusion.dr", len(self.passes) * c, c, 1)
            self._add_conv("fusion.conv", c, c, 3)
        for i in range(1, cfg.n + 1):
            self._add_conv(f"fusion.rb{i}.conv1", c, c, 3)
            self._add_conv(f"fusion.rb{i}.conv2", c, c, 3)
        cs = cfg.shuffle_channels
        self._add_conv("synth.conv1", c, c, 3)
        self._add_conv("synth.conv2", c, cs, 3)
        if cfg.sf == 4:
            self._add_conv("synth.mid", cs // 4, cs, 3)
        self._add_conv("synth.out", cs // 4, cfg.out_channels, 3)

    # -- weight access ---------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.store

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.store.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Install named arrays, validating every name and shape."""
        unknown = set(state) - set(self.store)
        if unknown:
            raise ShapeError(f"unknown tensor name(s): {sorted(unknown)[:4]}")
        missing = set(self.store) - set(state)
        if missing:
            raise ShapeError(f"missing tensor name(s): {sorted(missing)[:4]}")
        for name, arr in state.items():
            tgt = self.store[name]
            if tuple(arr.shape) != tgt.data.shape:
                raise ShapeError(f"shape mismatch for {name}: file {tuple(arr.shape)} vs config {tgt.data.shape}")
        for name, arr in state.items():
            self.store[name].data = arr.astype(self.dtype, copy=True)

    def zero_grad(self) -> None:
        for t in self.store.values():
            t.grad = None

    def fill_zero(self) -> None:
        for t in self.store.values():
            t.data[:] = 0

    def astype(self, dtype) -> "Network":
        other = Network(self.config, seed=self.seed, dtype=dtype)
        other.modulation_enabled = self.modulation_enabled
        for name, t in self.store.items():
            other.store[name].data = t.data.astype(dtype)
        return other

    def param_count(self) -> int:
        return sum(t.data.size for t in self.store.values())

    def block_summary(self) -> dict[str, dict[str, int]]:
        """Per-pass counts of structural block kinds, plus fusion/synthesis facts."""
        summary: dict[str, dict[str, int]] = {}
        for p in self.passes:
            counts: dict[str, int] = {}
            for blk in p.blocks:
                counts[blk.kind] = counts.get(blk.kind, 0) + 1
            summary[p.name] = counts
        summary["fusion"] = {"rb": self.config.n, "dr": 1 if len(self.passes) > 1 else 0}
        summary["synth"] = {"pixel_shufflers": 2 if self.config.sf == 4 else 1,
                            "convs_between_shufflers": 1 if self.config.sf == 4 else 0}
        return summary

    # -- forward ---------------------------------------------------------------

    def _residual_convs(self, slot: str, x: Tensor) -> Tensor:
        # (Conv . RL . Conv . RL)(x), the pre-residual path shared by all blocks
        t = relu(x)
        t = conv2d(t, self.convs[f"{slot}.conv1"])
        t = relu(t)
        return conv2d(t, self.convs[f"{slot}.conv2"])

    def _skip_convs(self, slot: str, x: Tensor, bridged: Tensor) -> Tensor:
        # (Conv . RL . Conv . DR . RL)([x bridged])
        t = relu(concat_channels(x, bridged))
        t = conv2d(t, self.convs[f"{slot}.dr"])
        t = conv2d(t, self.convs[f"{slot}.conv1"])
        t = relu(t)
        return conv2d(t, self.convs[f"{slot}.conv2"])

    def _modulation_map(self, slot: str, smf: Tensor) -> Tensor:
        # (Conv . RL . Conv)(SMF), unshared per block
        t = conv2d(smf, self.convs[f"{slot}.mod1"])
        t = relu(t)
        return conv2d(t, self.convs[f"{slot}.mod2"])

    def _smf(self, pass_name: str, inp: Tensor) -> Tensor:
        t = conv2d(inp, self.convs[f"{pass_name}.smf.conv1"])
        t = relu(t)
        t = conv2d(t, self.convs[f"{pass_name}.smf.conv2"])
        t = relu(t)
        t = conv2d(t, self.convs[f"{pass_name}.smf.conv3"])
        return relu(t)

    def _eval_block(self, blk: BlockPlan, x: Tensor, smf: Tensor | None,
                    outs: dict[str, Tensor], mod_active: bool,
                    record: dict | None) -> Tensor:
        kind = blk.kind
        if not mod_active:
            kind = {"rmb": "rb", "rsmb": "rsb"}.get(kind, kind)
        if kind == "rb":
            body = self._residual_convs(blk.name, x)
        elif kind == "rsb":
            body = self._skip_convs(blk.name, x, outs[blk.bridge])
        elif kind in ("rmb", "rsmb"):
            if kind == "rmb":
                body = self._residual_convs(blk.name, x)
            else:
                body = self._skip_convs(blk.name, x, outs[blk.bridge])
            mod_map = self._modulation_map(blk.name, smf)
            if record is not None:
                record[f"{blk.name}.map"] = mod_map
                record[f"{blk.name}.smf"] = smf
            body = mul(body, mod_map)
        else:  # pragma: no cover - plan kinds are closed
            raise ConfigError(f"unknown block kind {kind!r}")
        return add(body, x)

    def forward(self, image: Tensor, record: dict | None = None, modulation: bool | None = None) -> Tensor:
        """Run the full pipeline on a (N, 3, H, W) code-value tensor in [0,1]."""
        cfg = self.config
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise ShapeError(f"network input must be (N, 3, H, W), got {image.data.shape}")
        if modulation is None:
            mod_active = cfg.use_modulation and self.modulation_enabled
        elif modulation and not cfg.use_modulation:
            raise ConfigError("modulation requested but the network was built without modulation subnets")
        else:
            mod_active = modulation

        x = image if image.data.dtype == self.dtype else Tensor(image.data.astype(self.dtype), image.requires_grad)

        needed = {p.input_kind for p in self.passes}
        if mod_active:
            needed |= {p.smf_input_kind for p in self.passes if p.smf_input_kind}
        inputs: dict[str, Tensor] = {"image": x}
        if needed - {"image"}:
            base, detail = decompose(x, cfg.decomposition)
            ib_in, id_in = make_inputs(x, base, detail)
            inputs.update(base=base, detail=detail, image_base=ib_in, image_detail=id_in)
            if "image_base_detail" in needed:
                inputs["image_base_detail"] = concat_channels(ib_in, detail)

        outs: dict[str, Tensor] = {}
        features: list[Tensor] = []
        for p in self.passes:
            smf = None
            if mod_active and p.smf_input_kind is not None:
                smf = self._smf(p.name, inputs[p.smf_input_kind])
                if record is not None:
                    record[f"smf.{p.name}"] = smf
            h = conv2d(inputs[p.input_kind], self.convs[f"{p.name}.head"])
            for blk in p.blocks:
                h = self._eval_block(blk, h, smf, outs, mod_active, record)
                outs[blk.name] = h
            features.append(h)
            if record is not None:
                record[f"fe.{p.name}"] = h

        if len(features) > 1:
            cat = features[0]
            for f in features[1:]:
                cat = concat_channels(cat, f)
            t = relu(cat)
            t = conv2d(t, self.convs["fusion.dr"])
            y = conv2d(t, self.convs["fusion.conv"])
        else:
            y = features[0]
        if record is not None:
            record["x_f"] = y
        for i in range(1, cfg.n + 1):
            y = add(self._residual_convs(f"fusion.rb{i}", y), y)
        if record is not None:
            record["y_f"] = y

        t = relu(y)
        t = conv2d(t, self.convs["synth.conv1"])
        t = relu(t)
        t = conv2d(t, self.convs["synth.conv2"])
        t = relu(t)
        t = pixel_shuffle(t, 2)
        if cfg.sf == 4:
            t = conv2d(t, self.convs["synth.mid"])
            t = pixel_shuffle(t, 2)
        t = conv2d(t, self.convs["synth.out"])
        return add(t, resize_bicubic(x, cfg.sf, antialias=False))


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    return Network(config, seed=seed, dtype=dtype)


def build_toy(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    if not config.toy:
        raise ConfigError("build_toy requires a config with toy=True")
    return Network(config, seed=seed, dtype=dtype)


def param_count(net: Network) -> int:
    return net.param_count()


def extract_modulation_maps(net: Network, image: Tensor) -> dict[str, np.ndarray]:
    """The per-block tensors multiplied into the main path, keyed by block name."""
    if not (net.config.use_modulation and net.modulation_enabled):
        raise ConfigError("modulation maps require an active modulation configuration")
    record: dict = {}
    net.forward(image, record=record)
    return {k[: -len(".map")]: v.data for k, v in record.items() if k.endswith(".map")}
