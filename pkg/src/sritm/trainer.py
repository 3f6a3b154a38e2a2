"""Two-stage training loop: modulation-free pre-training, then full training.

Stage 1 runs with the modulation subnets bypassed (they receive no
gradients and do not influence the forward pass).  At the stage boundary
the modulation subnets are re-initialized with Xavier weights and
enabled, so their maps start training on already-meaningful features.
Batch sampling is seeded per iteration, which makes interrupted-and-
resumed runs bit-identical to uninterrupted ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import PairSample
from .errors import ConfigError, TrainingDiverged
from .metrics import psnr
from .network import Network, NetworkConfig
from .optim import Adam, xavier_init
from .tensor import Tensor, mse_loss
from .weights_io import load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    stage1_iters: int = 490_000  # paper-scale defaults; see desk_preset()
    stage2_iters: int = 660_000
    lr_weights: float = 5e-7
    lr_biases: float = 5e-8
    batch_size: int = 16
    eval_every: int = 200
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.lr_weights <= 0 or self.lr_biases <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ConfigError("iteration counts must be >= 0")

    @property
    def total_iters(self) -> int:
        return self.stage1_iters + self.stage2_iters

    @classmethod
    def desk_preset(cls, seed: int = 0) -> tuple["TrainConfig", NetworkConfig]:
        """Desk-scale overfit setting: toy network, few pairs, thousands of steps."""
        train = cls(
            stage1_iters=700,
            stage2_iters=1300,
            lr_weights=1e-3,
            lr_biases=1e-4,
            batch_size=4,
            eval_every=200,
            checkpoint_every=500,
            seed=seed,
        )
        return train, NetworkConfig.toy_default(sf=2, base_channels=16, m=1, n=1)


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)
    val_psnr: list[tuple[int, float]] = field(default_factory=list)
    boundary_iter: int | None = None

    def record(self, line: str, sink=None) -> None:
        self.lines.append(line)
        if sink is not None:
            sink.write(line + "\n")
            sink.flush()


def _collate(samples: list[PairSample], dtype) -> tuple[Tensor, Tensor]:
    lr = np.stack([s.lr_sdr for s in samples]).astype(dtype)
    hr = np.stack([s.hr_hdr for s in samples]).astype(dtype)
    return Tensor(lr), Tensor(hr)


def train_step(net: Network, batch: tuple[Tensor, Tensor], optimizer: Adam) -> float:
    """One forward/backward/update cycle; clears gradients afterwards."""
    lr_in, hr_target = batch
    pred = net.forward(lr_in)
    loss = mse_loss(pred, hr_target)
    loss.backward()
    optimizer.step()
    value = float(loss.data)
    optimizer.zero_grad()
    return value


def _reinit_modulation(net: Network) -> None:
    stage2_seed = net.seed + 0x57A6E2
    for name, tensor in net.store.items():
        if ".mod" in name or ".smf." in name:
            fresh = xavier_init(tensor.data.shape, stage2_seed, name=name, dtype=net.dtype)
            tensor.data = fresh.data


def _validation_psnr(net: Network, samples: list[PairSample]) -> float:
    subset = samples[: min(4, len(samples))]
    values = []
    for s in subset:
        pred = net.forward(Tensor(s.lr_sdr[None].astype(net.dtype)))
        values.append(psnr(pred.data[0], s.hr_hdr.astype(net.dtype), 1.0))
    return float(np.mean(values))


class Trainer:
    """Owns the network, optimizer and schedule state for one run."""

    def __init__(self, net_config: NetworkConfig, train_config: TrainConfig,
                 samples: list[PairSample], out_dir=None, log_sink=None):
        if not net_config.use_modulation:
            raise ConfigError("the two-stage schedule requires a modulation-capable network config")
        if not samples:
            raise ConfigError("no training samples provided")
        self.net_config = net_config
        self.config = train_config
        self.samples = samples
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log = TrainLog()
        self.log_sink = log_sink
        self.net = Network(net_config, seed=train_config.seed)
        self.optimizer = Adam(self.net.parameters(), train_config.lr_weights, train_config.lr_biases)
        self.iteration = 0  # iterations completed
        self._apply_stage()

    # -- stage/schedule ---------------------------------------------------------

    def _stage(self, iteration: int) -> int:
        return 1 if iteration < self.config.stage1_iters else 2

    def _apply_stage(self) -> None:
        self.net.modulation_enabled = self._stage(self.iteration) == 2

    def _cross_boundary(self) -> None:
        _reinit_modulation(self.net)
        self.net.modulation_enabled = True
        self.log.boundary_iter = self.iteration
        self.log.record(f"boundary iter={self.iteration}", self.log_sink)

    def _batch(self, iteration: int) -> list[PairSample]:
        rng = np.random.default_rng([self.config.seed, iteration, 0xBA7C])
        idx = rng.integers(0, len(self.samples), size=self.config.batch_size)
        return [self.samples[i] for i in idx]

    # -- checkpointing ------------------------------------------------------------

    def checkpoint_path(self, iteration: int) -> Path:
        if self.out_dir is None:
            raise ConfigError("checkpointing requires an output directory")
        return self.out_dir / f"ckpt_{iteration:07d}.ckpt"

    def save(self, path) -> None:
        save_checkpoint(self.net, self.optimizer.state_tensors(), self.iteration, path)

    @classmethod
    def resume(cls, path, net_config: NetworkConfig, train_config: TrainConfig,
               samples: list[PairSample], out_dir=None, log_sink=None) -> "Trainer":
        trainer = cls(net_config, train_config, samples, out_dir=out_dir, log_sink=log_sink)
        net, opt_state, step = load_checkpoint(path, net_config)
        trainer.net = net
        trainer.optimizer = Adam(net.parameters(), train_config.lr_weights, train_config.lr_biases)
        trainer.optimizer.load_state_tensors(opt_state, step)
        trainer.iteration = int(step)
        # A checkpoint written exactly at the boundary precedes the crossing;
        # only strictly-later checkpoints have the re-initialized subnets.
        if trainer.iteration > train_config.stage1_iters:
            trainer.log.boundary_iter = train_config.stage1_iters
        trainer._apply_stage()
        return trainer

    # -- main loop ------------------------------------------------------------------

    def run(self, max_iters: int | None = None) -> TrainLog:
        """Train until the schedule ends (or for max_iters more steps)."""
        target = self.config.total_iters
        if max_iters is not None:
            target = min(target, self.iteration + max_iters)
        while self.iteration < target:
            if self.iteration == self.config.stage1_iters and self.log.boundary_iter is None:
                self._cross_boundary()
            batch = _collate(self._batch(self.iteration), self.net.dtype)
            loss = train_step(self.net, batch, self.optimizer)
            self.iteration += 1
            stage = self._stage(self.iteration - 1)
            self.log.losses.append(loss)
            self.log.record(f"iter={self.iteration} stage={stage} loss={loss!r}", self.log_sink)
            if not np.isfinite(loss):
                rescue = None
                if self.out_dir is not None:
                    rescue = self.checkpoint_path(self.iteration)
                    self.save(rescue)
                raise TrainingDiverged(f"loss became non-finite at iteration {self.iteration}", rescue)
            if self.config.eval_every and self.iteration % self.config.eval_every == 0:
                val = _validation_psnr(self.net, self.samples)
                self.log.val_psnr.append((self.iteration, val))
                self.log.record(f"iter={self.iteration} stage={stage} val_psnr={val:.4f}", self.log_sink)
            if (
                self.out_dir is not None
                and self.config.checkpoint_every
                and self.iteration % self.config.checkpoint_every == 0
            ):
                self.save(self.checkpoint_path(self.iteration))
        return self.log


def train(net_config: NetworkConfig, samples: list[PairSample], train_config: TrainConfig,
          out_dir=None, log_sink=None) -> tuple[Network, TrainLog]:
    """Run the full two-stage schedule and return the trained network + log."""
    trainer = Trainer(net_config, train_config, samples, out_dir=out_dir, log_sink=log_sink)
    log = trainer.run()
    return trainer.net, log
