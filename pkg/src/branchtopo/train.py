"""Training loop, run manifest and the loss log."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .errors import NumericError
from .geometry import AugConfig, GenConfig, LabeledPointCloud, make_sample, structure_seed
from .io import fmt
from .losses import LossWeights, combined_loss
from .model import (NetworkConfig, build_plan, branchnet_forward, init_params,
                    recalibrate_batchnorm, save_checkpoint, stack_plans)

LOG_HEADER = ("step", "total", "ce", "dlf", "var", "dist", "reg")


def code_hash(version: str = __version__) -> str:
    """Git-style blob id of the code version string."""
    data = version.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def preset_configs(preset: str, dim: int) -> tuple[NetworkConfig, GenConfig, AugConfig]:
    if preset == "paper":
        return NetworkConfig.paper(dim), GenConfig(dim=dim), AugConfig()
    if preset == "desk":
        # half the grid, so jitter halves too; capacity follows the network
        return (NetworkConfig.desk(dim), GenConfig(dim=dim, grid_size=256),
                AugConfig(jitter_sd=1.5, n_points=1024))
    raise ValueError(f"unknown preset {preset!r}")


@dataclass
class TrainConfig:
    network: NetworkConfig
    gen: GenConfig
    aug: AugConfig
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 12
    lr: float = 1e-5
    steps: int = 1000
    eval_every: int = 100
    seed: int = 0
    preset: str = "desk"
    # refresh batchnorm statistics with frozen weights before each checkpoint
    recalibrate: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0 or self.eval_every < 1:
            raise ValueError("steps must be >= 0 and eval_every >= 1")
        if self.aug.n_points != self.network.n_points:
            raise ValueError("augmentation n_points must equal the network's n_points")
        if self.gen.dim != self.network.dim:
            raise ValueError("generator and network dimensions differ")

    @classmethod
    def from_preset(cls, preset: str = "desk", dim: int = 2, **kw) -> TrainConfig:
        net, gen, aug = preset_configs(preset, dim)
        return cls(network=net, gen=gen, aug=aug, preset=preset, **kw)

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(), "gen": self.gen.to_dict(),
            "aug": self.aug.to_dict(), "weights": self.weights.to_dict(),
            "batch_size": self.batch_size, "lr": self.lr, "steps": self.steps,
            "eval_every": self.eval_every, "seed": self.seed, "preset": self.preset,
            "recalibrate": self.recalibrate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        return cls(network=NetworkConfig.from_dict(d.pop("network")),
                   gen=GenConfig.from_dict(d.pop("gen")), aug=AugConfig.from_dict(d.pop("aug")),
                   weights=LossWeights(**d.pop("weights")), **d)


@dataclass
class RunManifest:
    config: dict
    code_version: str
    code_hash: str
    seeds: dict
    log_path: str
    checkpoints: list = field(default_factory=list)
    dataset: str | None = None
    status: str = "running"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> RunManifest:
        with open(path) as fh:
            return cls(**json.load(fh))


class _Batches:
    """Deterministic batch source over a fixed dataset or fresh structures."""

    def __init__(self, cfg: TrainConfig, data_seed: int, clouds: list | None):
        self.cfg = cfg
        self.rng = np.random.default_rng(data_seed)
        self.data_seed = data_seed
        self.clouds = clouds
        self.queue: list = []
        self.drawn = 0
        self.plans = {}

    def _plan(self, key, cloud):
        if key is None:
            return build_plan(cloud.coords, self.cfg.network)
        if key not in self.plans:
            self.plans[key] = build_plan(cloud.coords, self.cfg.network)
        return self.plans[key]

    def next(self) -> tuple[list[LabeledPointCloud], object]:
        b = self.cfg.batch_size
        if self.clouds is None:
            base = self.drawn
            self.drawn += b
            clouds = [make_sample(self.cfg.gen, self.cfg.aug, structure_seed(self.data_seed, base + i))[0]
                      for i in range(b)]
            return clouds, stack_plans([self._plan(None, c) for c in clouds])
        idx = []
        while len(idx) < b:
            if not self.queue:
                self.queue = [int(i) for i in self.rng.permutation(len(self.clouds))]
            idx.append(self.queue.pop(0))
        clouds = [self.clouds[i] for i in idx]
        return clouds, stack_plans([self._plan(i, self.clouds[i]) for i in idx])

    def calibration(self, last):
        """Batches for statistics refresh: the dataset (up to 4 batches) or the last batch."""
        if self.clouds is None:
            yield last
            return
        b = self.cfg.batch_size
        for start in range(0, min(len(self.clouds), 4 * b), b):
            idx = range(start, min(start + b, len(self.clouds)))
            x = np.stack([self.clouds[i].coords for i in idx])
            yield x, stack_plans([self._plan(i, self.clouds[i]) for i in idx])


def _write_log(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        for step, rep in rows:
            fh.write(",".join([str(step)] + [fmt(v) for v in rep]) + "\n")


def train(cfg: TrainConfig, out_dir, clouds: list | None = None, dataset: str | None = None,
          progress=None) -> RunManifest:
    """Run ``cfg.steps`` Adam steps and write checkpoints, log and manifest.

    ``clouds`` switches from on-the-fly generation to sampling batches from a
    fixed dataset.  A non-finite loss stops the run with ``NumericError``;
    the log up to that step and the last checkpoint stay on disk.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    init_seed, data_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(2))
    mp = init_params(cfg.network, init_seed)
    state = ad.AdamState(lr=cfg.lr)
    batches = _Batches(cfg, data_seed, clouds)
    manifest = RunManifest(
        config=cfg.to_dict(), code_version=__version__, code_hash=code_hash(),
        seeds={"seed": cfg.seed, "init": init_seed, "data": data_seed},
        log_path="train_log.csv", dataset=dataset,
    )
    log_rows: list = []

    def checkpoint(step, last=None):
        if step > 0 and cfg.recalibrate:
            recalibrate_batchnorm(mp, batches.calibration(last))
        name = f"ckpt_{step:06d}.bts"
        save_checkpoint(out / name, mp, {"step": step, "code_hash": manifest.code_hash})
        manifest.checkpoints.append(name)

    def flush(status):
        manifest.status = status
        _write_log(out / manifest.log_path, log_rows)
        final = manifest.checkpoints[-1] if manifest.checkpoints else None
        if final is not None:
            (out / "model.bts").write_bytes((out / final).read_bytes())
        manifest.write(out / "run.json")

    checkpoint(0)
    for step in range(1, cfg.steps + 1):
        batch, plan = batches.next()
        x = np.stack([c.coords for c in batch])
        pred = branchnet_forward(x, mp, "train", plan)
        rep = combined_loss(pred.embed_tensor, pred.logit_tensor,
                            np.stack([c.cls for c in batch]), np.stack([c.instance for c in batch]),
                            np.stack([c.mask for c in batch]), cfg.weights)
        if not np.isfinite(rep.row()).all():
            flush("aborted")
            raise NumericError(f"non-finite loss at step {step}; "
                               f"last checkpoint {manifest.checkpoints[-1]}")
        log_rows.append((step, rep.row()))
        grads = ad.backward(rep.tensor, mp.params)
        try:
            ad.adam_step(mp.params, grads, state)
        except NumericError as e:
            flush("aborted")
            raise NumericError(f"step {step}: {e}") from e
        if progress is not None:
            progress(step, rep)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            checkpoint(step, (x, plan))
    flush("complete")
    return manifest
