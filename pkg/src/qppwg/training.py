"""RAdam, the two-phase GAN schedule and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import (
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    STREAM_LAYOUT,
    FeatureNormalizer,
    upsample_to_samples,
)
from .errors import ConfigurationError, InvariantError, NumericalError, UsageError
from .losses import DEFAULT_RESOLUTIONS, StftLossConfig, loss_adv, loss_d, loss_g, stft_loss_terms
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .vocoder import PreparedUtterance, Utterance, fit_normalizer, prepare

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_sc", "l_m", "l_sp", "l_adv", "l_d", "lr_g", "lr_d")


class RAdam:
    """Rectified Adam over a list of :class:`~qppwg.tensor.Parameter`.

    While the variance rectification term is undefined (``rho_t <= 4``) the
    update is the bias-corrected momentum step.
    """

    def __init__(self, params: Sequence[T.Parameter], lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-6):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigurationError("parameter names must be unique")
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.exp_avg = {p.name: np.zeros_like(p.data) for p in self.params}
        self.exp_avg_sq = {p.name: np.zeros_like(p.data) for p in self.params}

    def rectification(self, t: int) -> Optional[float]:
        """Variance rectification factor at step ``t``, or ``None`` when undefined."""
        beta2 = self.betas[1]
        rho_inf = 2.0 / (1.0 - beta2) - 1.0
        beta2_t = beta2 ** t
        rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
        if rho_t <= 4.0:
            return None
        return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    def step(self, lr: Optional[float] = None, grads: Optional[dict] = None) -> None:
        """Apply one update using ``p.grad`` (or ``grads[name]``); missing gradients count as zero."""
        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - beta1 ** t
        bias2 = 1.0 - beta2 ** t
        rect = self.rectification(t)
        for p in self.params:
            g = p.grad if grads is None else grads.get(p.name)
            m, v = self.exp_avg[p.name], self.exp_avg_sq[p.name]
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.shape:
                raise InvariantError(f"gradient for {p.name} has shape {g.shape}, expected {p.shape}")
            dt = p.dtype.type
            m *= dt(beta1)
            m += dt(1 - beta1) * g
            v *= dt(beta2)
            v += dt(1 - beta2) * g * g
            if rect is None:
                p.data -= dt(lr / bias1) * m
            else:
                denom = np.sqrt(v / dt(bias2)) + dt(self.eps)
                p.data -= dt(lr * rect / bias1) * m / denom

    def state_blobs(self, prefix: str) -> dict:
        out = {}
        for name, arr in self.exp_avg.items():
            out[f"{prefix}/exp_avg/{name}"] = arr
        for name, arr in self.exp_avg_sq.items():
            out[f"{prefix}/exp_avg_sq/{name}"] = arr
        return out

    def load_state_blobs(self, prefix: str, blobs: dict, step_count: int) -> None:
        for name in self.exp_avg:
            self.exp_avg[name] = blobs[f"{prefix}/exp_avg/{name}"].astype(self.exp_avg[name].dtype)
            self.exp_avg_sq[name] = blobs[f"{prefix}/exp_avg_sq/{name}"].astype(self.exp_avg_sq[name].dtype)
        self.step_count = int(step_count)


def radam_step(optimizer: RAdam, grads: Optional[dict] = None, lr: Optional[float] = None) -> None:
    optimizer.step(lr=lr, grads=grads)


@dataclass
class TrainConfig:
    """Defaults follow the full-scale recipe; :meth:`desk` scales it to a laptop."""

    total_steps: int = 400_000
    warmup_steps: int = 100_000
    lr_g: float = 1e-4
    lr_d: float = 5e-5
    decay_every: int = 200_000
    decay_rate: float = 0.5
    batch_size: int = 6
    batch_length: int = 25_520
    hop_samples: int = DEFAULT_HOP
    sample_rate: int = DEFAULT_SAMPLE_RATE
    lambda_adv: float = 4.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-6
    stft_resolutions: list = field(default_factory=lambda: [list(r) for r in DEFAULT_RESOLUTIONS])
    discriminator_channels: int = 64

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.warmup_steps > self.total_steps:
            raise ConfigurationError("warmup_steps must not exceed total_steps")
        if self.batch_length % self.hop_samples:
            raise ConfigurationError(
                f"batch_length {self.batch_length} is not a multiple of hop_samples {self.hop_samples}")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ConfigurationError("batch_size and decay_every must be positive")
        longest = max(win for _, _, win in StftLossConfig(self.stft_resolutions).resolutions)
        if self.batch_length < longest:
            raise ConfigurationError(
                f"batch_length {self.batch_length} is shorter than the longest STFT window {longest}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(total_steps=2000, warmup_steps=500, decay_every=1000, batch_size=1,
                    batch_length=5500, discriminator_channels=16)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @property
    def stft(self) -> StftLossConfig:
        return StftLossConfig(self.stft_resolutions)

    def learning_rates(self, step: int) -> tuple:
        factor = self.decay_rate ** (step // self.decay_every)
        return self.lr_g * factor, self.lr_d * factor


@dataclass
class Batch:
    x: np.ndarray
    aux: np.ndarray
    f0: np.ndarray
    z: np.ndarray
    items: list
    mask: Optional[np.ndarray] = None


def sample_batch(dataset: Sequence[PreparedUtterance], cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Random frame-aligned crops of ``cfg.batch_length`` samples plus fresh noise.

    Utterances shorter than the crop are zero-padded and the padded samples
    are flagged in ``mask``.
    """
    if not dataset:
        raise UsageError("cannot sample a batch from an empty dataset")
    hop = cfg.hop_samples
    n_frames = cfg.batch_length // hop
    xs, auxs, f0s, masks, items = [], [], [], [], []
    padded = False
    for _ in range(cfg.batch_size):
        i = int(rng.integers(len(dataset)))
        utt = dataset[i]
        if utt.frame_count >= n_frames:
            start = int(rng.integers(utt.frame_count - n_frames + 1))
            frames = slice(start, start + n_frames)
            xs.append(utt.audio[start * hop:(start + n_frames) * hop])
            auxs.append(utt.aux_frames[frames])
            f0s.append(utt.f0[frames])
            masks.append(np.ones(cfg.batch_length, dtype=np.float32))
        else:
            start, pad = 0, n_frames - utt.frame_count
            padded = True
            xs.append(np.pad(utt.audio, (0, pad * hop)))
            auxs.append(np.pad(utt.aux_frames, ((0, pad), (0, 0))))
            f0s.append(np.pad(utt.f0, (0, pad), mode="edge"))
            masks.append(np.repeat((np.arange(n_frames) < utt.frame_count).astype(np.float32), hop))
        items.append((i, start))
    x = np.stack(xs)[:, None, :].astype(np.float32)
    aux = upsample_to_samples(np.stack(auxs), hop).astype(np.float32)
    f0 = np.repeat(np.stack(f0s), hop, axis=1)
    z = rng.standard_normal((cfg.batch_size, 1, cfg.batch_length), dtype=np.float32)
    mask = np.stack(masks)[:, None, :] if padded else None
    return Batch(x=x, aux=aux, f0=f0, z=z, items=items, mask=mask)


def _check_finite(step: int, **losses) -> None:
    vals = {k: float(v.item()) for k, v in losses.items() if v is not None}
    if not all(math.isfinite(v) for v in vals.values()):
        raise NumericalError(f"non-finite loss at step {step}: {vals}")


def train_step(gen: Generator, disc: Discriminator, opt_g: RAdam, opt_d: RAdam,
               batch: Batch, cfg: TrainConfig, step: int) -> dict:
    """One optimization step: G on L_sp during warmup, else a D update followed by a G update."""
    lr_g, lr_d = cfg.learning_rates(step)
    adversarial = step >= cfg.warmup_steps
    schedule = gen.make_schedule(batch.f0, cfg.sample_rate) if gen.adaptive_dilations else None
    x = T.Tensor(batch.x)
    y = gen(T.Tensor(batch.z), T.Tensor(batch.aux), schedule)
    if batch.mask is not None:
        y = T.mul(y, T.Tensor(batch.mask))
    record = {"step": step, "l_adv": None, "l_d": None, "lr_g": lr_g, "lr_d": lr_d}

    if adversarial:
        disc.zero_grad()
        l_d = loss_d(disc(x), disc(y.detach()))
        _check_finite(step, l_d=l_d)
        l_d.backward()
        opt_d.step(lr_d)
        record["l_d"] = l_d.item()

    gen.zero_grad()
    l_sc, l_m = stft_loss_terms(x, y, cfg.stft)
    l_sp = T.add(l_sc, l_m)
    l_adv = None
    if adversarial:
        d_params = disc.parameters()
        for p in d_params:
            p.requires_grad = False
        try:
            l_adv = loss_adv(disc(y))
        finally:
            for p in d_params:
                p.requires_grad = True
    total = loss_g(l_sp, l_adv, cfg.lambda_adv, adversarial)
    _check_finite(step, l_sc=l_sc, l_m=l_m, l_adv=l_adv)
    total.backward()
    opt_g.step(lr_g)
    record.update(l_sc=l_sc.item(), l_m=l_m.item(), l_sp=l_sp.item())
    if l_adv is not None:
        record["l_adv"] = l_adv.item()
    return record


class Trainer:
    """Owns the models, optimizers, RNG and loss history of one training run."""

    def __init__(self, gen_config: GeneratorConfig, train_config: TrainConfig,
                 utterances: Sequence[Utterance], seed: int = 0,
                 disc_config: Optional[DiscriminatorConfig] = None,
                 normalizer: Optional[FeatureNormalizer] = None):
        if not utterances:
            raise UsageError("training needs at least one utterance")
        self.gen_config = gen_config
        self.cfg = train_config
        self.seed = int(seed)
        self.disc_config = disc_config or DiscriminatorConfig(channels=train_config.discriminator_channels)
        gen_seed, disc_seed, data_seed = np.random.SeedSequence(self.seed).spawn(3)
        self.gen = Generator(gen_config, seed=gen_seed)
        self.disc = Discriminator(self.disc_config, seed=disc_seed)
        self.rng = np.random.default_rng(data_seed)
        self.opt_g = RAdam(self.gen.parameters(), train_config.lr_g, train_config.betas, train_config.eps)
        self.opt_d = RAdam(self.disc.parameters(), train_config.lr_d, train_config.betas, train_config.eps)
        self.normalizer = normalizer or fit_normalizer(utterances)
        self.dataset = [prepare(u, self.normalizer, train_config.hop_samples) for u in utterances]
        self.step = 0
        self.history: list = []

    def train_step(self) -> dict:
        batch = sample_batch(self.dataset, self.cfg, self.rng)
        record = train_step(self.gen, self.disc, self.opt_g, self.opt_d, batch, self.cfg, self.step)
        self.step += 1
        self.history.append(record)
        return record

    def run(self, steps: Optional[int] = None, log_path=None, log_every: int = 100) -> list:
        """Train until ``steps`` more updates (default: up to ``total_steps``)."""
        target = self.cfg.total_steps if steps is None else self.step + steps
        writer = None
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists() or log_path.stat().st_size == 0
            fh = open(log_path, "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(LOG_COLUMNS)
        try:
            records = []
            while self.step < target:
                rec = self.train_step()
                records.append(rec)
                if writer is not None:
                    writer.writerow([format_log_value(rec[c]) for c in LOG_COLUMNS])
                if log_every and rec["step"] % log_every == 0:
                    logger.info("step %d l_sp %.4f l_adv %s l_d %s", rec["step"], rec["l_sp"],
                                rec["l_adv"], rec["l_d"])
            return records
        finally:
            if fh is not None:
                fh.close()

    # -- persistence ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "kind": "trainer",
            "generator": self.gen_config.to_dict(),
            "discriminator": self.disc_config.to_dict(),
            "train": self.cfg.to_dict(),
            "seed": self.seed,
            "step": self.step,
            "normalizer": self.normalizer.to_dict(),
            "rng_state": self.rng.bit_generator.state,
            "opt_g_steps": self.opt_g.step_count,
            "opt_d_steps": self.opt_d.step_count,
            "sample_rate": self.cfg.sample_rate,
            "hop_samples": self.cfg.hop_samples,
            "feature_layout": [[name, dims] for name, dims in STREAM_LAYOUT],
        }

    def save(self, path) -> Path:
        blobs = {f"generator/{k}": v for k, v in self.gen.state_dict().items()}
        blobs.update({f"discriminator/{k}": v for k, v in self.disc.state_dict().items()})
        blobs.update(self.opt_g.state_blobs("opt_g"))
        blobs.update(self.opt_d.state_blobs("opt_d"))
        return save_checkpoint(path, self.header(), blobs)

    @classmethod
    def load(cls, path, utterances: Sequence[Utterance]) -> "Trainer":
        header, blobs = load_checkpoint(path)
        if header.get("kind") != "trainer":
            raise ConfigurationError(f"{path} is not a training checkpoint")
        trainer = cls(GeneratorConfig.from_dict(header["generator"]),
                      TrainConfig.from_dict(header["train"]), utterances, seed=header["seed"],
                      disc_config=DiscriminatorConfig(**header["discriminator"]),
                      normalizer=FeatureNormalizer.from_dict(header["normalizer"]))
        for prefix, module in (("generator/", trainer.gen), ("discriminator/", trainer.disc)):
            module.load_state_dict({k[len(prefix):]: v for k, v in blobs.items() if k.startswith(prefix)})
        trainer.opt_g.load_state_blobs("opt_g", blobs, header["opt_g_steps"])
        trainer.opt_d.load_state_blobs("opt_d", blobs, header["opt_d_steps"])
        trainer.rng.bit_generator.state = header["rng_state"]
        trainer.step = int(header["step"])
        return trainer


def format_log_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_loss_log(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
