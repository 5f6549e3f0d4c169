"""Conditional U-Net surrogate and its training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .fields import ConditioningInput, FieldState, ParameterError, to_tensor
from .nn import (ConditioningHead, ConfigurationError, ConvSelfAttention, PhysicsConv2d,
                 ThetaScaling, film_scale, relative_l2_loss)

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    """Architecture plus the conditioning normalisation constants.

    ``dtau_unit`` is the physical (dimensionless) time of one ``dtau`` unit,
    i.e. the snapshot spacing of the training data.
    """

    levels: int = 4
    base_channels: int = 8
    in_channels: int = 3
    out_channels: int = 3
    attention_in_bottleneck: bool = True
    norm: str = "none"
    norm_groups: int = 8
    head_hidden: int = 128
    dtau_min: float = 1.0
    dtau_max: float = 4.0
    cA_min: float = 0.2
    cA_max: float = 0.4
    dtau_unit: float = 1.0

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1:
            raise ConfigurationError("levels and base_channels must be positive")
        if self.norm not in ("group", "none"):
            raise ConfigurationError(f"norm must be 'group' or 'none', got {self.norm!r}")
        if self.attention_in_bottleneck and self.widths[-1] % 8:
            raise ConfigurationError("bottleneck channels must be divisible by 8 for attention")
        if self.norm == "group" and any(w % min(self.norm_groups, w) for w in self.widths):
            raise ConfigurationError("channel widths must be divisible by norm_groups")
        ThetaScaling(self.dtau_min, self.dtau_max, self.cA_min, self.cA_max)

    @property
    def widths(self) -> tuple[int, ...]:
        """Channel widths of the encoder levels followed by the bottleneck."""
        return tuple(self.base_channels * 2**i for i in range(self.levels + 1))

    @property
    def multiple(self) -> int:
        return 2**self.levels

    @property
    def scaling(self) -> ThetaScaling:
        return ThetaScaling(self.dtau_min, self.dtau_max, self.cA_min, self.cA_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d)


def _norm(cfg: UNetConfig, ch: int) -> nn.Module:
    if cfg.norm == "none":
        return nn.Identity()
    return nn.GroupNorm(min(cfg.norm_groups, ch), ch)


class ConvBlock(nn.Module):
    """(conv3x3 -> norm -> SiLU) twice."""

    def __init__(self, cfg: UNetConfig, cin: int, cout: int):
        super().__init__()
        self.conv1 = PhysicsConv2d(cin, cout)
        self.norm1 = _norm(cfg, cout)
        self.conv2 = PhysicsConv2d(cout, cout)
        self.norm2 = _norm(cfg, cout)

    def forward(self, x):
        x = F.silu(self.norm1(self.conv1(x)))
        return F.silu(self.norm2(self.conv2(x)))


class UpBlock(nn.Module):
    def __init__(self, cfg: UNetConfig, cin: int, cout: int):
        super().__init__()
        self.up = PhysicsConv2d(cin, cout)
        self.block = ConvBlock(cfg, 2 * cout, cout)

    def forward(self, x, skip):
        x = F.silu(self.up(F.interpolate(x, scale_factor=2, mode="nearest")))
        return self.block(torch.cat([skip, x], dim=1))


class ConditionalUNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        w = config.widths
        L = config.levels
        self.enc = nn.ModuleList(ConvBlock(config, config.in_channels if i == 0 else w[i - 1], w[i])
                                 for i in range(L))
        self.bottleneck = ConvBlock(config, w[L - 1], w[L])
        self.attn = ConvSelfAttention(w[L]) if config.attention_in_bottleneck else None
        self.dec = nn.ModuleList(UpBlock(config, w[i + 1], w[i]) for i in range(L))
        self.head = nn.Conv2d(w[0], config.out_channels, 1)
        nn.init.kaiming_normal_(self.head.weight, mode="fan_in", nonlinearity="relu")
        nn.init.zeros_(self.head.bias)
        self.cond = ConditioningHead(w, hidden=config.head_hidden)

    def forward(self, x: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        """``x`` is B x 3 x H x W, ``theta`` B x 2 normalised conditioning."""
        m = self.config.multiple
        H, W = x.shape[-2:]
        if H % m or W % m:
            raise ConfigurationError(f"input {H}x{W} not divisible by 2^levels = {m}")
        scales = self.cond(theta)
        skips = []
        for i, block in enumerate(self.enc):
            x = film_scale(block(x), scales[i])
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        if self.attn is not None:
            x = self.attn(x)
        x = film_scale(x, scales[-1])
        for i in reversed(range(self.config.levels)):
            x = self.dec[i](x, skips[i])
        y = torch.sigmoid(self.head(x))
        # sigmoid rounds to exactly 0 or 1 for large logits; keep outputs strictly inside (0, 1)
        fi = torch.finfo(y.dtype)
        return y.clamp(fi.tiny, 1.0 - fi.eps / 2)


def architecture_manifest(config: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) of every trainable array, lexicographically ordered.

    Derived from the configuration alone so it can be checked against an
    instantiated network.
    """
    w = config.widths
    L = config.levels
    entries: dict[str, tuple[int, ...]] = {}

    def conv(prefix, cin, cout, k=3):
        entries[f"{prefix}.weight"] = (cout, cin, k, k)
        entries[f"{prefix}.bias"] = (cout,)

    def norm(prefix, ch):
        if config.norm == "group":
            entries[f"{prefix}.weight"] = (ch,)
            entries[f"{prefix}.bias"] = (ch,)

    def block(prefix, cin, cout):
        conv(f"{prefix}.conv1", cin, cout)
        norm(f"{prefix}.norm1", cout)
        conv(f"{prefix}.conv2", cout, cout)
        norm(f"{prefix}.norm2", cout)

    for i in range(L):
        block(f"enc.{i}", config.in_channels if i == 0 else w[i - 1], w[i])
        conv(f"dec.{i}.up", w[i + 1], w[i])
        block(f"dec.{i}.block", 2 * w[i], w[i])
    block("bottleneck", w[L - 1], w[L])
    if config.attention_in_bottleneck:
        entries["attn.q"] = (w[L] // 8, w[L], 1, 1)
        entries["attn.k"] = (w[L] // 8, w[L], 1, 1)
        entries["attn.v"] = (w[L], w[L], 1, 1)
        entries["attn.o"] = (w[L], w[L], 1, 1)
    conv("head", w[0], config.out_channels, k=1)
    hid = config.head_hidden
    entries["cond.hidden1.weight"] = (hid, 2)
    entries["cond.hidden1.bias"] = (hid,)
    entries["cond.hidden2.weight"] = (hid, hid)
    entries["cond.hidden2.bias"] = (hid,)
    for i, s in enumerate(w):
        entries[f"cond.out.{i}.weight"] = (s, hid)
        entries[f"cond.out.{i}.bias"] = (s,)
    return sorted(entries.items())


def build_model(config: UNetConfig, seed: int = 0, dtype=torch.float32) -> ConditionalUNet:
    torch.manual_seed(seed)
    return ConditionalUNet(config).to(dtype)


def get_params(model: nn.Module) -> dict[str, np.ndarray]:
    """ModelParams: name -> float64 array copy, in manifest order."""
    named = dict(model.named_parameters())
    return {name: named[name].detach().cpu().double().numpy().copy() for name in sorted(named)}


def set_params(model: ConditionalUNet, params: dict[str, np.ndarray]) -> None:
    """Load a ModelParams map; names and shapes must match the manifest exactly."""
    manifest = dict(architecture_manifest(model.config))
    missing = set(manifest) - set(params)
    orphan = set(params) - set(manifest)
    if missing or orphan:
        raise ConfigurationError(f"parameter map mismatch: missing={sorted(missing)} orphan={sorted(orphan)}")
    named = dict(model.named_parameters())
    with torch.no_grad():
        for name, shape in manifest.items():
            a = np.asarray(params[name])
            if tuple(a.shape) != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {a.shape}")
            named[name].copy_(torch.as_tensor(a, dtype=named[name].dtype))


def theta_tensor(theta, config: UNetConfig, dtype=torch.float32) -> torch.Tensor:
    """Normalised B x 2 conditioning tensor from ConditioningInput(s) or an n x 2 array."""
    if isinstance(theta, ConditioningInput):
        arr = np.array([[theta.dtau, theta.cA_ref]])
    elif isinstance(theta, (list, tuple)) and theta and isinstance(theta[0], ConditioningInput):
        arr = np.array([[t.dtau, t.cA_ref] for t in theta])
    else:
        arr = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    sc = config.scaling
    d, c = sc.normalize(arr[:, 0], arr[:, 1])
    return torch.as_tensor(np.stack([d, c], axis=1), dtype=dtype)


def forward(t, theta: ConditioningInput, params: dict[str, np.ndarray], config: UNetConfig,
            dtype=torch.float64) -> np.ndarray:
    """Pure functional forward pass: 3 x H x W array in, 3 x H x W array in (0, 1) out."""
    model = ConditionalUNet(config).to(dtype)
    set_params(model, params)
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(t), dtype=dtype)[None]
        return model(x, theta_tensor(theta, config, dtype))[0].numpy()


# ---------------------------------------------------------------- data

@dataclass
class PairDataset:
    """Training samples: inputs X (n,3,H,W), conditioning theta (n,2) = (gap, cA_ref), targets Y."""

    X: np.ndarray
    theta: np.ndarray
    Y: np.ndarray
    index: list = field(default_factory=list)  # (trajectory, i, j) per sample

    def __len__(self):
        return len(self.X)


def training_pairs(trajectories: Sequence[tuple[float, Sequence[FieldState]]],
                   k_min: int, k_max: int, dtype=np.float32) -> PairDataset:
    """Every snapshot pair (i, i + gap) with gap in [k_min, k_max].

    ``trajectories`` is a sequence of ``(cA_ref, snapshots)``. Order: by
    trajectory, then gap, then start index.
    """
    if k_min < 1 or k_max < k_min:
        raise DatasetError(f"invalid gap range [{k_min}, {k_max}]")
    xs, ys, th, idx = [], [], [], []
    for ti, (ca, snaps) in enumerate(trajectories):
        arrays = [to_tensor(s).astype(dtype) for s in snaps]
        for gap in range(k_min, k_max + 1):
            for i in range(len(arrays) - gap):
                xs.append(arrays[i])
                ys.append(arrays[i + gap])
                th.append((gap, ca))
                idx.append((ti, i, i + gap))
    if not xs:
        raise DatasetError("no snapshot pairs fall inside the gap range")
    return PairDataset(np.stack(xs), np.asarray(th, dtype=np.float64), np.stack(ys), idx)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_updates: int | None = None
    target_loss: float | None = None  # stop once an epoch's mean loss reaches this
    input_noise: float = 0.0  # std of Gaussian noise added to training inputs

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1 or self.input_noise < 0:
            raise ParameterError("learning_rate >= 0, epochs >= 1, batch_size >= 1 and input_noise >= 0 required")


def train(dataset: PairDataset, train_config: TrainConfig, unet_config: UNetConfig,
          model: ConditionalUNet | None = None, dtype=torch.float32, progress=None):
    """Adam on the batch-mean relative L2 loss.

    Returns ``(model, history)`` where ``history`` holds the mean loss of each
    epoch and ``updates_`` on the model counts optimizer steps. Deterministic
    for a fixed seed.
    """
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    if model is None:
        model = build_model(unet_config, seed=train_config.seed, dtype=dtype)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate,
                           betas=(train_config.beta1, train_config.beta2), eps=train_config.eps)
    rng = np.random.default_rng(train_config.seed)
    noise_gen = torch.Generator().manual_seed(train_config.seed)
    X = torch.as_tensor(dataset.X, dtype=dtype)
    Y = torch.as_tensor(dataset.Y, dtype=dtype)
    T = theta_tensor(dataset.theta, unet_config, dtype)
    n = len(dataset)
    history = []
    updates = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for b, start in enumerate(range(0, n, train_config.batch_size)):
            sel = torch.as_tensor(order[start:start + train_config.batch_size])
            xb = X[sel]
            if train_config.input_noise > 0:  # robustness to the model's own rollout errors
                xb = xb + train_config.input_noise * torch.randn(xb.shape, generator=noise_gen, dtype=dtype)
            loss = relative_l2_loss(model(xb, T[sel]), Y[sel])
            if not torch.isfinite(loss):
                norms = {k: float(v.detach().norm()) for k, v in model.named_parameters()}
                worst = max(norms, key=lambda k: norms[k] if math.isfinite(norms[k]) else math.inf)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}; "
                                    f"largest parameter norm {worst}={norms[worst]:.3g}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(sel)
            seen += len(sel)
            updates += 1
            if train_config.max_updates and updates >= train_config.max_updates:
                break
        history.append(total / seen)
        log.info("epoch %d loss %.5f", epoch, history[-1])
        if progress is not None:
            progress(epoch, history[-1])
        if train_config.max_updates and updates >= train_config.max_updates:
            break
        if train_config.target_loss is not None and history[-1] <= train_config.target_loss:
            break
    model.eval()
    model.updates_ = updates
    return model, history
