"""AdaIN style transfer between the source and target domains.

A small convolutional encoder stands in for VGG: it is first fitted as an
autoencoder on images from both domains, then frozen while the decoder is
trained with the usual AdaIN content and style losses.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .heatmap import ConfigError

EPS = 1e-5
WARNINGS: Counter = Counter()


def channel_stats(x: torch.Tensor, eps: float = EPS):
    """Per-sample, per-channel mean and epsilon-stabilized std of ``(B, C, H, W)``."""
    b, c = x.shape[:2]
    flat = x.reshape(b, c, -1)
    mean = flat.mean(-1)
    std = (flat.var(-1, unbiased=False) + eps).sqrt()
    return mean.view(b, c, 1, 1), std.view(b, c, 1, 1)


def adain(content: torch.Tensor, style: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Re-normalize content features to the style features' channel statistics.

    Accepts ``(C, H, W)`` or ``(B, C, H, W)`` tensors; spatial sizes may differ.
    """
    squeeze = content.dim() == 3
    if squeeze:
        content, style = content.unsqueeze(0), style.unsqueeze(0)
    if content.shape[:2] != style.shape[:2]:
        raise ValueError(f"channel mismatch: content {tuple(content.shape)} vs style {tuple(style.shape)}")
    c_mean, c_std = channel_stats(content, eps)
    s_mean, s_std = channel_stats(style, eps)
    out = s_std * (content - c_mean) / c_std + s_mean
    return out[0] if squeeze else out


@dataclass
class StyleNetConfig:
    widths: tuple = (16, 32, 64, 128)
    # stages that halve resolution; the remaining ones keep it
    downsample: tuple = (False, True, True, False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.downsample = tuple(bool(d) for d in self.downsample)
        if len(self.widths) != len(self.downsample):
            raise ConfigError("widths and downsample must have equal length")


@dataclass
class StyleTrainConfig:
    encoder_steps: int = 300
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    style_weight: float = 0.1
    seed: int = 0


class Encoder(nn.Module):
    def __init__(self, cfg: StyleNetConfig):
        super().__init__()
        stages, cin = [], 3
        for w, down in zip(cfg.widths, cfg.downsample):
            stages.append(nn.Sequential(
                nn.Conv2d(cin, w, 3, stride=2 if down else 1, padding=1, padding_mode="reflect"),
                nn.ReLU(inplace=True),
                nn.Conv2d(w, w, 3, padding=1, padding_mode="reflect"),
                nn.ReLU(inplace=True),
            ))
            cin = w
        self.stages = nn.ModuleList(stages)

    def forward(self, x, all_stages=False):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats if all_stages else x


class Decoder(nn.Module):
    def __init__(self, cfg: StyleNetConfig):
        super().__init__()
        layers = []
        widths = list(cfg.widths)
        for i in reversed(range(len(widths))):
            cout = widths[i - 1] if i > 0 else widths[0]
            layers += [nn.Conv2d(widths[i], cout, 3, padding=1, padding_mode="reflect"), nn.ReLU(inplace=True)]
            if cfg.downsample[i]:
                layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
        layers.append(nn.Conv2d(widths[0], 3, 3, padding=1, padding_mode="reflect"))
        self.net = nn.Sequential(*layers)

    def forward(self, t):
        return self.net(t)


@dataclass
class StyleModel:
    encoder: Encoder
    decoder: Decoder
    config: StyleNetConfig = field(default_factory=StyleNetConfig)
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, config: StyleNetConfig = None, seed: int = 0) -> "StyleModel":
        config = config or StyleNetConfig()
        torch.manual_seed(seed)
        model = cls(Encoder(config), Decoder(config), config)
        model.eval()
        return model

    def eval(self):
        self.encoder.eval()
        self.decoder.eval()
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        return self

    def state_tensors(self) -> dict:
        out = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        return out

    def save(self, path, extra=None):
        from .checkpoint import save_container

        header = {"kind": "style_model", "config": asdict(self.config), "history": self.history}
        header.update(extra or {})
        save_container(path, self.state_tensors(), header)

    @classmethod
    def load(cls, path) -> "StyleModel":
        from .checkpoint import load_container

        tensors, header = load_container(path)
        if header.get("kind") != "style_model":
            raise ValueError(f"{path} is not a style model checkpoint")
        model = cls.create(StyleNetConfig(**header["config"]))
        model.encoder.load_state_dict({k[8:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("encoder.")})
        model.decoder.load_state_dict({k[8:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("decoder.")})
        model.history = header.get("history", [])
        return model.eval()


def stylize(content_img: torch.Tensor, style_img: torch.Tensor, alpha, model: StyleModel,
            return_decoder_input: bool = False):
    """``g(alpha * adain(f(c), f(s)) + (1 - alpha) * f(c))`` for image batches.

    ``alpha`` is a scalar or a per-sample sequence in ``[0, 1]``. The output is
    clamped to the valid pixel range.
    """
    squeeze = content_img.dim() == 3
    if squeeze:
        content_img, style_img = content_img.unsqueeze(0), style_img.unsqueeze(0)
    a = torch.as_tensor(alpha, dtype=content_img.dtype)
    if torch.any(a < 0) or torch.any(a > 1):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if a.dim() == 1:
        a = a.view(-1, 1, 1, 1)
    with torch.no_grad():
        fc = model.encoder(content_img)
        t = adain(fc, model.encoder(style_img))
        mixed = a * t + (1 - a) * fc
        out = model.decoder(mixed).clamp(0.0, 1.0)
    out = out[0] if squeeze else out
    return (out, mixed) if return_decoder_input else out


def maybe_stylize(imgs: torch.Tensor, style_pool, rng: np.random.Generator, prob: float, model: StyleModel):
    """Stylize each image of a batch with probability ``prob``.

    Style references are drawn uniformly from ``style_pool`` (an indexable
    collection of ``(C, H, W)`` images from the opposite domain) and the
    content/style trade-off ``alpha`` from U(0, 1). Returns
    ``(images, stylized_mask, alphas)``.
    """
    squeeze = imgs.dim() == 3
    batch = imgs.unsqueeze(0) if squeeze else imgs
    n = batch.shape[0]
    flips = rng.random(n) < prob
    alphas = rng.uniform(0.0, 1.0, size=n)
    pool_size = len(style_pool) if style_pool is not None else 0
    if pool_size == 0:
        if flips.any():
            WARNINGS["empty_style_pool"] += 1
        flips[:] = False
    if model is None:
        flips[:] = False
    picks = rng.integers(0, max(pool_size, 1), size=n)
    out = batch
    if flips.any():
        idx = np.flatnonzero(flips)
        styles = torch.stack([torch.as_tensor(style_pool[int(picks[i])], dtype=batch.dtype) for i in idx])
        styled = stylize(batch[idx], styles, alphas[idx], model)
        out = batch.clone()
        out[idx] = styled
    alphas = np.where(flips, alphas, np.nan)
    return (out[0] if squeeze else out), flips, alphas


def _style_loss(out_feats, style_feats):
    loss = 0.0
    for fo, fs in zip(out_feats, style_feats):
        mo, so = channel_stats(fo)
        ms, ss = channel_stats(fs)
        loss = loss + F.mse_loss(mo, ms) + F.mse_loss(so, ss)
    return loss


def style_pretrain(source_set, target_set, config: StyleTrainConfig = None, net: StyleNetConfig = None,
                   progress=None) -> StyleModel:
    """Fit the encoder as an autoencoder, freeze it, then train the decoder.

    ``source_set`` and ``target_set`` are ``(N, C, H, W)`` float arrays of
    unlabeled images. Each decoder batch pairs contents from one domain with
    styles from the other, in both directions. The per-step losses of the
    decoder phase are stored in ``model.history``.
    """
    config = config or StyleTrainConfig()
    if len(source_set) == 0 or len(target_set) == 0:
        raise ConfigError("style pretraining needs images from both domains")
    rng = np.random.default_rng(config.seed)
    model = StyleModel.create(net, seed=config.seed)
    domains = [torch.as_tensor(np.asarray(source_set), dtype=torch.float32),
               torch.as_tensor(np.asarray(target_set), dtype=torch.float32)]
    bs = config.batch_size
    half = max(bs // 2, 1)

    enc, dec = model.encoder, model.decoder
    if config.encoder_steps > 0:
        for p in enc.parameters():
            p.requires_grad_(True)
        enc.train()
        dec.train()
        opt = torch.optim.Adam(list(enc.parameters()) + list(dec.parameters()), lr=config.lr)
        for step in range(config.encoder_steps):
            x = torch.cat([d[rng.integers(0, len(d), size=half)] for d in domains])
            loss = F.mse_loss(dec(enc(x)), x)
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.encoder_loss = float(loss.detach())
    for p in enc.parameters():
        p.requires_grad_(False)
    enc.eval()
    dec.train()
    opt = torch.optim.Adam(dec.parameters(), lr=config.lr)
    history = []
    for step in range(config.steps):
        # first half: source content with target style; second half: the reverse
        content = torch.cat([domains[0][rng.integers(0, len(domains[0]), size=half)],
                             domains[1][rng.integers(0, len(domains[1]), size=half)]])
        style = torch.cat([domains[1][rng.integers(0, len(domains[1]), size=half)],
                           domains[0][rng.integers(0, len(domains[0]), size=half)]])
        with torch.no_grad():
            fc = enc(content)
            style_feats = enc(style, all_stages=True)
            t = adain(fc, style_feats[-1])
        out = dec(t)
        out_feats = enc(out, all_stages=True)
        content_loss = F.mse_loss(out_feats[-1], t)
        s_loss = _style_loss(out_feats, style_feats)
        loss = content_loss + config.style_weight * s_loss
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "content": content_loss.item(), "style": s_loss.item(),
                        "style_weight": config.style_weight, "total": loss.item()})
        if progress is not None:
            progress(history[-1])
    model.history = history
    return model.eval()
