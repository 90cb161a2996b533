"""Frequency-selective channel draws for the direct, forward (to the tag) and
backward (tag to receiver) links, plus the derived per-subcarrier responses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from srofdm.numerics import RandomStream, draw_cn

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "pathloss",
    "draw_channel",
    "draw_link_taps",
    "realization_from_taps",
    "composite_cfr",
    "composite_cir",
    "composite_tap_count",
]

DIRECT_MODELS = ("rayleigh", "none")
BACKSCATTER_MODELS = ("cascade", "rayleigh", "awgn", "none")


def pathloss(dist: float, exponent: float, ref: float) -> float:
    """Large-scale gain ref * dist^(-exponent); dist in meters."""
    if dist <= 0:
        raise ValueError(f"distance must be positive, got {dist}")
    return ref * dist ** (-exponent)


@dataclass(frozen=True)
class ChannelConfig:
    """Static channel geometry and small-scale model selection.

    Tap counts are l_d for the direct link and l_1/l_2 for the two backscatter
    hops; the cascaded backscatter response has l_1 + l_2 - 1 taps and is
    additionally delayed by delay_b whole samples. The tag sits on the line
    between transmitter and receiver, so dist_bwd defaults to
    dist_direct - dist_fwd.

    backscatter_model:
      cascade  - both hops Rayleigh, tag response = convolution (default)
      rayleigh - single Rayleigh response with l_1 + l_2 - 1 i.i.d. taps
      awgn     - single deterministic tap carrying the full backscatter gain
      none     - backscatter path removed
    direct_model: rayleigh (default) or none (blocked direct path).
    """

    l_d: int = 4
    l_1: int = 1
    l_2: int = 2
    d_b: int = 1
    dist_direct: float = 200.0
    dist_fwd: float = 3.83
    dist_bwd: Optional[float] = None
    exp_direct: float = 2.5
    exp_fwd: float = 2.0
    exp_bwd: float = 2.0
    pathloss_ref: float = 1e-3
    direct_model: str = "rayleigh"
    backscatter_model: str = "cascade"
    # overrides the product-path gain when sweeping the SNR ratio directly
    beta_backscatter_override: Optional[float] = None

    def __post_init__(self):
        if min(self.l_d, self.l_1, self.l_2) < 1:
            raise ValueError("tap counts must be >= 1")
        if self.d_b < 0:
            raise ValueError("backscatter delay must be >= 0")
        if self.direct_model not in DIRECT_MODELS:
            raise ValueError(f"unknown direct_model {self.direct_model!r}")
        if self.backscatter_model not in BACKSCATTER_MODELS:
            raise ValueError(f"unknown backscatter_model {self.backscatter_model!r}")
        if self.dist_bwd is None:
            object.__setattr__(self, "dist_bwd", self.dist_direct - self.dist_fwd)
        if self.dist_bwd <= 0 or self.dist_fwd <= 0:
            raise ValueError("tag must sit strictly between the endpoints")

    @property
    def beta_direct(self) -> float:
        if self.direct_model == "none":
            return 0.0
        return pathloss(self.dist_direct, self.exp_direct, self.pathloss_ref)

    @property
    def beta_fwd(self) -> float:
        return pathloss(self.dist_fwd, self.exp_fwd, self.pathloss_ref)

    @property
    def beta_bwd(self) -> float:
        return pathloss(self.dist_bwd, self.exp_bwd, self.pathloss_ref)

    @property
    def beta_backscatter(self) -> float:
        """Total average power of the cascaded tag path."""
        if self.backscatter_model == "none":
            return 0.0
        if self.beta_backscatter_override is not None:
            return self.beta_backscatter_override
        return self.beta_fwd * self.beta_bwd

    @property
    def l_b(self) -> int:
        """Tap count of the backscatter response (before the delay shift)."""
        if self.backscatter_model == "none":
            return 0
        if self.backscatter_model == "awgn":
            return 1
        return self.l_1 + self.l_2 - 1

    @property
    def snr_ratio(self) -> float:
        """Backscatter to direct average SNR ratio (linear)."""
        return self.beta_backscatter / self.beta_direct

    def validate_against_cp(self, n_cp: int):
        if self.l_d > n_cp:
            raise ValueError(f"direct taps {self.l_d} exceed CP length {n_cp}")
        if self.l_b + self.d_b > n_cp:
            raise ValueError(
                f"backscatter span {self.l_b}+{self.d_b} exceeds CP length {n_cp}"
            )


def composite_tap_count(cfg: ChannelConfig, xi: int = 0) -> int:
    """Tap count of the combined response seen by the receiver.

    Grows with the secondary symbol timing error xi because the whole
    backscattered waveform arrives that many samples late.
    """
    if cfg.backscatter_model == "none":
        return cfg.l_d
    return max(cfg.l_d, cfg.l_b + cfg.d_b + xi)


@dataclass(frozen=True)
class ChannelRealization:
    """One block-fading draw; reused unchanged for a whole secondary frame.

    All tap arrays may carry leading batch dimensions. H_b includes the
    delay_b leading-zero shift of the cascaded taps, so the composite response
    during symbol n is exactly H_d + c(n) * H_b.
    """

    h_d: np.ndarray
    b: np.ndarray
    g: np.ndarray
    h_b: np.ndarray = field(repr=False)
    H_d: np.ndarray = field(repr=False)
    H_b: np.ndarray = field(repr=False)
    d_b: int = 0
    n: int = 64


def _fft_padded(taps: np.ndarray, n: int, shift: int = 0) -> np.ndarray:
    taps = np.asarray(taps, dtype=complex)
    if shift:
        pad = [(0, 0)] * (taps.ndim - 1) + [(shift, 0)]
        taps = np.pad(taps, pad)
    if taps.shape[-1] > n:
        raise ValueError(f"{taps.shape[-1]} taps do not fit {n} subcarriers")
    return np.fft.fft(taps, n=n, axis=-1)


def realization_from_taps(h_d, b, g, d_b: int, n: int) -> ChannelRealization:
    """Assemble the derived responses from explicit tap vectors.

    h_b is the linear convolution of b and g; the per-subcarrier backscatter
    response equals the product of the two hop responses times the delay_b
    phase ramp, which the tests verify against a direct padded DFT.
    """
    h_d = np.asarray(h_d, dtype=complex)
    b = np.asarray(b, dtype=complex)
    g = np.asarray(g, dtype=complex)
    l_b = b.shape[-1] + g.shape[-1] - 1
    # batched linear convolution of the two short tap vectors
    h_b = np.zeros(b.shape[:-1] + (l_b,), dtype=complex)
    for i in range(b.shape[-1]):
        h_b[..., i : i + g.shape[-1]] += b[..., i : i + 1] * g
    return ChannelRealization(
        h_d=h_d,
        b=b,
        g=g,
        h_b=h_b,
        H_d=_fft_padded(h_d, n),
        H_b=_fft_padded(h_b, n, shift=d_b),
        d_b=d_b,
        n=n,
    )


def draw_link_taps(cfg: ChannelConfig, stream: RandomStream):
    """Draw the three tap vectors (h_d, b, g) for one realization: i.i.d.
    Rayleigh taps with equal power per tap, total power per link equal to its
    large-scale gain. All fading taps come from one generator call; the
    response derivation is deferred so Monte Carlo batches can stack taps
    before one vectorized transform."""
    n_direct = cfg.l_d if cfg.direct_model == "rayleigh" else 0
    if cfg.backscatter_model == "cascade":
        n_fwd, n_bwd = cfg.l_1, cfg.l_2
    elif cfg.backscatter_model == "rayleigh":
        n_fwd, n_bwd = cfg.l_b, 0
    else:
        n_fwd = n_bwd = 0
    total = n_direct + n_fwd + n_bwd
    unit = draw_cn(stream, total, 1.0) if total else np.empty(0, dtype=complex)

    if n_direct:
        h_d = unit[:n_direct] * np.sqrt(cfg.beta_direct / cfg.l_d)
    else:
        h_d = np.zeros(cfg.l_d, dtype=complex)

    beta_b = cfg.beta_backscatter
    if cfg.backscatter_model == "cascade":
        scale = 1.0 if cfg.beta_backscatter_override is None else (
            beta_b / (cfg.beta_fwd * cfg.beta_bwd)
        )
        b = unit[n_direct : n_direct + n_fwd] * np.sqrt(scale * cfg.beta_fwd / cfg.l_1)
        g = unit[n_direct + n_fwd :] * np.sqrt(cfg.beta_bwd / cfg.l_2)
    elif cfg.backscatter_model == "rayleigh":
        b = unit[n_direct:] * np.sqrt(beta_b / cfg.l_b)
        g = np.ones(1, dtype=complex)
    elif cfg.backscatter_model == "awgn":
        b = np.array([np.sqrt(beta_b)], dtype=complex)
        g = np.ones(1, dtype=complex)
    else:  # none
        b = np.zeros(1, dtype=complex)
        g = np.ones(1, dtype=complex)
    return h_d, b, g


def draw_channel(cfg: ChannelConfig, stream: RandomStream, n: int = 64) -> ChannelRealization:
    """Draw one realization and derive its per-subcarrier responses."""
    h_d, b, g = draw_link_taps(cfg, stream)
    return realization_from_taps(h_d, b, g, cfg.d_b, n)


def composite_cfr(real: ChannelRealization, c) -> np.ndarray:
    """Per-subcarrier combined response H_d + c * H_b for secondary symbol c."""
    c = np.asarray(c)
    if np.any(np.abs(c) > 1 + 1e-12):
        raise ValueError("reflection coefficient magnitude must not exceed 1")
    return real.H_d + c[..., None] * real.H_b if c.ndim else real.H_d + c * real.H_b


def composite_cir(real: ChannelRealization, c, taps: int, xi: int = 0) -> np.ndarray:
    """Time-domain combined response: padded direct taps plus the backscatter
    taps shifted by the propagation delay and the timing error xi."""
    l_d = real.h_d.shape[-1]
    l_b = real.h_b.shape[-1]
    shift = real.d_b + xi
    if taps < max(l_d, l_b + shift):
        raise ValueError(f"{taps} taps cannot hold the composite response")
    c = np.asarray(c)
    batch = np.broadcast_shapes(real.h_d.shape[:-1], c.shape)
    h = np.zeros(batch + (taps,), dtype=complex)
    h[..., :l_d] += real.h_d
    h[..., shift : shift + l_b] += c[..., None] * real.h_b
    return h
