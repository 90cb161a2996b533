"""Transmit chain and observation synthesis: Gray-mapped alphabets, comb-pilot
OFDM frames, secondary preamble framing, and the noisy receive paths.

Two receive paths produce the same frequency-domain observations: a direct
per-subcarrier model for synchronized operation, and a full sample-level
path (IDFT, cyclic prefix, tap convolutions, tag gating) that also injects a
secondary symbol timing error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from srofdm.channel import ChannelConfig, ChannelRealization, composite_tap_count
from srofdm.numerics import RandomStream, draw_cn

__all__ = [
    "QamAlphabet",
    "PskAlphabet",
    "SystemConfig",
    "FrameObservation",
    "default_pilot_indices",
    "default_preamble",
    "modulate_primary",
    "secondary_frame",
    "frequency_domain_rx",
    "sample_level_rx",
]

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _gray(x: np.ndarray) -> np.ndarray:
    return x ^ (x >> 1)


def _nearest_point(z: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exhaustive nearest-point scan, argmin of |z - p|^2 over the alphabet.

    Reference decision rule; the alphabets use closed-form slicers that the
    tests pin to this scan.
    """
    z = np.asarray(z)
    d = np.abs(z[..., None] - points) ** 2
    return np.argmin(d, axis=-1)


@dataclass(frozen=True)
class QamAlphabet:
    """Square QAM with unit average power and independent Gray coding of the
    I and Q rails. Symbol index i = (row * sqrt(M) + col); labels carry the
    Gray bits used for bit-error counting."""

    order: int
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, order: int) -> "QamAlphabet":
        m = int(round(np.sqrt(order)))
        if m * m != order or order < 4 or (order & (order - 1)):
            raise ValueError(f"square QAM order must be a power of 4, got {order}")
        levels = 2.0 * np.arange(m) - (m - 1)
        levels /= np.sqrt(2.0 * (order - 1) / 3.0)  # unit average symbol power
        half_bits = m.bit_length() - 1
        rail_labels = _gray(np.arange(m))
        re_idx, im_idx = np.divmod(np.arange(order), m)
        points = levels[re_idx] + 1j * levels[im_idx]
        labels = (rail_labels[re_idx] << half_bits) | rail_labels[im_idx]
        return cls(order=order, points=points, labels=labels.astype(np.int64))

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1

    def detect(self, z: np.ndarray) -> np.ndarray:
        """Nearest-point decision; rail slicing, exact for the square grid."""
        z = np.asarray(z)
        m = int(round(np.sqrt(self.order)))
        scale = np.sqrt(2.0 * (self.order - 1) / 3.0)
        re_idx = np.clip(np.rint((z.real * scale + (m - 1)) / 2.0), 0, m - 1)
        im_idx = np.clip(np.rint((z.imag * scale + (m - 1)) / 2.0), 0, m - 1)
        return (re_idx * m + im_idx).astype(np.int64)

    def bit_errors(self, tx_idx: np.ndarray, rx_idx: np.ndarray) -> np.ndarray:
        return _POPCOUNT[self.labels[tx_idx] ^ self.labels[rx_idx]]


@dataclass(frozen=True)
class PskAlphabet:
    """M-ary PSK on the unit circle with Gray labels; index i sits at angle
    2*pi*i/M."""

    order: int
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, order: int) -> "PskAlphabet":
        if order < 2 or (order & (order - 1)):
            raise ValueError(f"PSK order must be a power of two >= 2, got {order}")
        idx = np.arange(order)
        points = np.exp(2j * np.pi * idx / order)
        return cls(order=order, points=points, labels=_gray(idx).astype(np.int64))

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1

    def detect(self, z: np.ndarray) -> np.ndarray:
        """Nearest-point decision; angle quantization, exact on the circle."""
        z = np.asarray(z)
        sector = np.rint(np.angle(z) * self.order / (2.0 * np.pi))
        return np.mod(sector, self.order).astype(np.int64)

    def bit_errors(self, tx_idx: np.ndarray, rx_idx: np.ndarray) -> np.ndarray:
        return _POPCOUNT[self.labels[tx_idx] ^ self.labels[rx_idx]]


def default_pilot_indices(n: int, n_p: int) -> tuple:
    """Equally spaced comb starting at subcarrier 0."""
    if n_p < 1 or n % n_p:
        raise ValueError(f"{n_p} pilots do not divide {n} subcarriers evenly")
    return tuple(range(0, n, n // n_p))


def default_preamble(t: int) -> tuple:
    """Zero-sum unit-modulus preamble: T-th roots of unity."""
    if t < 2:
        raise ValueError("preamble needs at least two symbols")
    return tuple(np.exp(2j * np.pi * np.arange(t) / t))


@dataclass(frozen=True)
class SystemConfig:
    """Everything the link needs beyond the channel: frame geometry, pilot
    layout, alphabets, transmit and noise power (linear watts)."""

    n: int = 64
    n_cp: int = 16
    pilot_indices: tuple = ()
    pilot_values: tuple = ()
    m_s: int = 16
    m_c: int = 8
    t_preamble: int = 2
    preamble: tuple = ()
    n_max: int = 10
    p_t: float = 1.0
    sigma2: float = 1.0
    # gate value assumed for the tag before the frame starts (idle reflector)
    preceding_gate_symbol: complex = 1.0

    def __post_init__(self):
        if not self.preamble:
            pre = (1.0 + 0j, -1.0 + 0j) if self.t_preamble == 2 else default_preamble(self.t_preamble)
            object.__setattr__(self, "preamble", pre)
        if self.pilot_indices and not self.pilot_values:
            object.__setattr__(
                self, "pilot_values", (1.0 + 0j,) * len(self.pilot_indices)
            )
        self._check()

    def _check(self):
        idx = np.asarray(self.pilot_indices, dtype=int)
        if idx.size:
            if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.n:
                raise ValueError("pilot indices must be strictly increasing within range")
            vals = np.asarray(self.pilot_values)
            if vals.shape != idx.shape:
                raise ValueError("pilot_values length must match pilot_indices")
            if np.max(np.abs(np.abs(vals) - 1)) > 1e-12:
                raise ValueError("pilot values must have unit modulus")
        if self.t_preamble < 2:
            raise ValueError("preamble length must be >= 2")
        pre = np.asarray(self.preamble)
        if pre.shape != (self.t_preamble,):
            raise ValueError("preamble length must equal t_preamble")
        if np.max(np.abs(np.abs(pre) - 1)) > 1e-12:
            raise ValueError("preamble symbols must have unit modulus")
        if abs(pre.sum()) > 1e-9:
            raise ValueError("preamble symbols must sum to zero")
        if self.n_max <= self.t_preamble:
            raise ValueError("frame must contain data symbols after the preamble")
        if self.p_t <= 0 or self.sigma2 < 0:
            raise ValueError("powers must be positive (noise may be zero)")
        QamAlphabet.build(self.m_s)
        PskAlphabet.build(self.m_c)

    @property
    def n_p(self) -> int:
        return len(self.pilot_indices)

    @cached_property
    def pilot_index_array(self) -> np.ndarray:
        return np.asarray(self.pilot_indices, dtype=np.int64)

    @cached_property
    def pilot_value_array(self) -> np.ndarray:
        return np.asarray(self.pilot_values, dtype=complex)

    @cached_property
    def data_indices(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.pilot_indices)] = False
        return np.flatnonzero(mask)

    @property
    def n_data(self) -> int:
        return self.n - self.n_p

    @cached_property
    def qam(self) -> QamAlphabet:
        return QamAlphabet.build(self.m_s)

    @cached_property
    def psk(self) -> PskAlphabet:
        return PskAlphabet.build(self.m_c)

    @property
    def n_data_symbols(self) -> int:
        """Secondary symbols carrying data (preamble excluded)."""
        return self.n_max - self.t_preamble

    @property
    def symbol_period(self) -> int:
        return self.n + self.n_cp

    def validate_with_channel(self, ch: ChannelConfig, xi: int = 0):
        """Joint feasibility: taps fit the CP and the pilot comb can resolve
        the synchronized composite response."""
        ch.validate_against_cp(self.n_cp)
        taps = composite_tap_count(ch)
        if self.n_p and self.n_p < taps:
            raise ValueError(
                f"{self.n_p} pilots cannot resolve {taps} composite taps"
            )
        if xi < 0 or xi >= self.n + self.n_cp:
            raise ValueError(f"sync error {xi} outside [0, {self.n + self.n_cp})")


@dataclass(frozen=True)
class FrameObservation:
    """Frequency-domain receiver samples for one secondary frame plus the
    ground truth needed for error counting and genie receivers. All arrays
    may carry leading batch dimensions."""

    y: np.ndarray = field(repr=False)
    s_indices: np.ndarray = field(repr=False)  # (..., n_max, n_data) data positions
    s_values: np.ndarray = field(repr=False)  # (..., n_max, n) including pilots
    c_indices: np.ndarray = field(repr=False)  # (..., n_max - T)
    c_values: np.ndarray = field(repr=False)  # (..., n_max) preamble + data
    realization: ChannelRealization = None
    xi: int = 0


def modulate_primary(data_indices, cfg: SystemConfig, stream: Optional[RandomStream] = None):
    """Build frame symbol vectors: pilots at the comb positions, Gray QAM at
    the rest. Pass data_indices=None to draw them from the stream.

    Returns (s_values, data_indices) with s_values shaped (..., n_sym, n).
    """
    if data_indices is None:
        if stream is None:
            raise ValueError("need a stream when data indices are not given")
        data_indices = stream.integers(0, cfg.m_s, size=(cfg.n_max, cfg.n_data))
    data_indices = np.asarray(data_indices)
    s = np.empty(data_indices.shape[:-1] + (cfg.n,), dtype=complex)
    if cfg.n_p:
        s[..., cfg.pilot_index_array] = cfg.pilot_value_array
    s[..., cfg.data_indices] = cfg.qam.points[data_indices]
    return s, data_indices


def secondary_frame(c_indices, cfg: SystemConfig, stream: Optional[RandomStream] = None):
    """Preamble followed by Gray PSK data symbols.

    Returns (c_values, c_indices) with c_values shaped (..., n_max).
    """
    if c_indices is None:
        if stream is None:
            raise ValueError("need a stream when secondary indices are not given")
        c_indices = stream.integers(0, cfg.m_c, size=cfg.n_data_symbols)
    c_indices = np.asarray(c_indices)
    c = np.empty(c_indices.shape[:-1] + (cfg.n_max,), dtype=complex)
    c[..., : cfg.t_preamble] = np.asarray(cfg.preamble)
    c[..., cfg.t_preamble :] = cfg.psk.points[c_indices]
    return c, c_indices


def _observation(y, s_values, s_indices, c_values, c_indices, realization, xi=0):
    return FrameObservation(
        y=y,
        s_indices=s_indices,
        s_values=s_values,
        c_indices=c_indices,
        c_values=c_values,
        realization=realization,
        xi=xi,
    )


def frequency_domain_rx(
    s_values,
    c_values,
    realization: ChannelRealization,
    cfg: SystemConfig,
    stream: Optional[RandomStream] = None,
    *,
    s_indices=None,
    c_indices=None,
    noise=None,
) -> FrameObservation:
    """Synchronized observation straight from the per-subcarrier model:
    Y(n) = sqrt(P) * diag(s(n)) * (H_d + c(n) H_b) + U(n)."""
    s_values = np.asarray(s_values)
    c_values = np.asarray(c_values)
    h = realization.H_d[..., None, :] + c_values[..., :, None] * realization.H_b[..., None, :]
    if noise is None:
        if cfg.sigma2 > 0:
            if stream is None:
                raise ValueError("need a stream or explicit noise")
            noise = draw_cn(stream, s_values.size, cfg.sigma2).reshape(s_values.shape)
        else:
            noise = 0.0
    y = np.sqrt(cfg.p_t) * s_values * h + noise
    return _observation(y, s_values, s_indices, c_values, c_indices, realization)


def _tap_convolve(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Causal FIR along the last axis, output truncated to the input length.
    Tap vectors are short (a handful of entries), so an explicit shift-and-add
    beats generic convolution and broadcasts over batch dimensions."""
    out = np.zeros(np.broadcast_shapes(x.shape[:-1], taps.shape[:-1]) + x.shape[-1:], dtype=complex)
    t = x.shape[-1]
    for l in range(taps.shape[-1]):
        out[..., l:] += taps[..., l : l + 1] * x[..., : t - l]
    return out


def _delay(x: np.ndarray, samples: int) -> np.ndarray:
    if samples == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(samples, 0)]
    return np.pad(x, pad)[..., : x.shape[-1]]


def tag_emitted_stream(x_stream, c_values, cfg: SystemConfig, xi: int):
    """Waveform leaving the tag: incident samples gated by the secondary
    symbols, the whole product arriving xi samples late. With xi > 0 the
    first xi samples of each symbol period still carry the previous secondary
    symbol."""
    period = cfg.symbol_period
    t = np.arange(x_stream.shape[-1])
    gate_idx = t // period
    gate = np.asarray(c_values)[..., gate_idx]
    return _delay(x_stream * gate, xi)


def sample_level_rx(
    s_values,
    c_values,
    realization: ChannelRealization,
    cfg: SystemConfig,
    xi: int = 0,
    stream: Optional[RandomStream] = None,
    *,
    s_indices=None,
    c_indices=None,
    noise=None,
) -> FrameObservation:
    """Full time-domain path: IDFT + CP, direct and gated backscatter tap
    convolutions, white time-domain noise, CP removal and DFT.

    With xi = 0 and the same noise samples this reproduces the frequency
    domain path exactly; with xi > 0 the backscattered waveform (tag gating
    included) lands xi samples late, which is what stretches the composite
    response and eventually breaks the cyclic-prefix protection.
    """
    if not 0 <= xi < cfg.n + cfg.n_cp:
        raise ValueError(f"sync error {xi} outside [0, {cfg.n + cfg.n_cp})")
    s_values = np.asarray(s_values)
    c_values = np.asarray(c_values)
    n, n_cp = cfg.n, cfg.n_cp
    x = np.fft.ifft(s_values, axis=-1) * np.sqrt(n)
    x_cp = np.concatenate([x[..., n - n_cp :], x], axis=-1)
    frame_len = cfg.n_max * cfg.symbol_period
    x_stream = x_cp.reshape(x_cp.shape[:-2] + (frame_len,))

    rx = _tap_convolve(x_stream, realization.h_d)
    if realization.h_b.shape[-1] and np.any(realization.h_b):
        incident = _tap_convolve(x_stream, realization.b)
        emitted = tag_emitted_stream(incident, c_values, cfg, xi)
        rx = rx + _delay(_tap_convolve(emitted, realization.g), realization.d_b)
    rx = np.sqrt(cfg.p_t) * rx

    if noise is None:
        if cfg.sigma2 > 0:
            if stream is None:
                raise ValueError("need a stream or explicit noise")
            noise = draw_cn(stream, rx.size, cfg.sigma2).reshape(rx.shape)
        else:
            noise = 0.0
    rx = rx + noise

    blocks = rx.reshape(rx.shape[:-1] + (cfg.n_max, cfg.symbol_period))[..., n_cp:]
    y = np.fft.fft(blocks, axis=-1) / np.sqrt(n)
    return _observation(y, s_values, s_indices, c_values, c_indices, realization, xi=xi)
