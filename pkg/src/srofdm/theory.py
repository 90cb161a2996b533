"""Closed-form performance expressions: per-subcarrier QAM error rates with
perfect and pilot-estimated channel knowledge, secondary-link SNRs under both
data-aided re-estimation methods, and the averaged BPSK backscatter BER with
its diversity behaviour.

Conventions: SNRs are linear; "display" error rates follow the per-subcarrier
square-QAM symbol-error expression; exact Gray-coded bit error rates are
available alongside for bit-level accounting.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from srofdm.numerics import RandomStream, draw_cn, partial_fourier, q_function
from srofdm.txchain import QamAlphabet, SystemConfig, _gray

__all__ = [
    "ConstellationMoments",
    "AvgSnrParams",
    "qam_moments",
    "qam_error_rates",
    "ser_qam_awgn",
    "ber_bits_qam_awgn",
    "ber_psk_from_snr",
    "primary_rates_perfect",
    "ber_primary_perfect",
    "snr_primary_estimated",
    "snr_primary_estimated_grid",
    "primary_rates_estimated",
    "ber_primary_estimated",
    "ber_secondary_perfect",
    "snr_secondary_method1",
    "snr_secondary_method2",
    "avg_ber_secondary",
    "fit_diversity_slope",
    "eq_noise_moment_predictions",
    "mc_ber_secondary_method1",
]


@dataclass(frozen=True)
class ConstellationMoments:
    """Inverse-power moments of a unit-average-power alphabet."""

    gamma1: float  # E[|1/S|^2]
    gamma2: float  # E[|1/S|^4]


def qam_moments(m_s: int) -> ConstellationMoments:
    """Exact moments by enumeration over the Gray QAM alphabet."""
    points = QamAlphabet.build(m_s).points
    inv2 = 1.0 / np.abs(points) ** 2
    return ConstellationMoments(gamma1=float(inv2.mean()), gamma2=float((inv2**2).mean()))


def qam_error_rates(snr, m_s: int):
    """Symbol- and bit-error rates of square Gray QAM in AWGN at linear SNR.

    Both come from the per-rail PAM decision regions: the probability of
    deciding level j given level i is a difference of Gaussian tails at the
    interior decision edges, weighted by the Hamming distance of the rail
    Gray labels for the bit rate. The symbol rate is the standard
    1 - (1 - rail_error)^2 display; the bit rate matches bit-counting Monte
    Carlo to sampling noise at any SNR.
    """
    snr = np.asarray(snr, dtype=float)
    m = int(round(np.sqrt(m_s)))
    levels = (2.0 * np.arange(m) - (m - 1)) / np.sqrt(2.0 * (m_s - 1) / 3.0)
    labels = _gray(np.arange(m))
    hamming = np.array(
        [[bin(int(a) ^ int(b)).count("1") for b in labels] for a in labels], dtype=float
    )
    edges = (levels[:-1] + levels[1:]) / 2.0
    inv_sigma = np.sqrt(2.0 * snr)[..., None, None]
    q_edges = q_function((edges - levels[:, None]) * inv_sigma)  # (..., m, m-1)
    # telescoped region sums: sum_j (tail_j - tail_{j+1}) w_ij
    #   = w_i0 + sum_e q_ie (w_{i,e+1} - w_ie)
    bits_per_rail = m.bit_length() - 1
    w_ber = hamming[:, 1:] - hamming[:, :-1]
    ber = (hamming[:, 0].sum() + np.einsum("...ie,ie->...", q_edges, w_ber)) / (
        m * bits_per_rail
    )
    ident = np.eye(m)
    w_ser = ident[:, 1:] - ident[:, :-1]
    rail_err = 1.0 - (1.0 + np.einsum("...ie,ie->...", q_edges, w_ser)) / m
    ser = 1.0 - (1.0 - rail_err) ** 2
    return ser, ber


def ser_qam_awgn(snr, m_s: int):
    """Per-subcarrier square-QAM symbol error rate at linear SNR."""
    snr = np.asarray(snr, dtype=float)
    q = q_function(np.sqrt(3.0 * snr / (m_s - 1)))
    rail = 2.0 * (1.0 - 1.0 / np.sqrt(m_s)) * q
    return 1.0 - (1.0 - rail) ** 2


def ber_bits_qam_awgn(snr, m_s: int):
    """Exact Gray-coded bit error rate of square QAM in AWGN."""
    return qam_error_rates(snr, m_s)[1]


def ber_psk_from_snr(snr, m_c: int):
    """Gray PSK bit error rate at linear post-combining SNR.

    High-SNR approximation (2/log2 M) Q(sqrt(2 sin^2(pi/M) snr)); for BPSK the
    prefactor is 1 (the generic prefactor would double-count the single bit).
    """
    snr = np.asarray(snr, dtype=float)
    arg = np.sqrt(2.0 * np.sin(np.pi / m_c) ** 2 * snr)
    if m_c == 2:
        return q_function(arg)
    return (2.0 / np.log2(m_c)) * q_function(arg)


def _composite_snr(h_d, h_b, c_values, cfg: SystemConfig):
    """Per (symbol, data subcarrier) SNR of the composite link, perfect CSI."""
    h_d = np.asarray(h_d)[..., None, :]
    h = h_d + np.asarray(c_values)[..., :, None] * np.asarray(h_b)[..., None, :]
    h = h[..., list(cfg.data_indices)]
    return cfg.p_t * np.abs(h) ** 2 / cfg.sigma2


def _c_grid(cfg: SystemConfig, c_values):
    if c_values is None:
        return cfg.psk.points  # uniform average over the alphabet
    return np.asarray(c_values)


def primary_rates_perfect(h_d, h_b, cfg: SystemConfig, *, c_values=None):
    """(symbol, bit) primary error rates with perfect composite-channel
    knowledge, averaged over data subcarriers and secondary symbols."""
    snr = _composite_snr(h_d, h_b, _c_grid(cfg, c_values), cfg)
    ser, ber = qam_error_rates(snr, cfg.m_s)
    return ser.mean(axis=(-2, -1)), ber.mean(axis=(-2, -1))


def ber_primary_perfect(h_d, h_b, cfg: SystemConfig, *, c_values=None, per_bit: bool = False):
    """Primary error rate with perfect composite-channel knowledge, averaged
    over data subcarriers and secondary symbols.

    By default the secondary symbol averages over the whole PSK alphabet;
    pass the realized c sequence to condition on one frame. per_bit swaps the
    symbol-error display for the exact Gray bit error rate.
    """
    ser, ber = primary_rates_perfect(h_d, h_b, cfg, c_values=c_values)
    return ber if per_bit else ser


def _pilot_leverage(cfg: SystemConfig, taps: int) -> np.ndarray:
    """f_k^H (F_p^H F_p)^{-1} f_k for every subcarrier; reduces to taps/N_p
    for an equally spaced comb."""
    f_l = partial_fourier(cfg.n, taps)
    f_p = f_l[list(cfg.pilot_indices), :]
    gram = f_p.conj().T @ f_p
    sol = np.linalg.solve(gram, f_l.conj().T)
    return np.real(np.einsum("kl,lk->k", f_l, sol))


def snr_primary_estimated(h_d, h_b, c, k: int, cfg: SystemConfig, taps: int) -> float:
    """Post-equalization SNR of one data subcarrier when the composite
    response comes from the comb-pilot least squares with `taps` coefficients.

    Channel-estimation noise both perturbs the equalizer and adds a residual
    term, so the effective noise grows by (N_p + L)/N_p plus an SNR-dependent
    correction (equally spaced comb)."""
    h = np.asarray(h_d)[k] + c * np.asarray(h_b)[k]
    lev = float(_pilot_leverage(cfg, taps)[k])
    sig = cfg.p_t * np.abs(h) ** 2
    return float(sig / (cfg.sigma2 * (lev + 1.0 + cfg.sigma2 * lev / sig)))


def snr_primary_estimated_grid(h_d, h_b, c_values, cfg: SystemConfig, taps: int):
    """Vectorized counterpart of snr_primary_estimated over (symbols, data
    subcarriers)."""
    snr_perfect = _composite_snr(h_d, h_b, np.asarray(c_values), cfg)
    lev = _pilot_leverage(cfg, taps)[list(cfg.data_indices)]
    return snr_perfect / (lev + 1.0 + lev / snr_perfect)


def primary_rates_estimated(h_d, h_b, cfg: SystemConfig, taps: int, *, c_values=None):
    """(symbol, bit) primary error rates at the pilot-estimated-CSI SNR."""
    snr = snr_primary_estimated_grid(h_d, h_b, _c_grid(cfg, c_values), cfg, taps)
    ser, ber = qam_error_rates(snr, cfg.m_s)
    return ser.mean(axis=(-2, -1)), ber.mean(axis=(-2, -1))


def ber_primary_estimated(
    h_d, h_b, cfg: SystemConfig, taps: int, *, c_values=None, per_bit: bool = False
):
    """Primary error rate with pilot-estimated composite response (the
    perfect-CSI expression evaluated at the degraded per-subcarrier SNR)."""
    ser, ber = primary_rates_estimated(h_d, h_b, cfg, taps, c_values=c_values)
    return ber if per_bit else ser


def _hb_energy(h_b) -> np.ndarray:
    return np.sum(np.abs(np.asarray(h_b)) ** 2, axis=-1)


def ber_secondary_perfect(h_b, cfg: SystemConfig, moments: Optional[ConstellationMoments] = None):
    """Secondary BER lower bound: perfect link CSI and perfectly detected
    primary symbols; the spreading gain shows up as the full subcarrier-sum
    backscatter energy inside the Q argument."""
    moments = moments or qam_moments(cfg.m_s)
    snr = cfg.p_t * _hb_energy(h_b) / (moments.gamma1 * cfg.sigma2)
    return ber_psk_from_snr(snr, cfg.m_c)


def snr_secondary_method1(
    h_b, cfg: SystemConfig, moments: Optional[ConstellationMoments] = None
) -> np.ndarray:
    """Effective secondary SNR with per-subcarrier data-aided re-estimation."""
    moments = moments or qam_moments(cfg.m_s)
    e = cfg.p_t * _hb_energy(h_b)
    g1, g2 = moments.gamma1, moments.gamma2
    denom = 2.0 * g1 + cfg.n * (2.0 * g1**2 + g2) * cfg.sigma2 / (4.0 * e)
    return e / (cfg.sigma2 * denom)


def snr_secondary_method2(h_b, cfg: SystemConfig, taps: int) -> np.ndarray:
    """Effective secondary SNR with tap-domain data-aided re-estimation
    (unit-modulus primary symbols assumed)."""
    e = cfg.p_t * _hb_energy(h_b)
    denom = 2.0 + 3.0 * taps * cfg.sigma2 / (4.0 * e)
    return e / (cfg.sigma2 * denom)


@dataclass(frozen=True)
class AvgSnrParams:
    """Inputs of the averaged secondary BER: per-tap average backscatter SNR
    (already divided by the primary constellation's gamma1) and tap count."""

    gamma_b: float
    l_b: int
    sigma_b2: float = 1.0

    @property
    def mu(self) -> float:
        return float(np.sqrt(self.gamma_b / (1.0 + self.gamma_b)))


def avg_ber_secondary(params: AvgSnrParams):
    """Average BPSK secondary BER over i.i.d. Rayleigh backscatter taps.

    Returns (exact, high_snr_approx). The exact branch is the standard
    chi-square average of the Q-function; the approximation decays like
    gamma_b^(-l_b), i.e. the link enjoys a frequency diversity order equal to
    its tap count.
    """
    mu, l_b = params.mu, params.l_b
    if l_b < 1:
        raise ValueError("need at least one tap")
    terms = sum(
        comb(l_b - 1 + l, l) * ((1.0 + mu) / 2.0) ** l for l in range(l_b)
    )
    exact = ((1.0 - mu) / 2.0) ** l_b * terms
    approx = comb(2 * l_b - 1, l_b) / (4.0 * params.gamma_b) ** l_b
    return float(exact), float(approx)


def fit_diversity_slope(snr_db, ber) -> float:
    """Regression slope of -log10(BER) per decade of SNR; equals the diversity
    order in the high-SNR regime."""
    snr_db = np.asarray(snr_db, dtype=float)
    ber = np.asarray(ber, dtype=float)
    keep = ber > 0
    if np.sum(keep) < 2:
        raise ValueError("need at least two nonzero BER points")
    return float(-np.polyfit(snr_db[keep] / 10.0, np.log10(ber[keep]), 1)[0])


def eq_noise_moment_predictions(taps: int, sigma2: float, p_t: float) -> dict:
    """Moments of the tap-domain re-estimation error used by the secondary
    SNR derivation: same-symbol norm, cross-symbol product, and mean energy."""
    return {
        "same_symbol_sq": (taps**2 + taps) * sigma2**2 / p_t**2,
        "cross_symbol_sq": taps * sigma2**2 / p_t**2,
        "mean_energy": taps * sigma2 / p_t,
    }


def mc_ber_secondary_method1(
    h_b,
    cfg: SystemConfig,
    n_draws: int,
    stream: RandomStream,
) -> float:
    """Monte Carlo of the conditional-error expectation for BPSK secondary
    detection with per-subcarrier re-estimation (unit-modulus primary).

    Draws the frame-level separation errors, evaluates the conditional
    Q-expression (real part of the projected statistic over the per-symbol
    noise deviation), and averages. Brackets the closed-form approximation at
    high SNR."""
    h_b = np.asarray(h_b)
    n = h_b.shape[-1]
    var_entry = cfg.sigma2 / cfg.p_t  # unit-modulus per-symbol estimation error
    eps_d = draw_cn(stream, n_draws * n, var_entry / 2.0).reshape(n_draws, n)
    eps_b = draw_cn(stream, n_draws * n, var_entry / 2.0).reshape(n_draws, n)
    hb_eff = h_b + eps_b
    numer = np.real(np.einsum("dk,dk->d", hb_eff.conj(), h_b - eps_d))
    denom = np.sqrt(
        cfg.sigma2 / (2.0 * cfg.p_t) * (_hb_energy(h_b) + np.sum(np.abs(eps_b) ** 2, axis=-1))
    )
    return float(np.mean(q_function(numer / denom)))
