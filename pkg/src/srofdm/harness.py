"""Deterministic Monte Carlo BER engine.

Each trial owns a counter-based random stream keyed by (master_seed,
trial_index), so results are bit-identical for any chunking or worker count.
Trials are drawn per stream but processed in vectorized blocks: tap vectors,
symbol indices and noise are stacked and the whole receive/detect chain runs
batched through numpy.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from srofdm import theory
from srofdm.channel import (
    ChannelConfig,
    composite_tap_count,
    draw_link_taps,
    realization_from_taps,
)
from srofdm.numerics import RandomStream, draw_cn
from srofdm.receiver import (
    DetectionOutput,
    run_algorithm1,
    run_ml_benchmark,
)
from srofdm.txchain import (
    FrameObservation,
    SystemConfig,
    frequency_domain_rx,
    modulate_primary,
    sample_level_rx,
    secondary_frame,
)

__all__ = [
    "RECEIVERS",
    "Scenario",
    "SweepSpec",
    "PointResult",
    "BerCurve",
    "transmit_power",
    "apply_axis",
    "draw_frame_batch",
    "run_trial",
    "run_sweep",
]

CHUNK_TRIALS = 256  # fixed block size; results never depend on it

SWEEP_AXES = (
    "direct_snr_db",
    "snr_ratio_db",
    "stx_distance_m",
    "sync_error_samples",
    "backscatter_snr_db",
)

# receiver registry: how each curve runs the detector and which analytic
# companions belong to it (None = the paper gives no closed form there)
RECEIVERS = {
    "perfect_csi": dict(kind="algo", perfect_csi=True, csi="perfect",
                        primary_theory="perfect", secondary_theory="eq15"),
    "proposed_m1": dict(kind="algo", method="method1", csi="estimated",
                        primary_theory="estimated", secondary_theory="m1"),
    "proposed_m2": dict(kind="algo", method="method2", csi="estimated",
                        primary_theory="estimated", secondary_theory="m2"),
    "proposed_m1_genie": dict(kind="algo", method="method1", genie=True, csi="estimated",
                              primary_theory="estimated", secondary_theory="m1"),
    "proposed_m2_genie": dict(kind="algo", method="method2", genie=True, csi="estimated",
                              primary_theory="estimated", secondary_theory="m2"),
    "pilot_only": dict(kind="algo", method="pilot_only", csi="estimated",
                       primary_theory="estimated", secondary_theory=None),
    "ml_perfect": dict(kind="ml", csi="perfect",
                       primary_theory=None, secondary_theory=None),
    "ml_estimated": dict(kind="ml", csi="estimated",
                         primary_theory=None, secondary_theory=None),
    "ml_nopilot": dict(kind="ml", csi="perfect", pilot_structure=False,
                       primary_theory=None, secondary_theory=None),
}


@dataclass(frozen=True)
class Scenario:
    """Resolved simulation scenario: link geometry plus the anchor SNRs that
    pin the transmit power when an axis does not sweep it directly."""

    system: SystemConfig
    chan: ChannelConfig
    direct_snr_db: float = 20.0
    backscatter_snr_db: Optional[float] = None
    sync_error: int = 0

    def validate(self):
        self.system.validate_with_channel(self.chan, self.sync_error)


def transmit_power(scenario: Scenario, chan: ChannelConfig) -> float:
    """Power that realizes the anchor SNR: direct-link SNR when the direct
    path exists, otherwise the backscatter-link SNR."""
    s2 = scenario.system.sigma2
    if chan.direct_model != "none":
        return 10 ** (scenario.direct_snr_db / 10.0) * s2 / chan.beta_direct
    if scenario.backscatter_snr_db is None:
        raise ValueError("no direct link: scenario needs backscatter_snr_db")
    return 10 ** (scenario.backscatter_snr_db / 10.0) * s2 / chan.beta_backscatter


def apply_axis(scenario: Scenario, axis: str, value: float):
    """Resolve one sweep point into (SystemConfig, ChannelConfig, xi)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    chan = scenario.chan
    xi = scenario.sync_error
    if axis == "snr_ratio_db":
        chan = replace(
            chan, beta_backscatter_override=10 ** (value / 10.0) * chan.beta_direct
        )
    elif axis == "stx_distance_m":
        chan = replace(chan, dist_fwd=float(value), dist_bwd=None)
    elif axis == "sync_error_samples":
        xi = int(round(value))

    s2 = scenario.system.sigma2
    if axis == "direct_snr_db":
        p_t = 10 ** (value / 10.0) * s2 / chan.beta_direct
    elif axis == "backscatter_snr_db":
        p_t = 10 ** (value / 10.0) * s2 / chan.beta_backscatter
    else:
        p_t = transmit_power(scenario, chan)
    system = replace(scenario.system, p_t=p_t)
    return system, chan, xi


@dataclass(frozen=True)
class SweepSpec:
    """One experiment: an axis, its points, and the receiver curves to run."""

    axis: str
    points: tuple
    trials_per_point: int
    receivers: tuple = ("perfect_csi", "proposed_m1", "proposed_m2")
    csi_mode: str = "mixed"  # informational; each receiver carries its own
    with_theory: bool = True  # attach per-realization analytic companions

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0 or np.any(np.diff(pts) <= 0):
            raise ValueError("sweep points must be strictly increasing")
        if self.trials_per_point < 10**3:
            raise ValueError("need at least 10^3 trials per point")
        for r in self.receivers:
            if r not in RECEIVERS:
                raise ValueError(f"unknown receiver {r!r}")


@dataclass
class PointResult:
    """Accumulated counts for one receiver at one sweep point."""

    point: float
    trials: int = 0
    primary_bits: int = 0
    primary_bit_errors: int = 0
    primary_symbols: int = 0
    primary_symbol_errors: int = 0
    secondary_bits: int = 0
    secondary_bit_errors: int = 0
    erasures: int = 0
    theory_sums: dict = field(default_factory=dict)

    @staticmethod
    def _rate(errors, total):
        return errors / total if total else float("nan")

    @staticmethod
    def _halfwidth(rate, total):
        if not total or not np.isfinite(rate):
            return float("nan")
        return 1.96 * np.sqrt(rate * (1.0 - rate) / total)

    @property
    def ber_primary(self):
        return self._rate(self.primary_bit_errors, self.primary_bits)

    @property
    def ci_primary(self):
        return self._halfwidth(self.ber_primary, self.primary_bits)

    @property
    def ser_primary(self):
        return self._rate(self.primary_symbol_errors, self.primary_symbols)

    @property
    def ci_ser_primary(self):
        return self._halfwidth(self.ser_primary, self.primary_symbols)

    @property
    def ber_secondary(self):
        return self._rate(self.secondary_bit_errors, self.secondary_bits)

    @property
    def ci_secondary(self):
        return self._halfwidth(self.ber_secondary, self.secondary_bits)

    def theory_mean(self, key):
        return self.theory_sums[key] / self.trials if key in self.theory_sums else None

    def merge(self, other: "PointResult"):
        self.trials += other.trials
        self.primary_bits += other.primary_bits
        self.primary_bit_errors += other.primary_bit_errors
        self.primary_symbols += other.primary_symbols
        self.primary_symbol_errors += other.primary_symbol_errors
        self.secondary_bits += other.secondary_bits
        self.secondary_bit_errors += other.secondary_bit_errors
        self.erasures += other.erasures
        for k, v in other.theory_sums.items():
            self.theory_sums[k] = self.theory_sums.get(k, 0.0) + v


@dataclass
class BerCurve:
    receiver: str
    csi: str
    axis: str
    points: list  # of PointResult


def draw_frame_batch(
    system: SystemConfig,
    chan: ChannelConfig,
    master_seed: int,
    trial_ids,
    xi: int = 0,
    path: str = "frequency",
) -> FrameObservation:
    """Draw a batch of independent trials, one stream per trial id, and run
    them through the requested receive path in one vectorized call.

    Per-trial draw order is fixed (channel taps, primary indices, secondary
    indices, noise), which is what the reproducibility contract rests on.
    """
    trial_ids = list(trial_ids)
    batch = len(trial_ids)
    noise_len = (
        system.n_max * system.symbol_period if path == "sample" else system.n_max * system.n
    )
    h_d = np.empty((batch, chan.l_d), dtype=complex)
    b = np.empty((batch, chan.l_1 if chan.backscatter_model == "cascade" else max(chan.l_b, 1)), dtype=complex)
    g = np.empty((batch, chan.l_2 if chan.backscatter_model == "cascade" else 1), dtype=complex)
    s_idx = np.empty((batch, system.n_max, system.n_data), dtype=np.int64)
    c_idx = np.empty((batch, system.n_data_symbols), dtype=np.int64)
    noise = np.empty((batch, noise_len), dtype=complex) if system.sigma2 > 0 else None
    for i, tid in enumerate(trial_ids):
        stream = RandomStream(master_seed, tid)
        h_d[i], b[i], g[i] = draw_link_taps(chan, stream)
        s_idx[i] = stream.integers(0, system.m_s, size=(system.n_max, system.n_data))
        c_idx[i] = stream.integers(0, system.m_c, size=system.n_data_symbols)
        if noise is not None:
            noise[i] = draw_cn(stream, noise_len, system.sigma2)

    real = realization_from_taps(h_d, b, g, chan.d_b, system.n)
    s_values, _ = modulate_primary(s_idx, system)
    c_values, _ = secondary_frame(c_idx, system)
    if path == "sample":
        return sample_level_rx(
            s_values, c_values, real, system, xi=xi,
            s_indices=s_idx, c_indices=c_idx, noise=noise,
        )
    if noise is not None:
        noise = noise.reshape(batch, system.n_max, system.n)
    return frequency_domain_rx(
        s_values, c_values, real, system,
        s_indices=s_idx, c_indices=c_idx, noise=noise,
    )


def _run_receiver(name: str, obs: FrameObservation, system: SystemConfig, taps: int,
                  detect_c: bool) -> DetectionOutput:
    spec = RECEIVERS[name]
    if spec["kind"] == "algo":
        return run_algorithm1(
            obs,
            system,
            spec.get("method", "method2"),
            taps=taps,
            genie_primary=spec.get("genie", False),
            perfect_csi=spec.get("perfect_csi", False),
            detect_c=detect_c,
        )
    return run_ml_benchmark(
        obs,
        system,
        csi=spec["csi"],
        pilot_structure=spec.get("pilot_structure", True),
        taps=taps,
    )


def _count_errors(result: PointResult, obs, out, system: SystemConfig):
    batch = obs.s_indices.shape[0]
    result.trials += batch
    result.primary_symbols += obs.s_indices.size
    result.primary_symbol_errors += int(np.sum(out.s_hat != obs.s_indices))
    result.primary_bits += obs.s_indices.size * system.qam.bits_per_symbol
    result.primary_bit_errors += int(np.sum(system.qam.bit_errors(obs.s_indices, out.s_hat)))
    result.erasures += int(np.sum(out.n_erased))
    if out.c_hat is not None:
        result.secondary_bits += obs.c_indices.size * system.psk.bits_per_symbol
        result.secondary_bit_errors += int(
            np.sum(system.psk.bit_errors(obs.c_indices, out.c_hat))
        )


def _needed_companions(receivers) -> set:
    need = set()
    for name in receivers:
        spec = RECEIVERS[name]
        if spec["primary_theory"]:
            need.add("primary_" + spec["primary_theory"])
        if spec["secondary_theory"]:
            need.add(spec["secondary_theory"])
    return need


def _theory_companions(obs, system: SystemConfig, pilot_taps: int, taps: int,
                       with_backscatter: bool, estimable: bool, need: set) -> dict:
    """Per-chunk sums of the closed-form companions, conditioned on the drawn
    realizations (the analytic curve is the average of per-realization
    evaluations over exactly the simulated channels)."""
    real = obs.realization
    c_values = obs.c_values
    sums = {}
    if "primary_perfect" in need:
        ser, ber = theory.primary_rates_perfect(real.H_d, real.H_b, system, c_values=c_values)
        sums["primary_ser_perfect"] = float(np.sum(ser))
        sums["primary_ber_perfect"] = float(np.sum(ber))
    if "primary_estimated" in need and estimable:
        ser, ber = theory.primary_rates_estimated(
            real.H_d, real.H_b, system, pilot_taps, c_values=c_values
        )
        sums["primary_ser_estimated"] = float(np.sum(ser))
        sums["primary_ber_estimated"] = float(np.sum(ber))
    if with_backscatter:
        moments = theory.qam_moments(system.m_s)
        if "eq15" in need:
            sums["secondary_eq15"] = float(
                np.sum(theory.ber_secondary_perfect(real.H_b, system, moments))
            )
        if "m1" in need:
            sums["secondary_m1"] = float(np.sum(
                theory.ber_psk_from_snr(
                    theory.snr_secondary_method1(real.H_b, system, moments), system.m_c
                )
            ))
        if "m2" in need:
            sums["secondary_m2"] = float(np.sum(
                theory.ber_psk_from_snr(
                    theory.snr_secondary_method2(real.H_b, system, taps), system.m_c
                )
            ))
    return sums


def _process_chunk(args):
    (scenario, axis, value, master_seed, trial_ids, receivers, with_theory) = args
    system, chan, xi = apply_axis(scenario, axis, value)
    path = "sample" if (xi > 0 or axis == "sync_error_samples") else "frequency"
    obs = draw_frame_batch(system, chan, master_seed, trial_ids, xi=xi, path=path)
    taps = composite_tap_count(chan, xi)
    with_backscatter = chan.backscatter_model != "none"
    pilot_taps = min(taps, system.n_p) if system.n_p else 0
    results = {}
    for name in receivers:
        res = PointResult(point=value)
        out = _run_receiver(name, obs, system, taps, detect_c=with_backscatter)
        _count_errors(res, obs, out, system)
        results[name] = res
    companions = {}
    if with_theory:
        companions = _theory_companions(
            obs, system, pilot_taps, taps, with_backscatter,
            estimable=pilot_taps >= taps, need=_needed_companions(receivers),
        )
    return results, companions


_COMPANION_KEYS = {
    "perfect": ("primary_ser_perfect", "primary_ber_perfect"),
    "estimated": ("primary_ser_estimated", "primary_ber_estimated"),
}


def _attach_companions(res: PointResult, name: str, companions: dict):
    spec = RECEIVERS[name]
    pk = spec["primary_theory"]
    if pk and _COMPANION_KEYS[pk][0] in companions:
        ser_key, ber_key = _COMPANION_KEYS[pk]
        res.theory_sums["primary_ser_theory"] = res.theory_sums.get("primary_ser_theory", 0.0) + companions[ser_key]
        res.theory_sums["primary_ber_theory"] = res.theory_sums.get("primary_ber_theory", 0.0) + companions[ber_key]
    sk = spec["secondary_theory"]
    key = {"eq15": "secondary_eq15", "m1": "secondary_m1", "m2": "secondary_m2"}.get(sk)
    if key and key in companions:
        res.theory_sums["secondary_ber_theory"] = res.theory_sums.get("secondary_ber_theory", 0.0) + companions[key]


def run_trial(scenario: Scenario, axis: str, value: float, trial_index: int,
              master_seed: int, receivers=("perfect_csi",)) -> dict:
    """One trial's error counts for each requested receiver; bitwise
    reproducible from (master_seed, trial_index)."""
    results, companions = _process_chunk(
        (scenario, axis, value, master_seed, [trial_index], receivers, True)
    )
    for name, res in results.items():
        _attach_companions(res, name, companions)
    return results


def run_sweep(
    spec: SweepSpec,
    scenario: Scenario,
    master_seed: int,
    workers: Optional[int] = None,
) -> dict:
    """Run every (point, receiver) cell and return {receiver: BerCurve}.

    Trials split into fixed-size chunks; chunks may run on a process pool but
    are reduced in index order, so error counts and companion sums are
    identical for any worker count.
    """
    scenario.validate()
    workers = workers or int(os.environ.get("SROFDM_WORKERS", "1"))
    curves = {
        name: BerCurve(receiver=name, csi=RECEIVERS[name]["csi"], axis=spec.axis, points=[])
        for name in spec.receivers
    }
    for value in spec.points:
        chunks = [
            (scenario, spec.axis, float(value), master_seed,
             range(start, min(start + CHUNK_TRIALS, spec.trials_per_point)),
             tuple(spec.receivers), spec.with_theory)
            for start in range(0, spec.trials_per_point, CHUNK_TRIALS)
        ]
        totals = {name: PointResult(point=float(value)) for name in spec.receivers}
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(_process_chunk, chunks, chunksize=1))
        else:
            outputs = [_process_chunk(c) for c in chunks]
        for results, companions in outputs:  # fixed chunk order
            for name in spec.receivers:
                res = results[name]
                _attach_companions(res, name, companions)
                totals[name].merge(res)
        for name in spec.receivers:
            curves[name].points.append(totals[name])
    return curves
