"""Command-line front end: scenario files, Monte Carlo sweeps, analytic
curves, and single-trial dumps.

Scenario files are flat `key = value` text with `#` comments; unknown keys
are rejected with the offending line number. Results land as one CSV per
receiver curve plus a JSON manifest that can replay the exact run.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from srofdm import __version__, theory
from srofdm.channel import ChannelConfig
from srofdm.harness import (
    Scenario,
    SweepSpec,
    apply_axis,
    run_sweep,
    run_trial,
)
from srofdm.txchain import SystemConfig, default_pilot_indices

CSV_HEADER = (
    "point,receiver,csi,ber_primary,ci_primary,ber_secondary,ci_secondary,"
    "ber_primary_theory,ber_secondary_theory"
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ScenarioError(ValueError):
    """Configuration problem; reported with file and line context."""


_SCENARIO_KEYS = {
    # key: (parser, default)
    "n": (int, 64),
    "n_cp": (int, 16),
    "n_pilot": (int, 8),
    "m_s": (int, 16),
    "m_c": (int, 8),
    "t_preamble": (int, 2),
    "n_max": (int, 10),
    "noise_dbm": (float, -80.0),
    "direct_snr_db": (float, 20.0),
    "backscatter_snr_db": (float, None),
    "sync_error": (int, 0),
    "l_d": (int, 4),
    "l_1": (int, 1),
    "l_2": (int, 2),
    "delay_b": (int, 1),
    "dist_direct": (float, 200.0),
    "dist_fwd": (float, 3.83),
    "dist_bwd": (float, None),  # 'auto' keeps the collinear default
    "exp_direct": (float, 2.5),
    "exp_fwd": (float, 2.0),
    "exp_bwd": (float, 2.0),
    "pathloss_ref": (float, 1e-3),
    "direct_model": (str, "rayleigh"),
    "backscatter_model": (str, "cascade"),
    "preamble": (str, None),  # comma list of complex values
    "axis": (str, "direct_snr_db"),
    "points": (str, "12:30:3"),
    "trials": (int, 100000),
    "receivers": (str, "perfect_csi,proposed_m1,proposed_m2"),
    "with_theory": (str, "true"),
}


def parse_scenario_text(text: str, origin: str = "<scenario>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCENARIO_KEYS:
            raise ScenarioError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"{origin}:{lineno}: duplicate key {key!r}")
        parser, _ = _SCENARIO_KEYS[key]
        if val.lower() in ("auto", "none", ""):
            values[key] = None
            continue
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ScenarioError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def load_scenario_file(path: str) -> dict:
    """Read a scenario by path or bundled name (e.g. 'paper_default')."""
    p = Path(path)
    if p.exists():
        return parse_scenario_text(p.read_text(), origin=str(p))
    bundled = resources.files("srofdm").joinpath(f"scenarios/{path}.txt")
    if bundled.is_file():
        return parse_scenario_text(bundled.read_text(), origin=f"scenarios/{path}.txt")
    raise ScenarioError(f"scenario {path!r} not found (no such file or bundled name)")


def resolve_scenario(values: dict):
    """Turn parsed key-values into (Scenario, sweep defaults dict)."""
    get = lambda k: values.get(k, _SCENARIO_KEYS[k][1])
    sigma2 = 10.0 ** (get("noise_dbm") / 10.0) * 1e-3  # dBm to watts, once
    preamble = ()
    if get("preamble"):
        try:
            preamble = tuple(complex(tok) for tok in str(get("preamble")).split(","))
        except ValueError as exc:
            raise ScenarioError(f"bad preamble list: {exc}") from None
    try:
        system = SystemConfig(
            n=get("n"),
            n_cp=get("n_cp"),
            pilot_indices=default_pilot_indices(get("n"), get("n_pilot")),
            m_s=get("m_s"),
            m_c=get("m_c"),
            t_preamble=get("t_preamble"),
            preamble=preamble,
            n_max=get("n_max"),
            p_t=1.0,  # pinned per sweep point by the anchor SNR
            sigma2=sigma2,
        )
        chan = ChannelConfig(
            l_d=get("l_d"),
            l_1=get("l_1"),
            l_2=get("l_2"),
            d_b=get("delay_b"),
            dist_direct=get("dist_direct"),
            dist_fwd=get("dist_fwd"),
            dist_bwd=get("dist_bwd"),
            exp_direct=get("exp_direct"),
            exp_fwd=get("exp_fwd"),
            exp_bwd=get("exp_bwd"),
            pathloss_ref=get("pathloss_ref"),
            direct_model=get("direct_model"),
            backscatter_model=get("backscatter_model"),
        )
        scenario = Scenario(
            system=system,
            chan=chan,
            direct_snr_db=get("direct_snr_db"),
            backscatter_snr_db=get("backscatter_snr_db"),
            sync_error=get("sync_error") or 0,
        )
        scenario.validate()
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None
    sweep_defaults = {
        "axis": get("axis"),
        "points": get("points"),
        "trials": get("trials"),
        "receivers": get("receivers"),
        "with_theory": str(get("with_theory")).lower() in ("1", "true", "yes"),
    }
    return scenario, sweep_defaults


def parse_points(spec: str) -> tuple:
    """'start:stop:step' (endpoints inclusive within half a step) or a comma
    list of values."""
    spec = str(spec).strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ScenarioError(f"bad point range {spec!r}, want start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ScenarioError("point range step must be positive")
        count = int(np.floor((stop - start) / step + 0.5)) + 1
        pts = start + step * np.arange(count)
        return tuple(float(p) for p in pts if p <= stop + step / 2)
    try:
        return tuple(float(tok) for tok in spec.split(",") if tok.strip())
    except ValueError as exc:
        raise ScenarioError(f"bad point list {spec!r}: {exc}") from None


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return ""
    return format(x, ".9g")


def write_curve_csv(path: Path, curve) -> None:
    rows = []
    for p in sorted(curve.points, key=lambda q: q.point):
        rows.append(
            ",".join(
                [
                    _fmt(p.point),
                    curve.receiver,
                    curve.csi,
                    _fmt(p.ber_primary),
                    _fmt(p.ci_primary),
                    _fmt(p.ber_secondary),
                    _fmt(p.ci_secondary),
                    _fmt(p.theory_mean("primary_ber_theory")),
                    _fmt(p.theory_mean("secondary_ber_theory")),
                ]
            )
        )
    path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")


def _scenario_manifest_dict(values: dict) -> dict:
    out = {}
    for key, (_, default) in _SCENARIO_KEYS.items():
        v = values.get(key, default)
        if v is not None:
            out[key] = v
    return out


def cmd_sweep(args) -> int:
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        values = manifest["scenario"]
        seed = manifest["master_seed"]
        axis, points = manifest["axis"], tuple(manifest["points"])
        trials, receivers = manifest["trials"], tuple(manifest["receivers"])
        with_theory = manifest["with_theory"]
        scenario, _ = resolve_scenario(values)
    else:
        values = load_scenario_file(args.scenario)
        scenario, defaults = resolve_scenario(values)
        axis = args.axis or defaults["axis"]
        points = parse_points(args.points or defaults["points"])
        trials = args.trials or defaults["trials"]
        receivers = tuple(
            (args.receivers or defaults["receivers"]).replace(" ", "").split(",")
        )
        seed = args.seed if args.seed is not None else int(os.environ.get("SROFDM_SEED", "1"))
        with_theory = defaults["with_theory"] if args.theory is None else args.theory

    spec = SweepSpec(
        axis=axis, points=tuple(points), trials_per_point=trials,
        receivers=receivers, with_theory=with_theory,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = run_sweep(spec, scenario, master_seed=seed, workers=args.workers)

    moments = theory.qam_moments(scenario.system.m_s)
    outputs, digests = {}, {}
    for name, curve in curves.items():
        fname = f"{axis}__{name}.csv"
        write_curve_csv(out_dir / fname, curve)
        outputs[name] = fname
        digests[name] = {
            "primary_bit_errors": sum(p.primary_bit_errors for p in curve.points),
            "secondary_bit_errors": sum(p.secondary_bit_errors for p in curve.points),
            "primary_symbol_errors": sum(p.primary_symbol_errors for p in curve.points),
        }
        if not args.quiet:
            for p in curve.points:
                print(
                    f"{axis}={p.point:g} {name}: ber_primary={_fmt(p.ber_primary) or 'n/a'}"
                    f" ber_secondary={_fmt(p.ber_secondary) or 'n/a'}"
                )
    manifest = {
        "tool": "srofdm",
        "version": __version__,
        "command": "sweep",
        "master_seed": seed,
        "axis": axis,
        "points": list(points),
        "trials": trials,
        "receivers": list(receivers),
        "with_theory": with_theory,
        "scenario": _scenario_manifest_dict(values),
        "constellation_moments": {"gamma1": moments.gamma1, "gamma2": moments.gamma2},
        "outputs": outputs,
        "error_digests": digests,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_theory(args) -> int:
    values = load_scenario_file(args.scenario)
    scenario, defaults = resolve_scenario(values)
    axis = args.axis or defaults["axis"]
    points = parse_points(args.points or defaults["points"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    system = scenario.system
    moments = theory.qam_moments(system.m_s)
    outputs = {}

    def emit(name, rows):
        fname = f"theory__{name}.csv"
        (out_dir / fname).write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")
        outputs[name] = fname

    # averaged secondary BER over i.i.d. Rayleigh taps: closed form per tap count
    gamma_grid = points if axis in ("direct_snr_db", "backscatter_snr_db") else tuple(
        float(v) for v in np.arange(0.0, 42.0, 2.0)
    )
    for l_b in (1, 2, 4):
        rows = []
        for db in gamma_grid:
            exact, approx = theory.avg_ber_secondary(
                theory.AvgSnrParams(gamma_b=10 ** (db / 10.0), l_b=l_b)
            )
            rows.append(
                f"{_fmt(db)},theory_avg_secondary_lb{l_b},perfect,,,,,,{_fmt(exact)}"
            )
        emit(f"avg_secondary_lb{l_b}", rows)

    # fixed-point secondary curves at the expected backscatter energy
    taps = max(scenario.chan.l_d, scenario.chan.l_b + scenario.chan.d_b)
    rows15, rows1, rows2 = [], [], []
    for db in gamma_grid:
        gbar = 10 ** (db / 10.0)
        hb2 = gbar  # P ||H_b||^2 / sigma^2 expressed directly by the axis
        cfg = system
        e = hb2
        snr15 = e / moments.gamma1
        b15 = theory.ber_psk_from_snr(snr15, cfg.m_c)
        g1 = e / (2 * moments.gamma1 + cfg.n * (2 * moments.gamma1**2 + moments.gamma2) / (4 * e))
        g2 = e / (2 + 3 * taps / (4 * e))
        rows15.append(f"{_fmt(db)},theory_secondary_perfect,perfect,,,,,,{_fmt(b15)}")
        rows1.append(
            f"{_fmt(db)},theory_secondary_m1,estimated,,,,,,{_fmt(theory.ber_psk_from_snr(g1, cfg.m_c))}"
        )
        rows2.append(
            f"{_fmt(db)},theory_secondary_m2,estimated,,,,,,{_fmt(theory.ber_psk_from_snr(g2, cfg.m_c))}"
        )
    emit("secondary_perfect", rows15)
    emit("secondary_m1", rows1)
    emit("secondary_m2", rows2)

    manifest = {
        "tool": "srofdm",
        "version": __version__,
        "command": "theory",
        "axis": axis,
        "points": list(gamma_grid),
        "scenario": _scenario_manifest_dict(values),
        "constellation_moments": {"gamma1": moments.gamma1, "gamma2": moments.gamma2},
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        print(f"gamma1={moments.gamma1:.6f} gamma2={moments.gamma2:.6f}")
    return EXIT_OK


def cmd_single(args) -> int:
    values = load_scenario_file(args.scenario)
    scenario, defaults = resolve_scenario(values)
    axis = args.axis or defaults["axis"]
    value = args.value if args.value is not None else scenario.direct_snr_db
    seed = args.seed if args.seed is not None else int(os.environ.get("SROFDM_SEED", "1"))
    receivers = tuple((args.receivers or defaults["receivers"]).replace(" ", "").split(","))
    results = run_trial(scenario, axis, value, args.trial, seed, receivers)
    system, chan, xi = apply_axis(scenario, axis, value)
    print(f"scenario: N={system.n} N_cp={system.n_cp} N_p={system.n_p} "
          f"M_s={system.m_s} M_c={system.m_c} N_max={system.n_max}")
    print(f"point: {axis}={value:g} xi={xi} P_T={system.p_t:.6g} W sigma2={system.sigma2:.6g} W")
    print(f"channel: beta_direct={chan.beta_direct:.6g} beta_backscatter={chan.beta_backscatter:.6g} "
          f"snr_ratio={10 * np.log10(chan.snr_ratio) if chan.beta_direct else float('nan'):.2f} dB")
    for name, res in results.items():
        print(
            f"{name}: primary {res.primary_bit_errors}/{res.primary_bits} bit errors "
            f"({res.primary_symbol_errors}/{res.primary_symbols} symbols), "
            f"secondary {res.secondary_bit_errors}/{res.secondary_bits} bit errors, "
            f"erasures {res.erasures}"
        )
        for key in sorted(res.theory_sums):
            print(f"  {key} = {res.theory_sums[key]:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="srofdm",
        description="Symbiotic-radio-over-OFDM Monte Carlo and analytic BER curves",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", nargs="?", default="paper_default",
                       help="scenario file path or bundled name")
        p.add_argument("--axis", choices=(
            "direct_snr_db", "snr_ratio_db", "stx_distance_m",
            "sync_error_samples", "backscatter_snr_db"), default=None)
        p.add_argument("--points", default=None, help="start:stop:step or comma list")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true")

    sw = sub.add_parser("sweep", help="run a Monte Carlo sweep")
    common(sw)
    sw.add_argument("--trials", type=int, default=None)
    sw.add_argument("--receivers", default=None, help="comma list of receiver names")
    sw.add_argument("--workers", type=int, default=None)
    sw.add_argument("--out", default="out", help="output directory")
    sw.add_argument("--theory", action=argparse.BooleanOptionalAction, default=None,
                    help="attach per-realization analytic companions")
    sw.add_argument("--from-manifest", default=None,
                    help="replay a previous run from its manifest.json")
    sw.set_defaults(func=cmd_sweep)

    th = sub.add_parser("theory", help="evaluate closed-form curves only")
    common(th)
    th.add_argument("--out", default="out", help="output directory")
    th.set_defaults(func=cmd_theory)

    sg = sub.add_parser("single", help="verbose dump of one trial")
    common(sg)
    sg.add_argument("--trial", type=int, default=0)
    sg.add_argument("--value", type=float, default=None, help="axis value for the trial")
    sg.add_argument("--receivers", default=None)
    sg.set_defaults(func=cmd_single)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - boundary reporting
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
