import json
from pathlib import Path

import numpy as np
import pytest

from srofdm.cli import (
    CSV_HEADER,
    ScenarioError,
    load_scenario_file,
    main,
    parse_points,
    parse_scenario_text,
    resolve_scenario,
)


class TestScenarioParsing:
    def test_bundled_paper_default(self):
        values = load_scenario_file("paper_default")
        scenario, defaults = resolve_scenario(values)
        assert scenario.system.n == 64
        assert scenario.system.n_p == 8
        assert scenario.chan.l_d == 4
        assert scenario.chan.l_b == 2
        assert scenario.chan.d_b == 1
        assert scenario.system.sigma2 == pytest.approx(1e-11)  # -80 dBm
        assert 10 * np.log10(scenario.chan.snr_ratio) == pytest.approx(-30.0, abs=0.2)
        assert defaults["axis"] == "direct_snr_db"

    def test_unknown_key_reports_line(self):
        with pytest.raises(ScenarioError, match=r"my\.txt:3: unknown key 'bogus'"):
            parse_scenario_text("n = 64\n\nbogus = 3\n", origin="my.txt")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ScenarioError, match="duplicate"):
            parse_scenario_text("n = 64\nn = 32\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ScenarioError, match=":1:"):
            parse_scenario_text("n = sixty-four\n")

    def test_comments_and_blank_lines_ignored(self):
        values = parse_scenario_text("# hi\n\nn = 32  # inline\nn_pilot = 4\n")
        assert values == {"n": 32, "n_pilot": 4}

    def test_infeasible_scenario_rejected(self):
        values = parse_scenario_text("n_pilot = 2\n")  # 2 pilots < 4 composite taps
        with pytest.raises(ScenarioError):
            resolve_scenario(values)

    def test_custom_preamble(self):
        values = parse_scenario_text("t_preamble = 4\npreamble = 1,1j,-1,-1j\n")
        scenario, _ = resolve_scenario(values)
        np.testing.assert_allclose(scenario.system.preamble, [1, 1j, -1, -1j])


class TestPointRanges:
    def test_inclusive_range(self):
        assert parse_points("12:30:3") == (12.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0)

    def test_unit_steps(self):
        assert parse_points("0:20:1") == tuple(float(v) for v in range(21))

    def test_comma_list(self):
        assert parse_points("1, 2.5, 7") == (1.0, 2.5, 7.0)

    def test_bad_range_rejected(self):
        with pytest.raises(ScenarioError):
            parse_points("5:1")


@pytest.fixture()
def fast_scenario(tmp_path):
    path = tmp_path / "fast.txt"
    path.write_text("direct_snr_db = 20\ntrials = 1000\nreceivers = perfect_csi,proposed_m2\n")
    return path


class TestSweepCommand:
    def test_produces_expected_rows(self, tmp_path, fast_scenario):
        out = tmp_path / "run"
        rc = main([
            "sweep", str(fast_scenario), "--axis", "direct_snr_db",
            "--points", "12:30:3", "--trials", "1000", "--seed", "7",
            "--out", str(out), "--quiet",
        ])
        assert rc == 0
        for name in ("perfect_csi", "proposed_m2"):
            csv = (out / f"direct_snr_db__{name}.csv").read_text().splitlines()
            assert csv[0] == CSV_HEADER
            assert len(csv) == 1 + 7  # header + one row per point
            points = [float(r.split(",")[0]) for r in csv[1:]]
            assert points == sorted(points)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["master_seed"] == 7
        assert manifest["constellation_moments"]["gamma1"] == pytest.approx(17 / 9)

    def test_reruns_are_byte_identical(self, tmp_path, fast_scenario):
        a, b = tmp_path / "a", tmp_path / "b"
        argv = [
            "sweep", str(fast_scenario), "--points", "16,24", "--trials", "1000",
            "--seed", "3", "--quiet",
        ]
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path, fast_scenario):
        a, b = tmp_path / "w1", tmp_path / "w2"
        argv = [
            "sweep", str(fast_scenario), "--points", "20", "--trials", "1024",
            "--seed", "5", "--quiet",
        ]
        assert main(argv + ["--out", str(a), "--workers", "1"]) == 0
        assert main(argv + ["--out", str(b), "--workers", "2"]) == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_manifest_round_trip(self, tmp_path, fast_scenario):
        first, second = tmp_path / "first", tmp_path / "second"
        assert main([
            "sweep", str(fast_scenario), "--points", "18,26", "--trials", "1000",
            "--seed", "11", "--out", str(first), "--quiet",
        ]) == 0
        assert main([
            "sweep", "--from-manifest", str(first / "manifest.json"),
            "--out", str(second), "--quiet",
        ]) == 0
        for f in sorted(p.name for p in first.iterdir()):
            assert (first / f).read_bytes() == (second / f).read_bytes()

    def test_nine_significant_digits(self, tmp_path, fast_scenario):
        out = tmp_path / "digits"
        assert main([
            "sweep", str(fast_scenario), "--points", "14", "--trials", "1000",
            "--seed", "2", "--out", str(out), "--quiet",
        ]) == 0
        row = (out / "direct_snr_db__perfect_csi.csv").read_text().splitlines()[1]
        ber = row.split(",")[3]
        assert ber == format(float(ber), ".9g")

    def test_sync_axis_21_rows(self, tmp_path):
        scen = tmp_path / "sync.txt"
        scen.write_text(
            "direct_snr_db = 24\ndist_fwd = 0.12\ntrials = 1000\n"
            "receivers = perfect_csi\nwith_theory = false\nn_max = 4\n"
        )
        out = tmp_path / "sync_out"
        rc = main([
            "sweep", str(scen), "--axis", "sync_error_samples", "--points", "0:20:1",
            "--trials", "1000", "--seed", "4", "--out", str(out), "--quiet",
        ])
        assert rc == 0
        csv = (out / "sync_error_samples__perfect_csi.csv").read_text().splitlines()
        assert len(csv) == 1 + 21

    def test_bad_scenario_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense = 1\n")
        rc = main(["sweep", str(bad), "--out", str(tmp_path / "x"), "--quiet"])
        assert rc == 1
        assert "bad.txt:1" in capsys.readouterr().err

    def test_missing_scenario_exits_1(self, tmp_path):
        assert main(["sweep", "no_such_scenario", "--out", str(tmp_path / "x")]) == 1

    def test_unknown_receiver_exits_2(self, tmp_path, fast_scenario):
        rc = main([
            "sweep", str(fast_scenario), "--receivers", "nope", "--points", "20",
            "--trials", "1000", "--out", str(tmp_path / "x"), "--quiet",
        ])
        assert rc == 2


class TestTheoryCommand:
    def test_outputs_and_slopes(self, tmp_path):
        out = tmp_path / "theory"
        rc = main(["theory", "paper_default", "--points", "0:40:2", "--out", str(out), "--quiet"])
        assert rc == 0
        from srofdm.theory import fit_diversity_slope

        for l_b in (1, 2, 4):
            rows = (out / f"theory__avg_secondary_lb{l_b}.csv").read_text().splitlines()[1:]
            pts = np.array([float(r.split(",")[0]) for r in rows])
            ber = np.array([float(r.split(",")[-1]) for r in rows])
            hi = pts >= 30
            assert fit_diversity_slope(pts[hi], ber[hi]) == pytest.approx(l_b, rel=0.05)

    def test_estimated_never_beats_perfect(self, tmp_path):
        out = tmp_path / "theory2"
        assert main(["theory", "paper_default", "--points", "0:40:2", "--out", str(out), "--quiet"]) == 0
        perfect = [
            float(r.split(",")[-1])
            for r in (out / "theory__secondary_perfect.csv").read_text().splitlines()[1:]
        ]
        for name in ("m1", "m2"):
            est = [
                float(r.split(",")[-1])
                for r in (out / f"theory__secondary_{name}.csv").read_text().splitlines()[1:]
            ]
            assert all(e >= p - 1e-15 for e, p in zip(est, perfect))

    def test_manifest_echoes_moments(self, tmp_path):
        out = tmp_path / "theory3"
        assert main(["theory", "paper_default", "--out", str(out), "--quiet"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["constellation_moments"]["gamma1"] == pytest.approx(1.888889, rel=1e-6)


class TestSingleCommand:
    def test_verbose_dump(self, tmp_path, fast_scenario, capsys):
        rc = main(["single", str(fast_scenario), "--trial", "3", "--seed", "9"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "P_T=" in text and "perfect_csi:" in text and "bit errors" in text
