import math

import numpy as np
import pytest
from scipy import stats

from jcaslab import cli, harness
from jcaslab.errors import ConfigError
from jcaslab.system_model import Scenario

MINIMAL = "schema = 1\n"


@pytest.fixture(scope="module")
def fast():
    return Scenario(theta_step=10.0, draws=4, trials=4000)


class TestScenarioFiles:
    def test_builtin_default(self):
        sc = harness.parse_scenario(cli.default_scenario_text())
        assert sc == Scenario()

    def test_minimal_file_gives_defaults(self):
        assert harness.parse_scenario(MINIMAL) == Scenario()

    def test_round_trip(self):
        sc = Scenario(mode="QAMCM", K=8, ue_angles=(40.0, 60.0), seed=9)
        assert harness.parse_scenario(harness.dump_scenario(sc)) == sc

    def test_db_keys(self):
        sc = harness.parse_scenario(MINIMAL + "[sensing]\nsigma_ns2_db = 10.0\nsnr_db = -3.0\n")
        assert sc.sigma_ns2 == pytest.approx(10.0)
        assert sc.sigma_s2 == pytest.approx(10.0 * 10 ** -0.3)

    @pytest.mark.parametrize("text,msg", [
        ("[array]\nK = 4\n", "schema"),
        ("schema = 2\n", "schema"),
        (MINIMAL + "[sensing]\nsigma_ns2 = -1.0\n", "sigma_ns2"),
        (MINIMAL + "[sensing]\nfoo = 1\n", "foo"),
        (MINIMAL + "[radar]\nK = 4\n", "radar"),
        (MINIMAL + "[sensing]\nsnr_db = 0.0\nsigma_s2 = 1.0\n", "snr_db"),
    ])
    def test_rejects(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            harness.parse_scenario(text)

    def test_parse_error_reports_position(self):
        with pytest.raises(ConfigError, match=r"line 3"):
            harness.parse_scenario("schema = 1\n[array]\nK = = 4\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            harness.load_scenario(tmp_path / "none.toml")

    def test_hash_tracks_content(self):
        assert harness.scenario_hash(Scenario()) == harness.scenario_hash(Scenario())
        assert harness.scenario_hash(Scenario()) != harness.scenario_hash(Scenario(seed=2))


class TestCsv:
    def test_header_and_provenance(self, tmp_path):
        res = harness.cmd_sinr(Scenario(), [0.0, 1.0])
        path = harness.write_csv(res, tmp_path)
        lines = open(path).read().splitlines()
        comments = [ln for ln in lines if ln.startswith("#")]
        assert any(ln.startswith("# scenario_hash: ") for ln in comments)
        assert any(ln.startswith("# seed: ") for ln in comments)
        data = lines[len(comments):]
        assert data[0] == "h_target,sinr_c_db,sinr_cs_max_db,sinr_cs_min_db,sinr_cs_mean_db"
        assert len(data) == 3

    def test_sinr_values(self):
        rows = harness.cmd_sinr(Scenario(), [0.0, 1.0]).rows
        assert rows[0][1:] == pytest.approx((20.0,) * 4)
        assert rows[1][4] == pytest.approx(23.0103, abs=1e-4)
        # exact cancellation up to rounding
        assert rows[1][3] < -200

    @pytest.mark.parametrize("call", [
        lambda sc: harness.cmd_roc(sc, []),
        lambda sc: harness.cmd_sinr(sc, []),
        lambda sc: harness.cmd_pd_sweep(sc, "snr", []),
        lambda sc: harness.cmd_pd_sweep(sc, "angle", [1.0]),
        lambda sc: harness.cmd_beampattern(sc, [95.0]),
    ])
    def test_bad_grids(self, call):
        with pytest.raises(ConfigError):
            call(Scenario())


class TestCommands:
    def test_roc_rows_identical_across_threads(self, fast):
        text = [harness.data_rows_text(harness.cmd_roc(fast, [0.01, 0.1], threads=t))
                for t in (1, 4, 8)]
        assert text[0] == text[1] == text[2]

    def test_zero_signal_roc_is_diagonal(self, fast):
        pf = [1e-3, 0.1, 0.5]
        res = harness.cmd_roc(fast.with_(sigma_s2=0.0), pf, methods=("closed_form", "imhof", "clt"))
        gamma = math.sqrt(8 / (2 * fast.K * fast.N_block))
        for p_f, _, method, p_d, _ in res.rows:
            if method == "clt":
                # the Gaussian null misses the chi-square skewness by the first Edgeworth term
                z = stats.norm.isf(p_f)
                p_f = p_f - gamma / 6 * (z * z - 1) * stats.norm.pdf(z)
                assert p_d == pytest.approx(p_f, abs=3e-4)
            else:
                assert p_d == pytest.approx(p_f, abs=1e-9)

    def test_zero_signal_pdf_hypotheses_coincide(self, fast):
        res = harness.cmd_pdf(fast.with_(sigma_s2=0.0, trials=2000), points=32, bins=12)
        pdf0 = np.array([r[1] for r in res.rows])
        pdf1 = np.array([r[2] for r in res.rows])
        np.testing.assert_allclose(pdf0, pdf1, rtol=1e-10, atol=1e-300)

    def test_pd_sweep_snr_increasing(self, fast):
        res = harness.cmd_pd_sweep(fast, "snr", [-10.0, -5.0, 0.0], methods=("clt",))
        for mode in ("CM", "QAM"):
            vals = [r[3] for r in res.rows if r[1] == mode]
            assert np.all(np.diff(vals) > 0)

    def test_allocation_sweep_range(self, fast):
        with pytest.raises(ConfigError):
            harness.cmd_pd_sweep(fast, "allocation", [1.5])

    def test_beampattern(self):
        res = harness.cmd_beampattern(Scenario(), [-10.0, 0.0, 10.0], modes=("CM",))
        assert len(res.rows) == 9
        assert res.summary["ripple_db_CM"] < 3.0


class TestCli:
    def test_floats(self):
        assert cli._floats("0:0.2:0.1") == [0.0, 0.1, 0.2]
        assert cli._floats("1e-3, 0.5") == [1e-3, 0.5]
        with pytest.raises(ConfigError):
            cli._floats("a,b")

    def test_sinr_command(self, tmp_path, capsys):
        assert cli.main(["sinr", "--out", str(tmp_path), "--grid", "0,0.5"]) == 0
        assert (tmp_path / "sinr.csv").exists()

    def test_bad_scenario_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(MINIMAL + "[sensing]\nsigma_ns2 = -1.0\n")
        assert cli.main(["sinr", "--scenario", str(bad), "--out", str(tmp_path)]) == 1
        assert "sigma_ns2" in capsys.readouterr().err

    def test_unknown_method_exit_code(self, tmp_path, capsys):
        assert cli.main(["roc", "--methods", "magic", "--out", str(tmp_path)]) == 1

    def test_init_writes_loadable_file(self, tmp_path, capsys):
        out = tmp_path / "s.toml"
        assert cli.main(["init", "--out", str(out)]) == 0
        assert harness.load_scenario(out) == Scenario()

    def test_validate(self, tmp_path, capsys):
        code = cli.main(["validate", "--out", str(tmp_path), "--trials", "20000", "--draws", "3",
                         "--threads", "2"])
        out = capsys.readouterr().out
        assert code == 0, out
        assert "FAIL" not in out and "all_passed: True" in out
