import logging

import numpy as np
import pandas as pd
import pytest

from controllers import cli_app
from controllers.cli_app import CliApp
from controllers.selftest import CheckResult
from models.errors import ConfigInvalid
from models.run_config import load_run_config
from utils.config import EXIT_ESTIMATION, EXIT_OK, EXIT_SELFTEST_FAILED, EXIT_VALIDATION, SEED_ENV_VAR

CAMPAIGN = """
[model]
estimand = glm0
link = identity
coords = 1

[design]
kind = gaussian-identity

[sim]
n_grid = 60
ratio = 0.25
replicates = 1
seed = 3

[output]
directory = out
"""


@pytest.fixture
def app():
    return CliApp(threads=1)


@pytest.fixture
def logistic_csv(tmp_path):
    rng = np.random.default_rng(0)
    n, p = 400, 20
    X = rng.normal(size=(n, p))
    beta = np.full(p, 1 / np.sqrt(p))
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ beta))).astype(int)
    frame = pd.DataFrame(X, columns=[f"x{j}" for j in range(1, p + 1)])
    frame.insert(0, "y", y)
    path = tmp_path / "data.csv"
    frame.to_csv(path, index=False)
    return path


def _write(tmp_path, text, name="campaign.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestEstimate:

    def test_missing_data_argument(self, app):
        assert app.run(["estimate", "--estimand", "glm0", "--link", "logistic"]) == EXIT_VALIDATION

    def test_zero_mean_logistic(self, app, logistic_csv, tmp_path):
        out = tmp_path / "report.csv"
        code = app.run(["estimate", "--data", str(logistic_csv), "--estimand", "glm0",
                        "--link", "logistic", "--coords", "1,2", "--out", str(out)])
        assert code == EXIT_OK
        report = pd.read_csv(out)
        assert list(report.columns) == ["key", "value"]
        keys = set(report["key"])
        assert {"gamma2_beta", "beta_1", "beta_2"} <= keys

    def test_mar_without_a(self, app, logistic_csv, caplog):
        with caplog.at_level(logging.ERROR):
            code = app.run(["estimate", "--data", str(logistic_csv), "--estimand", "mar", "--link", "logistic"])
        assert code == EXIT_VALIDATION
        assert "MissingResponseA" in caplog.text

    def test_sigma_dimension_checked(self, app, logistic_csv, tmp_path):
        sigma = tmp_path / "sigma.csv"
        pd.DataFrame(np.eye(3)).to_csv(sigma, header=False, index=False)
        code = app.run(["estimate", "--data", str(logistic_csv), "--estimand", "glm",
                        "--link", "logistic", "--sigma", str(sigma)])
        assert code == EXIT_VALIDATION

    def test_estimation_error_exit_code(self, app, logistic_csv, monkeypatch):
        from models.errors import NoConvergence

        def fail(*args, **kwargs):
            raise NoConvergence("stalled")

        monkeypatch.setattr(cli_app, "estimate", fail)
        code = app.run(["estimate", "--data", str(logistic_csv), "--estimand", "glm", "--link", "logistic"])
        assert code == EXIT_ESTIMATION

    def test_overflowing_moment_is_a_validation_error(self, app, tmp_path, caplog):
        rng = np.random.default_rng(1)
        frame = pd.DataFrame(1e160 * (1.0 + rng.random((40, 3))), columns=["x1", "x2", "x3"])
        frame.insert(0, "y", 1e160 * (1.0 + rng.random(40)))
        path = tmp_path / "huge.csv"
        frame.to_csv(path, index=False)
        with caplog.at_level(logging.ERROR), np.errstate(over="ignore", invalid="ignore"):
            code = app.run(["estimate", "--data", str(path), "--estimand", "glm0", "--link", "identity"])
        assert code == EXIT_VALIDATION
        assert "NonFiniteMoment" in caplog.text


class TestSimulate:

    def test_unknown_key(self, app, tmp_path):
        path = _write(tmp_path, CAMPAIGN.replace("coords = 1", "coords = 1\ncolour = blue"))
        assert app.run(["simulate", "--config", str(path)]) == EXIT_VALIDATION

    def test_smoke_run_is_reproducible(self, app, tmp_path, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        path = _write(tmp_path, CAMPAIGN)
        assert app.run(["simulate", "--config", str(path)]) == EXIT_OK
        replicates = tmp_path / "out" / "replicates.csv"
        first = replicates.read_bytes()
        assert (tmp_path / "out" / "summary.csv").exists()
        assert app.run(["simulate", "--config", str(path)]) == EXIT_OK
        assert replicates.read_bytes() == first

    def test_seed_override(self, app, tmp_path, monkeypatch):
        path = _write(tmp_path, CAMPAIGN)
        monkeypatch.setenv(SEED_ENV_VAR, "3")
        app.run(["simulate", "--config", str(path)])
        same_seed = (tmp_path / "out" / "replicates.csv").read_bytes()
        monkeypatch.setenv(SEED_ENV_VAR, "4")
        app.run(["simulate", "--config", str(path)])
        assert (tmp_path / "out" / "replicates.csv").read_bytes() != same_seed

    def test_bad_seed_override(self, app, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "abc")
        assert app.run(["simulate", "--config", str(_write(tmp_path, CAMPAIGN))]) == EXIT_VALIDATION


class TestRunConfig:

    def test_parses_campaign(self, tmp_path):
        config = load_run_config(_write(tmp_path, CAMPAIGN))
        assert config.estimand == "glm0"
        assert config.n_grid == (60,)
        assert config.output_dir == tmp_path / "out"
        sim = config.to_sim_config(threads=2, seed=11)
        assert sim.seed == 11 and sim.threads == 2 and sim.link.name == "identity"

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(_write(tmp_path, CAMPAIGN + "\n[plot]\nwidth = 3\n"))

    def test_missing_sigma_file(self, tmp_path):
        text = CAMPAIGN.replace("kind = gaussian-identity", "kind = gaussian-general\nsigma = nowhere.csv")
        with pytest.raises(ConfigInvalid):
            load_run_config(_write(tmp_path, text))

    def test_bad_number(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(_write(tmp_path, CAMPAIGN.replace("ratio = 0.25", "ratio = quarter")))

    def test_comma_lists(self, tmp_path):
        text = CAMPAIGN.replace("n_grid = 60", "n_grid = 60, 80").replace("coords = 1", "coords = 1, 3")
        text = text.replace("kind = gaussian-identity", "kind = gaussian-identity\nmu = 0.1, 0.2")
        config = load_run_config(_write(tmp_path, text))
        assert config.n_grid == (60, 80)
        assert config.coords == (1, 3)
        np.testing.assert_allclose(config.mu, [0.1, 0.2])

    def test_defaults_fill_missing_keys(self, tmp_path):
        config = load_run_config(_write(tmp_path, CAMPAIGN))
        assert config.replicates == 1
        assert config.coef_scheme == "dense-uniform"
        assert config.mu_paths == "both"
        assert not config.freeze_coefficients

    def test_key_outside_section(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(_write(tmp_path, "seed = 4\n" + CAMPAIGN))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(tmp_path / "absent.ini")

    def test_unknown_key_in_known_section(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(_write(tmp_path, CAMPAIGN.replace("seed = 3", "seed = 3\nthreads = 4")))


class TestSelftest:

    def test_exit_code_on_failure(self, app, monkeypatch):
        monkeypatch.setattr(cli_app, "run_selftest", lambda quick, threads: [CheckResult("broken", False, "x")])
        assert app.run(["selftest", "--quick"]) == EXIT_SELFTEST_FAILED

    def test_quick_mode_skips_monte_carlo(self, app, monkeypatch):
        from controllers import selftest

        def forbidden(*args, **kwargs):
            raise AssertionError("Monte-Carlo suite must not run in quick mode")

        monkeypatch.setattr(selftest, "run_oracle_suite", forbidden)
        assert app.run(["selftest", "--quick"]) == EXIT_OK
