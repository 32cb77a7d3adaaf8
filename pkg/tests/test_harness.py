import json

import numpy as np
import pytest

from swanopt.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentSpec,
    OptimizerDescriptor,
    ProblemSpec,
    parse_config,
    read_curve_csv,
    run_experiment,
)
from swanopt.optimizers import OptimizerConfig


def quadratic_spec(**kwargs):
    defaults = dict(
        problem=ProblemSpec(kind="quadratic", seed=3, m=10, n=10, kappa=100.0),
        optimizers=(
            OptimizerDescriptor("gd", OptimizerConfig(kind="gd_optimal")),
            OptimizerDescriptor("adam", OptimizerConfig(kind="adam", learning_rate=0.1)),
        ),
        steps=50,
        record_every=5,
        seed=1,
    )
    defaults.update(kwargs)
    return ExperimentSpec(**defaults)


class TestSpecValidation:
    def test_duplicate_names(self):
        with pytest.raises(ConfigError, match="unique"):
            quadratic_spec(
                optimizers=(
                    OptimizerDescriptor("x", OptimizerConfig(kind="sgd")),
                    OptimizerDescriptor("x", OptimizerConfig(kind="adam")),
                )
            )

    def test_bad_steps(self):
        with pytest.raises(ConfigError, match="steps"):
            quadratic_spec(steps=0)

    def test_bad_problem_kind(self):
        with pytest.raises(ConfigError, match="problem.kind"):
            ProblemSpec(kind="rosenbrock")

    def test_curvature_kind_needs_quadratic(self):
        spec = quadratic_spec(
            problem=ProblemSpec(kind="rastrigin", m=6),
            optimizers=(OptimizerDescriptor("n", OptimizerConfig(kind="newton")),),
        )
        with pytest.raises(ConfigError, match="quadratic"):
            run_experiment(spec)


class TestRunExperiment:
    def test_kappa_one_converges_in_one_step(self):
        spec = quadratic_spec(
            problem=ProblemSpec(kind="quadratic", seed=0, m=8, n=8, kappa=1.0),
            optimizers=(OptimizerDescriptor("gd", OptimizerConfig(kind="gd_optimal")),),
            steps=5,
            record_every=1,
        )
        result = run_experiment(spec)
        assert result.summary["optimizers"]["gd"]["steps_to_threshold"] == 1

    def test_byte_identical_reruns(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        run_experiment(quadratic_spec(out_dir=str(out_a)))
        run_experiment(quadratic_spec(out_dir=str(out_b)))
        for name in ("gd.csv", "adam.csv", "summary.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_csv_contract(self, tmp_path):
        run_experiment(quadratic_spec(out_dir=str(tmp_path)))
        lines = (tmp_path / "gd.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        first = lines[1].split(",")
        assert len(first) == 8
        assert first[0] == "5"
        # floats are printed at 17 significant digits and round-trip exactly
        steps, losses = read_curve_csv(tmp_path / "gd.csv")
        assert steps[0] == 5.0 and np.isfinite(losses).all()

    def test_divergence_flagged_without_crash(self):
        spec = quadratic_spec(
            optimizers=(
                OptimizerDescriptor("bad", OptimizerConfig(kind="sgd", learning_rate=1e3)),
                OptimizerDescriptor("gd", OptimizerConfig(kind="gd_optimal")),
            ),
            steps=200,
        )
        result = run_experiment(spec)
        assert result.summary["optimizers"]["bad"]["diverged"]
        assert result.summary["optimizers"]["bad"]["diverged_at"] is not None
        assert not result.summary["optimizers"]["gd"]["diverged"]

    def test_shared_initialization(self):
        spec = quadratic_spec(record_every=1, steps=1)
        result = run_experiment(spec)
        # both optimizers see the same w0, so the first gradient norm matches
        g_gd = result.trajectories["gd"][0].grad_fro
        g_adam = result.trajectories["adam"][0].grad_fro
        assert g_gd == g_adam

    def test_whitened_diag_reports_prediction(self):
        spec = quadratic_spec(
            optimizers=(
                OptimizerDescriptor("w", OptimizerConfig(kind="whitened_gd_optimal")),
            ),
            steps=3,
            record_every=1,
        )
        rec = run_experiment(spec).trajectories["w"][0]
        assert np.isfinite(rec.diag1) and 0.0 <= rec.diag1 < 1.0

    def test_json_format(self, tmp_path):
        run_experiment(quadratic_spec(out_dir=str(tmp_path), file_format="json"))
        rows = json.loads((tmp_path / "gd.json").read_text())
        assert rows[0]["step"] == 5 and "loss" in rows[0]

    def test_summary_contents(self, tmp_path):
        run_experiment(quadratic_spec(out_dir=str(tmp_path)))
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["seed"] == 1
        assert len(summary["config_hash"]) == 16
        assert set(summary["optimizers"]) == {"gd", "adam"}


GOOD_CONFIG = """
[experiment]
steps = 20
record_every = 4
seed = 2
threshold = 1e-6

[problem]
kind = quadratic
m = 6
n = 9
kappa = 50
seed = 5

[optimizer:gd]
kind = gd_optimal

[optimizer:swan]
kind = swan
learning_rate = 0.05
whiten_mode = exact_eig
swan_rescale = true

[optimizer:decayed_sgd]
kind = sgd
learning_rate = 0.01
schedule = linear_decay
warmup_fraction = 0.1
"""


class TestConfigParsing:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(GOOD_CONFIG)
        spec = parse_config(path)
        assert spec.steps == 20
        assert spec.problem.kappa == 50.0
        assert [d.name for d in spec.optimizers] == ["gd", "swan", "decayed_sgd"]
        assert spec.optimizers[1].config.whitening_cfg.mode == "exact_eig"
        assert spec.optimizers[2].schedule == "linear_decay"
        result = run_experiment(spec)
        assert set(result.trajectories) == {"gd", "swan", "decayed_sgd"}

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(GOOD_CONFIG + "\n[optimizer:x]\nkind = sgd\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="momentum"):
            parse_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(GOOD_CONFIG + "\n[scheduler]\nkind = cosine\n")
        with pytest.raises(ConfigError, match="scheduler"):
            parse_config(path)

    def test_bad_value_reported(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(GOOD_CONFIG.replace("steps = 20", "steps = twenty"))
        with pytest.raises(ConfigError, match="steps"):
            parse_config(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config("/nonexistent/exp.cfg")

    def test_missing_kind(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[problem]\nm = 4\n[optimizer:a]\nkind = sgd\n")
        with pytest.raises(ConfigError, match="kind"):
            parse_config(path)
