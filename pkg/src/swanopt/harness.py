"""Declarative experiment runner.

An :class:`ExperimentSpec` names a problem, a list of optimizers, a step
budget and output settings; :func:`run_experiment` executes every optimizer
from one shared seeded initialization, records a trajectory per optimizer,
and (when an output directory is set) writes one CSV/JSON file per optimizer
plus a JSON summary. Identical spec and seed produce byte-identical files.

Specs can be built in code or parsed from a flat INI-style config file with
one ``[optimizer:NAME]`` section per optimizer (see configs/ for the schema).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .gradient_ops import GradNormConfig, WhiteningConfig, orthogonalize
from .matrixops import random_matrix, sym_eig
from .optimizers import (
    OptimizerConfig,
    adam_step,
    init_state,
    linear_warmup_decay,
    sgd_step,
    signed_step,
    swan_step,
    whitened_optimal_learning_rate,
)
from .problems import QuadraticProblem, RastriginProblem
from .theory import predict_whitened_contraction

__all__ = [
    "ConfigError",
    "ProblemSpec",
    "OptimizerDescriptor",
    "ExperimentSpec",
    "TrajectoryRecord",
    "ExperimentResult",
    "run_experiment",
    "parse_config",
    "write_csv",
    "read_curve_csv",
    "CSV_HEADER",
]

CSV_HEADER = "step,loss,loss_minus_opt,grad_fro,update_fro,eta,diag1,diag2"

_PROBLEM_KINDS = ("quadratic", "rastrigin")
_SCHEDULES = ("constant", "linear_decay")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    seed: int = 0
    m: int = 50
    n: int = 50
    kappa: float = 1.0
    c_scale: float = 0.0
    amplitude: float = 10.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _PROBLEM_KINDS:
            raise ConfigError(f"problem.kind must be one of {_PROBLEM_KINDS}, got {self.kind!r}")

    def build(self):
        if self.kind == "quadratic":
            return QuadraticProblem.seeded(self.m, self.n, self.kappa, self.seed, self.c_scale)
        return RastriginProblem(amplitude=self.amplitude, size=self.m)


@dataclass(frozen=True)
class OptimizerDescriptor:
    name: str
    config: OptimizerConfig
    orthogonal_init: bool = False
    schedule: str = "constant"
    warmup_fraction: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ConfigError("optimizer name must be non-empty")
        if self.schedule not in _SCHEDULES:
            raise ConfigError(f"schedule must be one of {_SCHEDULES}, got {self.schedule!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    problem: ProblemSpec
    optimizers: tuple[OptimizerDescriptor, ...]
    steps: int = 100
    record_every: int = 1
    seed: int = 0
    threshold: float = 1e-6
    out_dir: str | None = None
    file_format: str = "csv"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        names = [d.name for d in self.optimizers]
        if len(names) != len(set(names)):
            raise ConfigError(f"optimizer names must be unique, got {names}")
        if not self.optimizers:
            raise ConfigError("at least one optimizer is required")
        if self.file_format not in ("csv", "json"):
            raise ConfigError(f"file_format must be csv or json, got {self.file_format!r}")


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    loss: float
    loss_minus_opt: float
    grad_fro: float
    update_fro: float
    eta: float
    diag1: float = float("nan")
    diag2: float = float("nan")
    wall_time: float = 0.0


@dataclass(frozen=True)
class ExperimentResult:
    trajectories: dict[str, list[TrajectoryRecord]]
    summary: dict


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_csv(path: Path, records: list[TrajectoryRecord]) -> None:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [str(r.step)]
                + [
                    _fmt(v)
                    for v in (
                        r.loss,
                        r.loss_minus_opt,
                        r.grad_fro,
                        r.update_fro,
                        r.eta,
                        r.diag1,
                        r.diag2,
                    )
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, records: list[TrajectoryRecord]) -> None:
    rows = [
        {
            "step": r.step,
            "loss": r.loss,
            "loss_minus_opt": r.loss_minus_opt,
            "grad_fro": r.grad_fro,
            "update_fro": r.update_fro,
            "eta": r.eta,
            "diag1": None if np.isnan(r.diag1) else r.diag1,
            "diag2": None if np.isnan(r.diag2) else r.diag2,
        }
        for r in records
    ]
    path.write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (step, loss) columns back from a trajectory CSV."""
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("step,"):
        raise ConfigError(f"{path} is not a trajectory CSV")
    steps, losses = [], []
    for line in text[1:]:
        parts = line.split(",")
        steps.append(float(parts[0]))
        losses.append(float(parts[1]))
    return np.array(steps), np.array(losses)


def spec_hash(spec: ExperimentSpec) -> str:
    """Hash of the scientific configuration; output location/format excluded."""

    def encode(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {
                k: encode(getattr(obj, k))
                for k in sorted(obj.__dataclass_fields__)
                if k not in ("out_dir", "file_format")
            }
        if isinstance(obj, (tuple, list)):
            return [encode(v) for v in obj]
        return obj

    payload = json.dumps(encode(spec), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _build_stepper(desc: OptimizerDescriptor, problem):
    """Return (step_fn, needs_hessian) where step_fn(w, g, state, lr) ->
    (w_next, state, effective_eta, diag1)."""
    cfg = desc.config
    kind = cfg.kind
    quadratic = isinstance(problem, QuadraticProblem)
    if kind in ("gd_optimal", "newton", "whitened_gd_optimal") and not quadratic:
        raise ConfigError(f"optimizer {desc.name!r} ({kind}) needs a quadratic problem")

    if kind == "gd_optimal":
        vals = sym_eig(problem.h).eigenvalues
        eta = 2.0 / (vals[0] + vals[-1])

        def step(w, g, state, lr):
            return w - eta * g, state, eta, float("nan")

        return step
    if kind == "newton":
        dec = sym_eig(problem.h)
        h_inv = dec.eigenvectors @ np.diag(1.0 / dec.eigenvalues) @ dec.eigenvectors.T

        def step(w, g, state, lr):
            return w - lr * (h_inv @ g), state, lr, float("nan")

        return step
    if kind == "whitened_gd_optimal":

        def step(w, g, state, lr):
            eta = whitened_optimal_learning_rate(problem.h, g)
            delta = orthogonalize(g, WhiteningConfig(mode="exact_eig"))
            pred = predict_whitened_contraction(problem, w) if not np.any(problem.c) else float("nan")
            return w - eta * delta, state, eta, pred

        return step
    if kind == "adam":

        def step(w, g, state, lr):
            w2, state2 = adam_step(w, g, state, replace(cfg, learning_rate=lr))
            return w2, state2, lr, float("nan")

        return step
    if kind == "swan":

        def step(w, g, state, lr):
            return swan_step(w, g, replace(cfg, learning_rate=lr)), state, lr, float("nan")

        return step
    if kind == "sgd":

        def step(w, g, state, lr):
            return sgd_step(w, g, replace(cfg, learning_rate=lr)), state, lr, float("nan")

        return step
    if kind == "signed_sgd":

        def step(w, g, state, lr):
            return signed_step(w, g, replace(cfg, learning_rate=lr)), state, lr, float("nan")

        return step
    raise ConfigError(f"unhandled optimizer kind {kind!r}")


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every optimizer in the spec from one shared initialization.

    A non-finite loss terminates that optimizer's run and flags it as
    diverged in the summary; other optimizers continue. When ``out_dir`` is
    set, one trajectory file per optimizer and a ``summary.json`` are written.
    """
    problem = spec.problem.build()
    shape = problem.shape
    w0_shared = spec.problem.init_scale * random_matrix(shape[0], shape[1], spec.seed)
    l_star = problem.l_star if isinstance(problem, QuadraticProblem) else 0.0

    trajectories: dict[str, list[TrajectoryRecord]] = {}
    rows = {}
    for desc in spec.optimizers:
        w = w0_shared.copy()
        if desc.orthogonal_init:
            w = orthogonalize(w, WhiteningConfig(mode="exact_eig"))
        stepper = _build_stepper(desc, problem)
        state = init_state(desc.config, shape)
        records: list[TrajectoryRecord] = []
        start = time.perf_counter()
        initial_excess = problem.loss(w) - l_star
        diverged_at = None
        steps_to_threshold = None
        for t in range(1, spec.steps + 1):
            g = problem.grad(w)
            if desc.schedule == "linear_decay":
                lr = linear_warmup_decay(
                    t - 1, spec.steps, desc.config.learning_rate, desc.warmup_fraction
                )
            else:
                lr = desc.config.learning_rate
            w_next, state, eta, diag1 = stepper(w, g, state, lr)
            loss = problem.loss(w_next)
            if not np.isfinite(loss):
                diverged_at = t
                break
            excess = loss - l_star
            if (
                steps_to_threshold is None
                and initial_excess > 0
                and excess / initial_excess <= spec.threshold
            ):
                steps_to_threshold = t
            if t % spec.record_every == 0 or t == spec.steps:
                records.append(
                    TrajectoryRecord(
                        step=t,
                        loss=loss,
                        loss_minus_opt=excess,
                        grad_fro=float(np.linalg.norm(g)),
                        update_fro=float(np.linalg.norm(w_next - w)),
                        eta=eta,
                        diag1=diag1,
                        wall_time=time.perf_counter() - start,
                    )
                )
            w = w_next
        trajectories[desc.name] = records
        rows[desc.name] = {
            "final_loss": records[-1].loss if records else float("nan"),
            "final_loss_minus_opt": records[-1].loss_minus_opt if records else float("nan"),
            "steps_to_threshold": steps_to_threshold,
            "diverged": diverged_at is not None,
            "diverged_at": diverged_at,
        }
    summary = {
        "seed": spec.seed,
        "threshold": spec.threshold,
        "config_hash": spec_hash(spec),
        "optimizers": rows,
    }
    if spec.out_dir is not None:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, records in trajectories.items():
            if spec.file_format == "csv":
                write_csv(out / f"{name}.csv", records)
            else:
                _write_json(out / f"{name}.json", records)
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return ExperimentResult(trajectories=trajectories, summary=summary)


# --- config file parsing -----------------------------------------------------

_EXPERIMENT_FIELDS = {
    "steps": int,
    "record_every": int,
    "seed": int,
    "threshold": float,
    "out_dir": str,
    "format": str,
}
_PROBLEM_FIELDS = {
    "kind": str,
    "seed": int,
    "m": int,
    "n": int,
    "kappa": float,
    "c_scale": float,
    "amplitude": float,
    "init_scale": float,
}
_OPTIMIZER_FIELDS = {
    "kind": str,
    "learning_rate": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_epsilon": float,
    "swan_rescale": bool,
    "ablation": str,
    "gradnorm_subtract_mean": bool,
    "gradnorm_epsilon": float,
    "whiten_mode": str,
    "whiten_iterations": int,
    "whiten_step_size": float,
    "whiten_pre_normalize": bool,
    "whiten_update_order": str,
    "orthogonal_init": bool,
    "schedule": str,
    "warmup_fraction": float,
}


def _convert(section: str, key: str, raw: str, fields: dict):
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    typ = fields[key]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} in [{section}]: {raw!r}") from exc


def parse_config(path) -> ExperimentSpec:
    """Parse an INI experiment config into an :class:`ExperimentSpec`.

    Sections: ``[experiment]``, ``[problem]``, and one ``[optimizer:NAME]``
    per optimizer. Unknown sections or keys are rejected by name.
    """
    import configparser

    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    exp_kwargs: dict = {}
    prob_kwargs: dict = {}
    opt_descs: list[OptimizerDescriptor] = []
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                val = _convert(section, key, raw, _EXPERIMENT_FIELDS)
                exp_kwargs["file_format" if key == "format" else key] = val
        elif section == "problem":
            for key, raw in parser.items(section):
                prob_kwargs[key] = _convert(section, key, raw, _PROBLEM_FIELDS)
        elif section.startswith("optimizer:"):
            name = section.split(":", 1)[1]
            vals = {
                key: _convert(section, key, raw, _OPTIMIZER_FIELDS)
                for key, raw in parser.items(section)
            }
            if "kind" not in vals:
                raise ConfigError(f"section [{section}] is missing 'kind'")
            gn = GradNormConfig(
                subtract_mean=vals.pop("gradnorm_subtract_mean", True),
                epsilon=vals.pop("gradnorm_epsilon", 1e-8),
            )
            wh = WhiteningConfig(
                iterations=vals.pop("whiten_iterations", 10),
                step_size=vals.pop("whiten_step_size", 0.8),
                mode=vals.pop("whiten_mode", "newton_schulz"),
                pre_normalize=vals.pop("whiten_pre_normalize", True),
                update_order=vals.pop("whiten_update_order", "chained"),
            )
            ortho = vals.pop("orthogonal_init", False)
            schedule = vals.pop("schedule", "constant")
            warmup = vals.pop("warmup_fraction", 0.0)
            try:
                cfg = OptimizerConfig(grad_norm_cfg=gn, whitening_cfg=wh, **vals)
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
            opt_descs.append(
                OptimizerDescriptor(
                    name=name,
                    config=cfg,
                    orthogonal_init=ortho,
                    schedule=schedule,
                    warmup_fraction=warmup,
                )
            )
        else:
            raise ConfigError(f"unknown section [{section}]")
    if "kind" not in prob_kwargs:
        raise ConfigError("config needs a [problem] section with 'kind'")
    try:
        problem = ProblemSpec(**prob_kwargs)
        return ExperimentSpec(problem=problem, optimizers=tuple(opt_descs), **exp_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
