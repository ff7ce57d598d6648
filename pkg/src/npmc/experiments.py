"""Experiment harness: declarative configs, deterministic seeds, CSV results.

A config describes one experiment (model, grids, replicate count, base
seed).  Every replicate gets a fresh synthetic dataset whose seed is a
pure function of (base seed, experiment id, replicate), and every
(grid point, replicate) row gets a sampler seed derived the same way, so
output is byte-identical across runs and worker counts and extending the
replicate count leaves existing rows unchanged.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .numerics import DegenerateWeights, Gaussian, NumericalError, RngStream
from .particle_filter import ParticleFilterLikelihood
from .pmc import SamplerConfig, estimation_error, posterior_mean, run_sampler_loglik
from .pmh import PmhConfig, pmh_posterior_mean, run_pmh_loglik
from .tracking import SensorGrid, TrackingModel, TrackingParams, simulate_dataset

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "SummaryRow",
    "parse_config_text",
    "config_from_mapping",
    "canonical_config_lines",
    "config_hash",
    "derive_seed",
    "run_experiment",
    "aggregate_results",
    "write_results_csv",
    "read_results_csv",
    "write_summary_csv",
]

RUN_KINDS = ("mse_vs_m", "pmh_chain_sweep", "n_sweep", "single_run")
KINDS = RUN_KINDS + ("verify",)
SAMPLERS = ("npmc", "pmc", "pmh")
_SAMPLER_INDEX = {name: i for i, name in enumerate(SAMPLERS)}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full declarative description of one experiment."""

    kind: str
    experiment_id: str = ""
    replicates: int = 50
    base_seed: int = 1
    samplers: tuple[str, ...] = ()
    workers: int = 1
    out: str = "results.csv"
    horizon: int = 50
    true_params: TrackingParams = field(default_factory=TrackingParams.ground_truth)
    sensors: SensorGrid = field(default_factory=SensorGrid.default)
    prior: Gaussian = field(
        default_factory=lambda: Gaussian(
            [-0.11, 0.0, -11.02], np.diag([0.22, 4.0, 0.4])
        )
    )
    m_grid: tuple[int, ...] = (50, 100, 200, 500)
    n_iterations: int = 10
    clip_rule: str = "sqrt"
    n_grid: tuple[int, ...] = (400,)
    l_grid: tuple[int, ...] = ()
    pmh_scale: float = 0.2
    pmh_var: tuple[float, ...] = (0.22, 4.0, 0.4)
    verify_suite: str = "all"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind: unknown kind {self.kind!r}")
        if not self.experiment_id:
            object.__setattr__(self, "experiment_id", self.kind)
        if not self.samplers:
            object.__setattr__(self, "samplers", _default_samplers(self.kind))
        for name in self.samplers:
            if name not in SAMPLERS:
                raise ConfigError(f"experiment.samplers: unknown sampler {name!r}")
        if self.kind == "pmh_chain_sweep":
            if tuple(self.samplers) != ("pmh",):
                raise ConfigError("experiment.samplers: pmh_chain_sweep runs pmh only")
            if not self.l_grid:
                raise ConfigError("pmh.l: chain-length grid required for pmh_chain_sweep")
        if self.replicates < 1:
            raise ConfigError("experiment.replicates: must be >= 1")
        if any(v < 1 for v in self.m_grid):
            raise ConfigError("sampler.m: all grid values must be positive")
        if any(v < 1 for v in self.n_grid):
            raise ConfigError("sampler.n: all grid values must be positive")
        if any(v < 2 for v in self.l_grid):
            raise ConfigError("pmh.l: chain lengths must be >= 2")
        if self.n_iterations < 0:
            raise ConfigError("sampler.k: must be >= 0")
        if self.horizon < 1:
            raise ConfigError("model.horizon: must be >= 1")
        if self.clip_rule != "sqrt":
            try:
                int(self.clip_rule)
            except ValueError:
                raise ConfigError(
                    "sampler.clip: must be 'sqrt' or an integer"
                ) from None


def _default_samplers(kind: str) -> tuple[str, ...]:
    if kind == "n_sweep":
        return ("npmc",)
    if kind == "pmh_chain_sweep":
        return ("pmh",)
    if kind == "single_run":
        return ("npmc",)
    return SAMPLERS


def _clip_count(config: ExperimentConfig, m: int) -> int | None:
    if config.clip_rule == "sqrt":
        return None  # SamplerConfig default: floor(sqrt(M))
    return int(config.clip_rule)


# ---------------------------------------------------------------------------
# Flat key=value config files


_DEFAULT_KEYS = {
    "experiment.kind": "",
    "experiment.id": "",
    "experiment.replicates": "50",
    "experiment.seed": "1",
    "experiment.samplers": "",
    "experiment.workers": "1",
    "experiment.out": "results.csv",
    "model.horizon": "50",
    "model.log_pt": repr(float(np.log(0.8))),
    "model.nu": "3.0",
    "model.log_rho": repr(float(np.log(1e-5))),
    "model.kappa": "1.0",
    "model.sigma_u2": "0.01",
    "model.sigma_z2": "0.01",
    "model.sigma_eps2": "1.0",
    "model.sensors": "grid:4x4",
    "prior.mean": "-0.11,0.0,-11.02",
    "prior.var": "0.22,4.0,0.4",
    "sampler.m": "50,100,200,500",
    "sampler.k": "10",
    "sampler.clip": "sqrt",
    "sampler.n": "400",
    "pmh.l": "",
    "pmh.scale": "0.2",
    "pmh.var": "0.22,4.0,0.4",
    "verify.suite": "all",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _DEFAULT_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def _get_int(mapping, key) -> int:
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {mapping[key]!r}") from None


def _get_float(mapping, key) -> float:
    try:
        return float(mapping[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {mapping[key]!r}") from None


def _get_int_list(mapping, key) -> tuple[int, ...]:
    text = mapping[key].strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers") from None


def _get_float_list(mapping, key) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in mapping[key].split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers") from None


def _parse_sensors(text: str) -> SensorGrid:
    text = text.strip()
    if text.startswith("grid:"):
        try:
            nx, ny = (int(v) for v in text[5:].split("x"))
        except ValueError:
            raise ConfigError("model.sensors: expected grid:<nx>x<ny>") from None
        xs = (np.arange(nx) + 0.5) * 40.0 / nx - 20.0
        ys = (np.arange(ny) + 0.5) * 20.0 / ny - 10.0
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return SensorGrid(np.column_stack([gx.ravel(), gy.ravel()]))
    try:
        pairs = [
            [float(c) for c in pair.split(",")] for pair in text.split(";") if pair
        ]
        return SensorGrid(np.array(pairs))
    except (ValueError, TypeError):
        raise ConfigError("model.sensors: expected grid:<nx>x<ny> or x,y;x,y;...") from None


def config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    """Build a validated :class:`ExperimentConfig` from flat key/value pairs."""
    merged = dict(_DEFAULT_KEYS)
    for key, value in mapping.items():
        if key not in _DEFAULT_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    if not merged["experiment.kind"]:
        raise ConfigError("experiment.kind: required")
    kind = merged["experiment.kind"]
    samplers = tuple(
        s.strip() for s in merged["experiment.samplers"].split(",") if s.strip()
    )
    replicates = merged["experiment.replicates"]
    if kind == "single_run" and "experiment.replicates" not in mapping:
        replicates = "1"
    params = TrackingParams(
        log_pt=_get_float(merged, "model.log_pt"),
        nu=_get_float(merged, "model.nu"),
        log_rho=_get_float(merged, "model.log_rho"),
        kappa=_get_float(merged, "model.kappa"),
        sigma_u2=_get_float(merged, "model.sigma_u2"),
        sigma_z2=_get_float(merged, "model.sigma_z2"),
        sigma_eps2=_get_float(merged, "model.sigma_eps2"),
    )
    prior_mean = _get_float_list(merged, "prior.mean")
    prior_var = _get_float_list(merged, "prior.var")
    if len(prior_mean) != 3 or len(prior_var) != 3:
        raise ConfigError("prior.mean/prior.var: expected 3 components")
    return ExperimentConfig(
        kind=kind,
        experiment_id=merged["experiment.id"],
        replicates=_get_int({"experiment.replicates": replicates}, "experiment.replicates"),
        base_seed=_get_int(merged, "experiment.seed"),
        samplers=samplers,
        workers=_get_int(merged, "experiment.workers"),
        out=merged["experiment.out"],
        horizon=_get_int(merged, "model.horizon"),
        true_params=params,
        sensors=_parse_sensors(merged["model.sensors"]),
        prior=Gaussian(np.array(prior_mean), np.diag(prior_var)),
        m_grid=_get_int_list(merged, "sampler.m"),
        n_iterations=_get_int(merged, "sampler.k"),
        clip_rule=merged["sampler.clip"],
        n_grid=_get_int_list(merged, "sampler.n"),
        l_grid=_get_int_list(merged, "pmh.l"),
        pmh_scale=_get_float(merged, "pmh.scale"),
        pmh_var=_get_float_list(merged, "pmh.var"),
        verify_suite=merged["verify.suite"],
    )


def canonical_config_lines(config: ExperimentConfig) -> list[str]:
    """Resolved config as sorted ``key=value`` lines (hash input)."""
    values = {
        "experiment.kind": config.kind,
        "experiment.id": config.experiment_id,
        "experiment.replicates": str(config.replicates),
        "experiment.seed": str(config.base_seed),
        "experiment.samplers": ",".join(config.samplers),
        "experiment.workers": str(config.workers),
        "experiment.out": config.out,
        "model.horizon": str(config.horizon),
        "model.log_pt": repr(config.true_params.log_pt),
        "model.nu": repr(config.true_params.nu),
        "model.log_rho": repr(config.true_params.log_rho),
        "model.kappa": repr(config.true_params.kappa),
        "model.sigma_u2": repr(config.true_params.sigma_u2),
        "model.sigma_z2": repr(config.true_params.sigma_z2),
        "model.sigma_eps2": repr(config.true_params.sigma_eps2),
        "model.sensors": ";".join(
            f"{x!r},{y!r}" for x, y in config.sensors.positions
        ),
        "prior.mean": ",".join(repr(float(v)) for v in config.prior.mean),
        "prior.var": ",".join(repr(float(v)) for v in np.diag(config.prior.cov)),
        "sampler.m": ",".join(str(v) for v in config.m_grid),
        "sampler.k": str(config.n_iterations),
        "sampler.clip": config.clip_rule,
        "sampler.n": ",".join(str(v) for v in config.n_grid),
        "pmh.l": ",".join(str(v) for v in config.l_grid),
        "pmh.scale": repr(config.pmh_scale),
        "pmh.var": ",".join(repr(float(v)) for v in config.pmh_var),
        "verify.suite": config.verify_suite,
    }
    return [f"{key}={values[key]}" for key in sorted(values)]


def config_hash(config: ExperimentConfig) -> str:
    text = "\n".join(canonical_config_lines(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary string/int parts."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(
        hashlib.blake2b(text.encode(), digest_size=8).digest(), "little"
    )


# ---------------------------------------------------------------------------
# Result rows


@dataclass(frozen=True)
class ResultRow:
    """One sampler run on one replicate; wall time stays out of the CSV."""

    experiment_id: str
    sampler: str
    M: int | None
    K: int | None
    N: int | None
    L: int | None
    replicate: int
    seed: int
    error_components: tuple[float, ...] | None
    error_total: float | None
    wall_seconds: float
    bf_calls: int
    status: str = "ok"


@dataclass(frozen=True)
class SummaryRow:
    experiment_id: str
    sampler: str
    M: int | None
    K: int | None
    N: int | None
    L: int | None
    n_ok: int
    n_failed: int
    mean_error: float | None
    stderr: float | None


def _grid_points(config: ExperimentConfig) -> list[dict]:
    k = config.n_iterations
    if config.kind == "mse_vs_m":
        n = config.n_grid[0]
        return [{"M": m, "K": k, "N": n, "L": m * k} for m in config.m_grid]
    if config.kind == "n_sweep":
        return [
            {"M": m, "K": k, "N": n, "L": None}
            for m in config.m_grid
            for n in config.n_grid
        ]
    if config.kind == "pmh_chain_sweep":
        n = config.n_grid[0]
        return [{"M": None, "K": None, "N": n, "L": length} for length in config.l_grid]
    if config.kind == "single_run":
        m = config.m_grid[0]
        return [{"M": m, "K": k, "N": config.n_grid[0], "L": m * k}]
    raise ConfigError(f"experiment.kind: {config.kind!r} is not a runnable kind")


def _grid_key(grid: dict) -> str:
    return ",".join(
        f"{name}={grid[name] if grid[name] is not None else '-'}"
        for name in ("M", "K", "N", "L")
    )


def _run_one_sampler(config, grid, sampler, observations, stream):
    model = TrackingModel(config.true_params, config.sensors)
    truth = config.true_params.theta
    loglik = ParticleFilterLikelihood(model, observations, grid["N"])
    start = time.perf_counter()
    if sampler == "pmh":
        pmh_config = PmhConfig(
            chain_length=grid["L"],
            proposal_cov=config.pmh_scale * np.diag(config.pmh_var),
            n_particles=grid["N"],
        )
        result = run_pmh_loglik(loglik, config.prior, pmh_config, stream)
        estimate = pmh_posterior_mean(result.chain, pmh_config.burn_in_fraction)
        payload = result
    else:
        sampler_config = SamplerConfig(
            n_samples=grid["M"],
            n_iterations=grid["K"],
            n_particles=grid["N"],
            clip_count=_clip_count(config, grid["M"]),
            transform="clip" if sampler == "npmc" else "identity",
        )
        clouds = run_sampler_loglik(loglik, config.prior, sampler_config, stream)
        estimate = posterior_mean(clouds[-1])
        payload = clouds
    wall = time.perf_counter() - start
    components = tuple(float(v) for v in (estimate - truth) ** 2)
    return components, float(np.sum(components)), wall, loglik.calls, payload


def _run_job(args):
    config, grid, replicate = args
    dataset_rng = RngStream(
        derive_seed(config.base_seed, config.experiment_id, "dataset", replicate)
    )
    observations, _ = simulate_dataset(
        config.true_params, config.sensors, config.horizon, dataset_rng
    )
    row_seed = derive_seed(
        config.base_seed, config.experiment_id, _grid_key(grid), replicate
    )
    rows, artifacts = [], {}
    for sampler in config.samplers:
        stream = RngStream(row_seed).derive(_SAMPLER_INDEX[sampler])
        common = dict(
            experiment_id=config.experiment_id,
            sampler=sampler,
            M=grid["M"],
            K=grid["K"],
            N=grid["N"],
            L=grid["L"] if sampler == "pmh" else None,
            replicate=replicate,
            seed=row_seed,
        )
        try:
            components, total, wall, calls, payload = _run_one_sampler(
                config, grid, sampler, observations, stream
            )
            rows.append(
                ResultRow(
                    error_components=components,
                    error_total=total,
                    wall_seconds=wall,
                    bf_calls=calls,
                    status="ok",
                    **common,
                )
            )
            artifacts[sampler] = payload
        except (DegenerateWeights, NumericalError) as exc:
            rows.append(
                ResultRow(
                    error_components=None,
                    error_total=None,
                    wall_seconds=0.0,
                    bf_calls=0,
                    status=f"failed:{type(exc).__name__}",
                    **common,
                )
            )
    return rows, artifacts


def _sort_key(row: ResultRow):
    grid = tuple(-1 if v is None else v for v in (row.M, row.K, row.N, row.L))
    return (row.experiment_id, grid, row.replicate, _SAMPLER_INDEX[row.sampler])


def run_experiment(
    config: ExperimentConfig,
    workers: int | None = None,
    keep_artifacts: bool = False,
):
    """Run every (grid point, replicate) job; returns ``(rows, artifacts)``.

    Jobs are independent and may be dispatched to a process pool; rows are
    canonically ordered afterwards so the output never depends on worker
    count.  A sampler failure is recorded as a failed row and the
    experiment continues.
    """
    if config.kind not in RUN_KINDS:
        raise ConfigError(f"experiment.kind: {config.kind!r} is not runnable")
    if workers is None:
        workers = config.workers
    if workers < 1:
        workers = os.cpu_count() or 1
    jobs = [
        (config, grid, rep)
        for grid in _grid_points(config)
        for rep in range(config.replicates)
    ]
    rows: list[ResultRow] = []
    artifacts: dict = {}
    if workers == 1 or len(jobs) == 1:
        outputs = map(_run_job, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        outputs = pool.map(_run_job, jobs, chunksize=1)
    for (job, (job_rows, job_artifacts)) in zip(jobs, outputs):
        rows.extend(job_rows)
        if keep_artifacts:
            _, grid, rep = job
            for sampler, payload in job_artifacts.items():
                artifacts[(sampler, _grid_key(grid), rep)] = payload
    if workers > 1 and len(jobs) > 1:
        pool.shutdown()
    rows.sort(key=_sort_key)
    return rows, artifacts


def aggregate_results(rows) -> list[SummaryRow]:
    """Per (sampler, grid point): mean error, standard error, failure count."""
    if not rows:
        raise ValueError("no result rows to aggregate")
    groups: dict[tuple, list[ResultRow]] = {}
    for row in rows:
        key = (row.experiment_id, row.sampler, row.M, row.K, row.N, row.L)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(
        groups, key=lambda k: (k[0], tuple(-1 if v is None else v for v in k[2:]), k[1])
    ):
        group = groups[key]
        errors = np.array(
            [row.error_total for row in group if row.status == "ok"], dtype=float
        )
        n_failed = sum(1 for row in group if row.status != "ok")
        if errors.size == 0:
            mean, stderr = None, None
        else:
            mean = float(errors.mean())
            stderr = (
                float(errors.std(ddof=1) / math.sqrt(errors.size))
                if errors.size > 1
                else None
            )
        out.append(SummaryRow(*key, errors.size, n_failed, mean, stderr))
    return out


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(path, rows, config: ExperimentConfig) -> None:
    """Write rows as CSV with a provenance preamble; byte-deterministic."""
    dim = 3
    for row in rows:
        if row.error_components is not None:
            dim = len(row.error_components)
            break
    header = ["experiment", "sampler", "M", "K", "N", "L", "replicate", "seed"]
    header += [f"err2_{i}" for i in range(dim)]
    header += ["err2_total", "bf_calls", "status"]
    with open(path, "w", newline="\n") as fh:
        fh.write("# npmc-results\n")
        fh.write(f"# config_hash={config_hash(config)}\n")
        fh.write(f"# build=npmc-{__version__}\n")
        fh.write(f"# base_seed={config.base_seed}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fields = [
                row.experiment_id,
                row.sampler,
                _fmt(row.M),
                _fmt(row.K),
                _fmt(row.N),
                _fmt(row.L),
                str(row.replicate),
                str(row.seed),
            ]
            if row.error_components is None:
                fields += [""] * dim
            else:
                fields += [_fmt(v) for v in row.error_components]
            fields += [_fmt(row.error_total), str(row.bf_calls), row.status]
            fh.write(",".join(fields) + "\n")


def read_results_csv(path) -> list[ResultRow]:
    """Read rows written by :func:`write_results_csv` (wall time not stored)."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if not line.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no data")
    header = lines[0].split(",")
    err_cols = [name for name in header if name.startswith("err2_") and name != "err2_total"]
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        fields = dict(zip(header, line.split(",")))
        failed = fields["status"] != "ok"
        rows.append(
            ResultRow(
                experiment_id=fields["experiment"],
                sampler=fields["sampler"],
                M=int(fields["M"]) if fields["M"] else None,
                K=int(fields["K"]) if fields["K"] else None,
                N=int(fields["N"]) if fields["N"] else None,
                L=int(fields["L"]) if fields["L"] else None,
                replicate=int(fields["replicate"]),
                seed=int(fields["seed"]),
                error_components=None
                if failed
                else tuple(float(fields[c]) for c in err_cols),
                error_total=None if failed else float(fields["err2_total"]),
                wall_seconds=float("nan"),
                bf_calls=int(fields["bf_calls"]),
                status=fields["status"],
            )
        )
    return rows


def write_summary_csv(path, summary) -> None:
    header = [
        "experiment", "sampler", "M", "K", "N", "L",
        "n_ok", "n_failed", "mean_mse", "stderr",
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in summary:
            fields = [
                row.experiment_id,
                row.sampler,
                _fmt(row.M),
                _fmt(row.K),
                _fmt(row.N),
                _fmt(row.L),
                str(row.n_ok),
                str(row.n_failed),
                _fmt(row.mean_error),
                _fmt(row.stderr),
            ]
            fh.write(",".join(fields) + "\n")
