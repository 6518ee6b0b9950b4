"""Experiment harness: label streams, quote oracles, protocol loop, sweeps."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    GameConfig,
    PayoffVector,
    ForecastDistribution,
    dist_to_target,
    game_config,
    nearest_grid_index,
    payoff_vector,
)
from .metrics import BucketStats, default_regret_slack
from .mw_recalibrator import lifted_dimension, mw_choose, mw_init, mw_update
from .recalibrator import RecalibratorState
from .scoring import parse_rule, score

FORECASTERS = ("approach", "mw", "passthrough")
EXPONENT_LO = 1.0 / 3.0
EXPONENT_HI = 2.0 / 5.0
EXPONENT_TOL = 1e-3


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    T: int
    rule: str = "brier"
    forecaster: str = "approach"
    m: int | None = None
    exponent: float | None = None
    oracle: str = "clairvoyant:0.2"
    labels: str = "iid_bernoulli:0.5"
    seed: int = 0


def resolved_m(cfg: ExperimentConfig) -> int:
    if (cfg.m is None) == (cfg.exponent is None):
        raise ConfigError("exactly one of m and exponent must be set")
    if cfg.m is not None:
        if cfg.m < 1:
            raise ConfigError(f"m must be a positive integer, got {cfg.m}")
        return cfg.m
    x = cfg.exponent
    if not (EXPONENT_LO - EXPONENT_TOL <= x <= EXPONENT_HI + EXPONENT_TOL):
        raise ConfigError(f"exponent must lie in [1/3, 2/5], got {x}")
    return math.ceil(cfg.T ** (1.0 - 2.0 * x))


class LabelSource:
    """Draws (or defers, when adversarial) the label sequence."""

    def __init__(self, kind: str, param, rng):
        self.kind = kind
        self.param = param
        self.rng = rng

    @property
    def is_adversarial(self) -> bool:
        return self.kind == "adversarial_greedy"

    def generate(self, T: int):
        if self.kind == "iid_bernoulli":
            return (self.rng.random(T) < self.param).astype(int).tolist()
        if self.kind == "periodic":
            pattern = self.param
            reps = T // len(pattern) + 1
            return (pattern * reps)[:T]
        return None

    def pi_schedule(self, T: int):
        """Conditional label probabilities, for the truth oracle."""
        if self.kind == "iid_bernoulli":
            return [self.param] * T
        if self.kind == "periodic":
            pattern = self.param
            reps = T // len(pattern) + 1
            return [float(v) for v in (pattern * reps)[:T]]
        return None


def make_label_stream(spec: str, seed=None) -> LabelSource:
    rng = np.random.default_rng(seed)
    kind, _, arg = spec.partition(":")
    if kind == "bernoulli":
        kind = "iid_bernoulli"
    if kind == "iid_bernoulli":
        try:
            pi = float(arg)
        except ValueError:
            raise ConfigError(f"bad bernoulli parameter {arg!r}") from None
        if not 0.0 <= pi <= 1.0:
            raise ConfigError(f"bernoulli parameter must be in [0, 1], got {pi}")
        return LabelSource(kind, pi, rng)
    if kind == "periodic":
        if not arg or any(ch not in "01" for ch in arg):
            raise ConfigError(f"periodic pattern must be a nonempty 0/1 string, got {arg!r}")
        return LabelSource(kind, [int(ch) for ch in arg], rng)
    if kind == "adversarial_greedy":
        if arg:
            raise ConfigError("adversarial_greedy takes no parameter")
        return LabelSource(kind, None, rng)
    raise ConfigError(f"unknown label stream {kind!r}")


class OracleSource:
    """Produces the quote sequence, given labels where applicable."""

    def __init__(self, kind: str, param, rng):
        self.kind = kind
        self.param = param
        self.rng = rng

    def quotes(self, T: int, labels, pi_schedule):
        if self.kind == "constant":
            return [self.param] * T
        if self.kind == "clairvoyant":
            beta = self.param
            y = np.asarray(labels, dtype=float)
            return ((1.0 - 2.0 * beta) * y + beta).tolist()
        if self.kind == "truth":
            return list(pi_schedule)
        # noisy_truth
        pi = np.asarray(pi_schedule, dtype=float)
        noise = self.rng.normal(0.0, self.param, size=T)
        return np.clip(pi + noise, 0.0, 1.0).tolist()


def make_oracle(spec: str, seed=None) -> OracleSource:
    rng = np.random.default_rng(seed)
    kind, _, arg = spec.partition(":")
    if kind == "truth":
        if arg:
            raise ConfigError("truth oracle takes no parameter")
        return OracleSource(kind, None, rng)
    if kind in ("clairvoyant", "constant", "noisy_truth"):
        try:
            param = float(arg)
        except ValueError:
            raise ConfigError(f"bad {kind} parameter {arg!r}") from None
        if kind == "clairvoyant" and not 0.0 <= param <= 0.5:
            raise ConfigError(f"clairvoyant shrinkage must be in [0, 0.5], got {param}")
        if kind == "constant" and not 0.0 <= param <= 1.0:
            raise ConfigError(f"constant quote must be in [0, 1], got {param}")
        if kind == "noisy_truth" and param < 0.0:
            raise ConfigError(f"noise level must be nonnegative, got {param}")
        return OracleSource(kind, param, rng)
    raise ConfigError(f"unknown oracle {kind!r}")


def adversary_label(w: ForecastDistribution, theta, q: float,
                    cum_payoff: PayoffVector, t: int, cfg: GameConfig) -> int:
    """Label maximizing next-step average distance to the target set.

    t is the number of completed rounds; ties resolve to y = 1.  The
    recalibrator's current parameter is observable but unused by this
    greedy adversary.
    """
    best_y = 1
    best_d = -math.inf
    for y in (1, 0):
        v = payoff_vector(cfg, w, q, y)
        avg = PayoffVector((cum_payoff.cal + v.cal) / (t + 1),
                           (cum_payoff.reg + v.reg) / (t + 1))
        d = dist_to_target(cfg, avg)
        if d > best_d:
            best_d = d
            best_y = y
    return best_y


def checkpoint_schedule(T: int) -> list[int]:
    cps = []
    v = 1
    while v < T:
        cps.append(v)
        v *= 2
    cps.append(T)
    return cps


@dataclass(frozen=True)
class CheckpointMetrics:
    t: int
    calib_l1: float
    calibration_rate: float
    average_regret: float
    recalibration_rate: float
    dist_to_target: float


@dataclass
class Trace:
    config: ExperimentConfig
    m: int
    q: list = field(default_factory=list)
    p: list = field(default_factory=list)
    y: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    stats: BucketStats | None = None
    cum_payoff: PayoffVector | None = None
    wall_time: float = 0.0

    @property
    def final(self) -> CheckpointMetrics:
        return self.checkpoints[-1]


def _sample_dense(x, rng) -> int:
    u = rng.random()
    acc = 0.0
    last = 0
    for i, xi in enumerate(x):
        if xi > 0.0:
            acc += xi
            last = i
            if u < acc:
                return i
    return last


def run_experiment(cfg: ExperimentConfig) -> Trace:
    t_start = time.perf_counter()
    if cfg.T < 1:
        raise ConfigError(f"T must be a positive integer, got {cfg.T}")
    if cfg.forecaster not in FORECASTERS:
        raise ConfigError(f"unknown forecaster {cfg.forecaster!r}")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {cfg.seed}")
    try:
        rule = parse_rule(cfg.rule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    m = resolved_m(cfg)
    try:
        gcfg = game_config(m, rule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.forecaster == "mw" and cfg.T < math.log(lifted_dimension(m)):
        raise ConfigError(
            f"mw needs T >= ln(2^(m+1)+1) = {math.log(lifted_dimension(m)):.3f}, got T={cfg.T}")

    ss_labels, ss_oracle, ss_forecaster = np.random.SeedSequence(cfg.seed).spawn(3)
    labels_src = make_label_stream(cfg.labels, ss_labels)
    oracle_src = make_oracle(cfg.oracle, ss_oracle)
    if labels_src.is_adversarial and oracle_src.kind != "constant":
        raise ConfigError(
            "adversarial_greedy labels are only defined against a constant oracle; "
            "other oracles would peek at labels chosen after their quotes")

    T = cfg.T
    ys = labels_src.generate(T)
    qs = oracle_src.quotes(T, ys, labels_src.pi_schedule(T))
    adversarial = ys is None

    trace = Trace(config=cfg, m=m)
    trace.q = qs
    stats = BucketStats(m)
    delta = default_regret_slack(rule, m)
    cp_set = set(checkpoint_schedule(T))
    grid = gcfg.grid
    rng = np.random.default_rng(ss_forecaster)

    ps = trace.p
    ys_out = [] if adversarial else ys
    trace.y = ys_out

    if cfg.forecaster == "approach":
        state = RecalibratorState(gcfg, rng)
        for t1 in range(1, T + 1):
            q = qs[t1 - 1]
            p, w = state.predict(q)
            if adversarial:
                y = adversary_label(w, state.theta, q, state.cum_payoff, t1 - 1, gcfg)
                ys_out.append(y)
            else:
                y = ys[t1 - 1]
            ps.append(p)
            stats.record(p, q, y, rule)
            state.observe(q, y)
            if t1 in cp_set:
                avg = state.average_payoff()
                trace.checkpoints.append(CheckpointMetrics(
                    t=t1,
                    calib_l1=stats.calibration_l1(),
                    calibration_rate=stats.calibration_rate(),
                    average_regret=stats.average_regret(),
                    recalibration_rate=stats.recalibration_rate(delta),
                    dist_to_target=dist_to_target(gcfg, avg)))
        trace.cum_payoff = state.cum_payoff
    else:
        # Shared dense payoff ledger for mw and passthrough.
        cum_cal = np.zeros(m + 1)
        cum_reg = 0.0
        grid_arr = np.asarray(grid)
        score0 = np.asarray(gcfg.score0)
        score1 = np.asarray(gcfg.score1)
        mstate = mw_init(gcfg, T) if cfg.forecaster == "mw" else None
        for t1 in range(1, T + 1):
            q = qs[t1 - 1]
            if mstate is not None:
                x = mw_choose(mstate, q)
                i = _sample_dense(x, rng)
            else:
                i = nearest_grid_index(q, m)
                x = None
            p = grid[i]
            played = x if x is not None else _one_hot(m, i)
            if adversarial:
                y = _adversary_label_dense(
                    gcfg, played, q, cum_cal, cum_reg, t1 - 1,
                    grid_arr, score0, score1)
                ys_out.append(y)
            else:
                y = ys[t1 - 1]
            ps.append(p)
            stats.record(p, q, y, rule)
            sq = score(rule, q, y)
            score_y = score1 if y else score0
            cum_cal += played * (grid_arr - y)
            cum_reg += float(played @ score_y - sq) / gcfg.lam
            if mstate is not None:
                mw_update(mstate, x, q, y)
            if t1 in cp_set:
                avg = PayoffVector(cum_cal / t1, cum_reg / t1)
                trace.checkpoints.append(CheckpointMetrics(
                    t=t1,
                    calib_l1=stats.calibration_l1(),
                    calibration_rate=stats.calibration_rate(),
                    average_regret=stats.average_regret(),
                    recalibration_rate=stats.recalibration_rate(delta),
                    dist_to_target=dist_to_target(gcfg, avg)))
        trace.cum_payoff = PayoffVector(cum_cal, cum_reg)

    trace.stats = stats
    trace.wall_time = time.perf_counter() - t_start
    return trace


def _one_hot(m: int, i: int) -> np.ndarray:
    x = np.zeros(m + 1)
    x[i] = 1.0
    return x


def _adversary_label_dense(cfg: GameConfig, x, q: float, cum_cal, cum_reg: float,
                           t: int, grid_arr, score0, score1) -> int:
    """adversary_label for a dense play vector whose support may be non-adjacent."""
    best_y = 1
    best_d = -math.inf
    for y in (1, 0):
        score_y = score1 if y else score0
        cal = x * (grid_arr - y)
        reg = float(x @ score_y - score(cfg.rule, q, y)) / cfg.lam
        avg = PayoffVector((cum_cal + cal) / (t + 1), (cum_reg + reg) / (t + 1))
        d = dist_to_target(cfg, avg)
        if d > best_d:
            best_d = d
            best_y = y
    return best_y


def fit_loglog_slope(points) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2 of log(v) against log(T)."""
    pts = [(float(T), float(v)) for T, v in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    for T, v in pts:
        if v <= 0.0:
            raise ValueError(f"values must be positive to take logs, got {v}")
    x = np.log([T for T, _ in pts])
    y = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), float(intercept), r2


@dataclass(frozen=True)
class SweepRow:
    T: int
    m: int
    calibration_rate: float
    calibration_rate_stderr: float
    average_regret: float
    average_regret_stderr: float
    recalibration_rate: float
    recalibration_rate_stderr: float


@dataclass
class SweepResult:
    rows: list
    slopes: dict


def _final_metrics(cfg: ExperimentConfig) -> dict:
    trace = run_experiment(cfg)
    final = trace.final
    return {
        "T": cfg.T,
        "m": trace.m,
        "calibration_rate": final.calibration_rate,
        "average_regret": final.average_regret,
        "recalibration_rate": final.recalibration_rate,
    }


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get("RECAL_THREADS", "")
    if raw:
        try:
            limit = int(raw)
        except ValueError:
            raise ConfigError(f"RECAL_THREADS must be an integer, got {raw!r}") from None
        if limit < 1:
            raise ConfigError(f"RECAL_THREADS must be >= 1, got {limit}")
    else:
        limit = os.cpu_count() or 1
    return max(1, min(limit, n_jobs))


def sweep(base: ExperimentConfig, T_grid, seeds) -> SweepResult:
    Ts = sorted({int(T) for T in T_grid})
    if not Ts:
        raise ConfigError("T_grid must be nonempty")
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError(f"need at least one seed, got {seeds}")
        seed_list = [base.seed + k for k in range(seeds)]
    else:
        seed_list = [int(s) for s in seeds]
        if not seed_list:
            raise ConfigError("seed list must be nonempty")

    jobs = [replace(base, T=T, seed=s) for T in Ts for s in seed_list]
    workers = _worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_final_metrics, jobs))
    else:
        results = [_final_metrics(job) for job in jobs]

    by_T: dict[int, list[dict]] = {T: [] for T in Ts}
    for res in results:
        by_T[res["T"]].append(res)

    rows = []
    for T in Ts:
        group = by_T[T]
        row_kwargs = {"T": T, "m": group[0]["m"]}
        for key in ("calibration_rate", "average_regret", "recalibration_rate"):
            vals = np.array([g[key] for g in group])
            mean = float(vals.mean())
            stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            row_kwargs[key] = mean
            row_kwargs[key + "_stderr"] = stderr
        rows.append(SweepRow(**row_kwargs))

    slopes = {}
    for key in ("calibration_rate", "average_regret", "recalibration_rate"):
        pts = [(row.T, getattr(row, key)) for row in rows if getattr(row, key) > 0.0]
        if len(pts) >= 3:
            slope, intercept, r2 = fit_loglog_slope(pts)
            slopes[key] = {"slope": slope, "intercept": intercept, "r_squared": r2}
        else:
            slopes[key] = None
    return SweepResult(rows=rows, slopes=slopes)
