"""Scenario configs, seeded Monte Carlo sweeps and the command-line entry point."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import GridSpec, omp, periodogram, rayleigh_cells
from .bcrb import bcrb_monte_carlo
from .clutter import ClutterConfig, generate_clutter, radar_amplitude, scale_to_scnr, suppress
from .detector import DEFAULT_THRESHOLD, DetectionResult, Estimate, TrialScore, detect, detect_state, score_trial
from .posterior import PriorConfig
from .sampler import SamplerConfig, run_chain
from .waveform import (
    SystemConfig, Target, complex_noise, delay_to_range, doppler_to_velocity, echo, generate_symbols,
    noise_var_for_snr,
)

METHODS = ("sbl-mcmc", "omp", "periodogram")
AXES = ("snr_db", "scnr_db", "separation_m")
CSV_COLUMNS = (
    "axis", "value", "method", "p_cd", "rmse_range_m", "rmse_velocity_mps", "rmse_angle_deg",
    "bcrb_range_m", "bcrb_velocity_mps", "bcrb_angle_deg", "trials", "wall_time_s",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    n_targets: int = 1
    range_m: tuple[float, float] = (50.0, 600.0)
    # speeds are drawn in this band with a random sign
    speed_mps: tuple[float, float] = (5.0, 30.0)
    angle_deg: tuple[float, float] = (-80.0, 80.0)
    # "radar": |b| = (50 m / r)², "unit": |b| = 1
    amplitude: str = "radar"

    def __post_init__(self):
        if not 1 <= self.n_targets <= 5:
            raise ConfigError("scene.n_targets must lie in [1, 5]")
        if self.amplitude not in ("radar", "unit"):
            raise ConfigError("scene.amplitude must be 'radar' or 'unit'")
        for name in ("range_m", "speed_mps", "angle_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"scene.{name} must be increasing")
        if self.range_m[0] <= 0 or self.speed_mps[0] < 0:
            raise ConfigError("scene ranges must be positive and speeds non-negative")


@dataclass(frozen=True)
class PriorSettings:
    range_m: tuple[float, float] = (45.0, 605.0)
    velocity_mps: tuple[float, float] = (-35.0, 35.0)
    angle_deg: tuple[float, float] = (-85.0, 85.0)
    kappa_rho: float = 2.0
    chi_rho: float = 0.01
    kappa_xi: float = 3.0
    chi_xi: float = 0.01

    def build(self, cfg: SystemConfig, n_components: int) -> PriorConfig:
        return PriorConfig.from_physical(
            cfg, n_components, self.range_m, self.velocity_mps, self.angle_deg,
            kappa_rho=self.kappa_rho, chi_rho=self.chi_rho, kappa_xi=self.kappa_xi, chi_xi=self.chi_xi,
        )


@dataclass(frozen=True)
class SweepAxis:
    axis: str = "snr_db"
    values: tuple[float, ...] = (20.0,)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"sweep.axis must be one of {AXES}")
        if len(self.values) == 0:
            raise ConfigError("sweep.values must not be empty")


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    prior: PriorSettings = field(default_factory=PriorSettings)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    clutter: ClutterConfig | None = None
    suppress_clutter: bool = False
    method: str = "sbl-mcmc"
    sweep: SweepAxis = field(default_factory=SweepAxis)
    trials: int = 50
    n_components: int = 10
    seed: int = 0
    # values for the axes that are not swept
    snr_db: float = 20.0
    scnr_db: float | None = None
    threshold: float = DEFAULT_THRESHOLD
    # matching gates (m, m/s, deg); None means half a Rayleigh cell
    gates: tuple[float, float, float] | None = None
    grid_points_per_cell: int = 4
    periodogram_floor: float = 0.1
    bcrb_draws: int = 100
    record_timing: bool = False
    # send the same symbols on every OFDM symbol (needed by clutter suppression)
    repeat_symbols: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.sweep.axis == "scnr_db" and self.clutter is None:
            raise ConfigError("an scnr_db sweep needs a clutter section")
        if self.sweep.axis == "separation_m" and self.scene.n_targets != 2:
            raise ConfigError("a separation_m sweep needs scene.n_targets = 2")
        if self.clutter is not None:
            self.clutter.check(self.system)
        p, s = self.prior, self.scene
        v_max = max(abs(v) for v in p.velocity_mps)
        inside = (
            p.range_m[0] <= s.range_m[0] and s.range_m[1] <= p.range_m[1]
            and s.speed_mps[1] <= v_max
            and p.angle_deg[0] <= s.angle_deg[0] and s.angle_deg[1] <= p.angle_deg[1]
        )
        if not inside:
            raise ConfigError("scene distributions must lie inside the prior support")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


# JSON ------------------------------------------------------------------------

_NESTED = {
    "system": SystemConfig, "scene": SceneConfig, "prior": PriorSettings, "sampler": SamplerConfig,
    "clutter": ClutterConfig, "sweep": SweepAxis,
}


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if cls is ScenarioConfig and key in _NESTED:
            kwargs[key] = None if value is None else _build(_NESTED[key], value, where)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "")


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return config_from_dict(data)


def config_to_dict(sc: ScenarioConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(sc)))


# Trials ----------------------------------------------------------------------

def derive_seed(master: int, axis_index: int, trial_index: int) -> int:
    """64-bit trial seed from a keyed hash of (master, axis index, trial index)."""
    msg = f"{master}:{axis_index}:{trial_index}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def _amplitudes(scene: SceneConfig, ranges):
    return radar_amplitude(ranges) if scene.amplitude == "radar" else np.ones(len(ranges))


def draw_targets(scene: SceneConfig, cfg: SystemConfig, rng: np.random.Generator,
                 separation_m: float | None = None) -> list[Target]:
    """Targets from the scene distribution.

    With a separation, two targets share velocity and angle and differ in
    range by exactly `separation_m`.
    """
    L = scene.n_targets
    if separation_m is not None:
        r0 = rng.uniform(scene.range_m[0], scene.range_m[1] - separation_m)
        ranges = np.array([r0, r0 + separation_m])
        v = np.full(2, rng.uniform(*scene.speed_mps) * rng.choice([-1.0, 1.0]))
        th = np.full(2, np.deg2rad(rng.uniform(*scene.angle_deg)))
    else:
        ranges = rng.uniform(*scene.range_m, L)
        v = rng.uniform(*scene.speed_mps, L) * rng.choice([-1.0, 1.0], L)
        th = np.deg2rad(rng.uniform(*scene.angle_deg, L))
    amp = _amplitudes(scene, ranges)
    phase = rng.uniform(0, 2 * np.pi, len(ranges))
    return [Target.from_physical(amp[i] * np.exp(1j * phase[i]), ranges[i], v[i], th[i], cfg)
            for i in range(len(ranges))]


@dataclass
class Trial:
    """One synthesized observation ready for estimation."""

    y: np.ndarray
    X: np.ndarray
    cfg: SystemConfig
    targets: list[Target]
    clutter: list[Target]
    noise_var: float


def make_trial(sc: ScenarioConfig, value: float, rng: np.random.Generator) -> Trial:
    cfg = sc.system
    axis = sc.sweep.axis
    snr_db = value if axis == "snr_db" else sc.snr_db
    sep = value if axis == "separation_m" else None
    X = generate_symbols(cfg, rng, sc.repeat_symbols)
    targets = draw_targets(sc.scene, cfg, rng, sep)
    noise_var = noise_var_for_snr(snr_db, targets, X, cfg)
    clutter: list[Target] = []
    if sc.clutter is not None:
        clutter = generate_clutter(sc.clutter, cfg, rng)
        scnr_db = value if axis == "scnr_db" else sc.scnr_db
        if scnr_db is not None and clutter:
            clutter = scale_to_scnr(targets, clutter, noise_var, scnr_db, X, cfg)
    Y = echo(targets + clutter, X, cfg) + complex_noise(cfg.shape, noise_var, rng)
    if sc.suppress_clutter:
        cc = sc.clutter or ClutterConfig()
        Y, k0 = suppress(Y, cc.alpha, cc.transient_symbols)
        Y, X = Y[:, k0:, :], X[:, k0:, :]
        cfg = cfg.replace(n_symbols=cfg.n_symbols - k0)
    return Trial(Y.reshape(-1), np.ascontiguousarray(X), cfg, targets, clutter, noise_var)


def default_gates(sc: ScenarioConfig, value: float) -> np.ndarray:
    """Matching gates in (m, m/s, rad)."""
    if sc.gates is not None:
        g = np.array(sc.gates, dtype=float)
        g[2] = np.deg2rad(g[2])
        return g
    dr, dv, dth = rayleigh_cells(sc.system)
    g = np.array([dr / 2, dv / 2, dth / 2])
    if sc.sweep.axis == "separation_m":
        g[0] = value / 2
    return g


def _peaks_to_detection(peaks, cfg: SystemConfig, threshold: float) -> DetectionResult:
    if not peaks:
        return DetectionResult([], [])
    power = np.array([p.power for p in peaks])
    _, slots = detect(np.sqrt(power), threshold)
    est = [Estimate(float(delay_to_range(p.delay)), float(doppler_to_velocity(p.doppler, cfg)), p.angle,
                    complex(math.sqrt(p.power))) for p in peaks]
    return DetectionResult(slots, [est[q] for q in slots], [peaks[q].index for q in slots])


def estimate(trial: Trial, sc: ScenarioConfig, method: str, seed: int) -> DetectionResult:
    prior = sc.prior.build(trial.cfg, sc.n_components)
    if method == "sbl-mcmc":
        state, _ = run_chain(trial.y, trial.X, trial.cfg, prior, dataclasses.replace(sc.sampler, seed=seed))
        return detect_state(state, trial.cfg, sc.threshold)
    grid = GridSpec.for_prior(prior, trial.cfg, sc.grid_points_per_cell)
    if method == "omp":
        res = omp(trial.y, trial.X, trial.cfg, grid, max_targets=sc.n_components)
        _, slots = detect(np.array([e.gain for e in res.estimates]), sc.threshold)
        return DetectionResult(slots, [res.estimates[q] for q in slots], [res.grid_indices[q] for q in slots])
    if method == "periodogram":
        _, peaks = periodogram(trial.y, trial.X, trial.cfg, grid, sc.periodogram_floor, sc.n_components)
        return _peaks_to_detection(peaks, trial.cfg, sc.threshold)
    raise ConfigError(f"unknown method {method!r}")


@dataclass
class TrialOutcome:
    axis_index: int
    trial_index: int
    score: TrialScore
    n_detected: int
    seconds: float


def run_trial(sc: ScenarioConfig, axis_index: int, trial_index: int, method: str | None = None) -> TrialOutcome:
    """Reproducible in isolation from (master seed, axis index, trial index)."""
    method = method or sc.method
    value = sc.sweep.values[axis_index]
    seed = derive_seed(sc.seed, axis_index, trial_index)
    rng = np.random.default_rng(seed)
    trial = make_trial(sc, value, rng)
    t0 = time.perf_counter()
    det = estimate(trial, sc, method, seed)
    elapsed = time.perf_counter() - t0
    score = score_trial(trial.targets, det, default_gates(sc, value), trial.cfg)
    return TrialOutcome(axis_index, trial_index, score, det.n_detected, elapsed)


# Sweep -------------------------------------------------------------------------

@dataclass
class SweepRow:
    axis: str
    value: float
    method: str
    p_cd: float
    rmse_range_m: float
    rmse_velocity_mps: float
    rmse_angle_deg: float
    bcrb_range_m: float | None
    bcrb_velocity_mps: float | None
    bcrb_angle_deg: float | None
    trials: int
    wall_time_s: float | None


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    outcomes: list[TrialOutcome] = field(default_factory=list)


def scenario_bound(sc: ScenarioConfig, value: float, axis_index: int):
    """s-BCRB over the scene distribution at one axis value; None under clutter."""
    if sc.clutter is not None or sc.bcrb_draws < 1:
        return None
    cfg = sc.system
    prior = sc.prior.build(cfg, sc.n_components)
    # independent stream, keyed away from the trial seeds
    rng = np.random.default_rng(derive_seed(sc.seed, axis_index, -1))
    X = generate_symbols(cfg, rng, sc.repeat_symbols)
    snr_db = value if sc.sweep.axis == "snr_db" else sc.snr_db
    sep = value if sc.sweep.axis == "separation_m" else None

    def draw(r):
        targets = draw_targets(sc.scene, cfg, r, sep)
        return targets, 1.0 / noise_var_for_snr(snr_db, targets, X, cfg)

    rep = bcrb_monte_carlo(prior, X, cfg, sc.bcrb_draws, rng, n_targets=sc.scene.n_targets, draw=draw)
    r, v, a = rep.rms()
    return r, v, math.degrees(a)


def _trial_job(args):
    sc, a, t, method = args
    return run_trial(sc, a, t, method)


def run_sweep(sc: ScenarioConfig, threads: int = 1, methods=None, log=None) -> SweepResult:
    methods = [sc.method] if methods is None else list(methods)
    res = SweepResult()
    for method in methods:
        jobs = [(sc, a, t, method) for a in range(len(sc.sweep.values)) for t in range(sc.trials)]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(_trial_job, jobs))
        else:
            outcomes = []
            for job in jobs:
                out = _trial_job(job)
                if log is not None:
                    log(f"{method} axis={job[1]} trial={job[2]} correct={out.score.correct_detection} "
                        f"detected={out.n_detected} {out.seconds:.2f}s")
                outcomes.append(out)
        outcomes.sort(key=lambda o: (o.axis_index, o.trial_index))
        res.outcomes.extend(outcomes)
        for a, value in enumerate(sc.sweep.values):
            cell = [o for o in outcomes if o.axis_index == a]
            res.rows.append(aggregate(sc, a, value, method, cell))
    return res


def aggregate(sc: ScenarioConfig, axis_index: int, value: float, method: str, cell) -> SweepRow:
    n_ok = sum(o.score.correct_detection for o in cell)
    sq = [o.score.sq_errors for o in cell if len(o.score.sq_errors)]
    if sq:
        rm = np.sqrt(np.mean(np.concatenate(sq), axis=0))
        rmse = (float(rm[0]), float(rm[1]), math.degrees(rm[2]))
    else:
        rmse = (math.nan, math.nan, math.nan)
    bound = scenario_bound(sc, value, axis_index)
    wall = sum(o.seconds for o in cell) if sc.record_timing else None
    return SweepRow(
        sc.sweep.axis, float(value), method, n_ok / len(cell), *rmse,
        *(bound if bound is not None else (None, None, None)), len(cell), wall,
    )


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def write_csv(res: SweepResult, path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in res.rows:
                w.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# CLI ---------------------------------------------------------------------------

def _scenario(args) -> ScenarioConfig:
    sc = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "method", None):
        changes["method"] = args.method
    return sc.replace(**changes) if changes else sc


def _cmd_rayleigh(args) -> None:
    sc = load_config(args.config) if args.config else ScenarioConfig()
    dr, dv, dth = rayleigh_cells(sc.system)
    print(f"range_m={dr:.6g} velocity_mps={dv:.6g} angle_deg={math.degrees(dth):.6g}")


def _cmd_simulate(args) -> None:
    sc = _scenario(args)
    rng = np.random.default_rng(derive_seed(sc.seed, 0, 0))
    trial = make_trial(sc, sc.sweep.values[0], rng)
    out = args.out or "observation.npz"
    truth = np.array([[t.b.real, t.b.imag, t.delay, t.doppler, t.angle] for t in trial.targets])
    np.savez(out, y=trial.y, X=trial.X, truth=truth, noise_var=trial.noise_var,
             system=json.dumps(dataclasses.asdict(trial.cfg)))
    print(out)


def _cmd_estimate(args) -> None:
    sc = _scenario(args)
    if not args.input:
        raise ConfigError("estimate needs --input <observation.npz>")
    with np.load(args.input) as data:
        cfg = SystemConfig(**json.loads(str(data["system"])))
        trial = Trial(data["y"], data["X"], cfg, [], [], float(data["noise_var"]))
    det = estimate(trial, sc, sc.method, sc.seed)
    doc = {
        "method": sc.method,
        "n_detected": det.n_detected,
        "targets": [
            {"range_m": e.range, "velocity_mps": e.velocity, "angle_deg": math.degrees(e.angle),
             "gain": [e.gain.real, e.gain.imag]}
            for e in det.estimates
        ],
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_sweep(args) -> None:
    sc = _scenario(args)
    log = (lambda msg: print(msg, file=sys.stderr, flush=True))
    res = run_sweep(sc, threads=args.threads, log=log)
    write_csv(res, args.out or "sweep.csv")


def _cmd_bcrb(args) -> None:
    sc = _scenario(args)
    res = SweepResult()
    for a, value in enumerate(sc.sweep.values):
        bound = scenario_bound(sc.replace(clutter=None), value, a) or (None, None, None)
        res.rows.append(SweepRow(sc.sweep.axis, float(value), "bcrb", math.nan, math.nan, math.nan, math.nan,
                                 *bound, 0, None))
    write_csv(res, args.out or "bcrb.csv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-sbl", description="Gridless SBL sensing experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "sweep", "bcrb", "rayleigh"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="scenario JSON")
        s.add_argument("--out", help="output path")
        s.add_argument("--seed", type=int, help="master seed override")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--method", choices=METHODS)
        if name == "estimate":
            s.add_argument("--input", help="observation .npz from `simulate`")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate, "estimate": _cmd_estimate, "sweep": _cmd_sweep,
        "bcrb": _cmd_bcrb, "rayleigh": _cmd_rayleigh,
    }
    try:
        handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
