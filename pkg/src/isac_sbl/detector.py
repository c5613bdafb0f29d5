"""Cumulative-energy detection on posterior-mean gains and trial scoring."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .waveform import SystemConfig, delay_to_range, doppler_to_velocity

DEFAULT_THRESHOLD = 0.9
_OUT_OF_GATE = 1e9


@dataclass(frozen=True)
class Estimate:
    range: float
    velocity: float
    angle: float
    gain: complex


@dataclass
class DetectionResult:
    active_slots: list[int]
    estimates: list[Estimate] = field(default_factory=list)
    # set by grid methods
    grid_indices: list[tuple[int, int, int]] | None = None
    residual_energy: float | None = None

    @property
    def n_detected(self) -> int:
        return len(self.active_slots)


@dataclass
class TrialScore:
    correct_detection: bool
    # one row per matched pair: (range m, velocity m/s, angle rad) squared errors
    sq_errors: np.ndarray
    pairs: list[tuple[int, int]]
    unmatched_truth: int
    unmatched_estimates: int


def detect(b_hat, threshold: float = DEFAULT_THRESHOLD) -> tuple[int, list[int]]:
    """Smallest set of slots holding at least `threshold` of the total energy."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    energy = np.abs(np.asarray(b_hat)) ** 2
    total = energy.sum()
    if total <= 0:
        return 0, []
    order = np.argsort(-energy, kind="stable")
    frac = np.cumsum(energy[order]) / total
    # guard the comparison against round-off in the last partial sum
    h = int(np.searchsorted(frac, threshold * (1 - 1e-12))) + 1
    h = min(h, energy.size)
    return h, [int(q) for q in order[:h]]


def extract(state, active_slots, cfg: SystemConfig) -> list[Estimate]:
    """Convert the chosen slots of a ParamState to physical estimates."""
    out = []
    for q in active_slots:
        out.append(Estimate(
            range=float(delay_to_range(state.tau[q])),
            velocity=float(doppler_to_velocity(state.f_d[q], cfg)),
            angle=float(state.theta[q]),
            gain=complex(state.b[q]),
        ))
    return out


def detect_state(state, cfg: SystemConfig, threshold: float = DEFAULT_THRESHOLD) -> DetectionResult:
    _, slots = detect(state.b, threshold)
    return DetectionResult(slots, extract(state, slots, cfg))


def _truth_triplet(t, cfg):
    return np.array([t.range, t.velocity(cfg), t.angle])


def score_trial(truth, det: DetectionResult, gates, cfg: SystemConfig) -> TrialScore:
    """Gate-constrained optimal assignment between truth targets and estimates.

    Out-of-gate pairs get a prohibitive cost so the assignment first
    maximizes the number of admissible matches, then minimizes the total
    gate-normalized distance among them.
    """
    gates = np.asarray(gates, dtype=float)
    if gates.shape != (3,) or np.any(gates <= 0):
        raise ValueError("gates must be three positive numbers")
    T = np.array([_truth_triplet(t, cfg) for t in truth]).reshape(-1, 3)
    E = np.array([[e.range, e.velocity, e.angle] for e in det.estimates]).reshape(-1, 3)
    n_t, n_e = len(T), len(E)
    pairs: list[tuple[int, int]] = []
    if n_t and n_e:
        diff = (T[:, None, :] - E[None, :, :]) / gates
        cost = np.sum(diff**2, axis=2)
        inside = np.all(np.abs(diff) <= 1, axis=2)
        cost = np.where(inside, cost, _OUT_OF_GATE)
        rows, cols = linear_sum_assignment(cost)
        pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if inside[i, j]]
    sq = np.array([(T[i] - E[j]) ** 2 for i, j in pairs]).reshape(-1, 3)
    correct = n_e == n_t and len(pairs) == n_t
    return TrialScore(correct, sq, pairs, n_t - len(pairs), n_e - len(pairs))


def rmse(scores) -> np.ndarray:
    """Per-dimension RMSE over all matched pairs of the given trials."""
    rows = [s.sq_errors for s in scores if len(s.sq_errors)]
    if not rows:
        return np.full(3, np.nan)
    return np.sqrt(np.mean(np.concatenate(rows), axis=0))
