"""Closed-loop Measure-Infer-Move sensor strategy on the disc boundary.

Each round collects a window of noisy flux samples at the current
sensor angle, re-runs Bayesian inference on all accumulated data, and
then decides where to move from a finite difference of the absolute
end-of-window flux at the sensor's two neighbors.  The loop stops when
the current angle is a strict local flux-magnitude maximum, or when the
movement direction reverses (after one extra sensing window).

Two calibration knobs reconcile the step rule with the published
experiment geometry:

* ``move_fraction``: the angular displacement applied per move is this
  fraction of the step-rule distance d_k, while the travel time keeps
  the full b = d_k / c.  The published window timings and sensor angles
  are consistent only with fraction 1/2.
* ``lagged_direction``: when True, the direction of move k is decided
  from the triple measured at the end of window k-1 (the window-0 move
  uses its own triple).  The published sensor paths require this lag;
  the literal per-window rule is available with False.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class Direction(enum.Enum):
    CW = -1
    CCW = 1


class StopReason(enum.Enum):
    CONTINUE = "continue"
    LOCAL_MAX = "local_max"
    REVERSAL = "reversal"


@dataclass
class StrategyParams:
    m: int = 10
    c1: float = 1.0 / 20.0
    speed: float = 20.0 * math.pi
    n_t: int = 80
    delta_theta: float = math.pi / 10.0  # boundary node spacing of the inversion grid
    window_length: float = 80.0 / 400.0
    move_fraction: float = 0.5
    lagged_direction: bool = True
    max_windows: int = 12

    def __post_init__(self):
        if self.m < 1 or self.c1 <= 0 or self.speed <= 0 or self.n_t < 1:
            raise ValueError("invalid strategy parameters")
        if self.delta_theta <= 0 or self.window_length <= 0:
            raise ValueError("invalid strategy parameters")


@dataclass
class SensorState:
    theta: float
    prev_dir: Optional[Direction] = None
    k: int = 0

    def __post_init__(self):
        self.theta = self.theta % TWO_PI


@dataclass
class TravelBudget:
    d: float  # arc distance of the step rule
    b: float  # travel time d / speed


@dataclass
class MeasurementSet:
    """Accumulated flux records and the per-window decision triples."""

    times: List[float] = field(default_factory=list)
    thetas: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    triples: List[tuple] = field(default_factory=list)  # (|d-|, |d|, |d+|) raw values

    def extend(self, times, thetas, values):
        self.times.extend(times)
        self.thetas.extend(thetas)
        self.values.extend(values)

    def arrays(self):
        return (
            np.asarray(self.times),
            np.asarray(self.thetas),
            np.asarray(self.values),
        )

    def __len__(self):
        return len(self.times)


@dataclass
class WindowRecord:
    k: int
    t_start: float
    t_end: float
    theta: float
    direction: Optional[Direction]
    d: float
    b: float
    stop: StopReason


@dataclass
class StrategyResult:
    windows: List[WindowRecord]
    posteriors: list
    data: MeasurementSet
    sensor_path: List[float]
    final_posterior: object
    stop_reason: StopReason


def sample_window(t_start: float, t_end: float, theta: float, n_t: int,
                  truth_flux: Callable[[float, float], float], sigma: float, rng):
    """N_t uniformly spaced sample times in (t_start, t_end] including
    the right endpoint, with additive N(0, sigma^2) noise."""
    if t_end <= t_start:
        raise ValueError("sensor cannot arrive before the window ends")
    step = (t_end - t_start) / n_t
    times = t_start + step * np.arange(1, n_t + 1)
    clean = np.array([truth_flux(theta, t) for t in times])
    noisy = clean + sigma * rng.standard_normal(n_t)
    return times, noisy


def measure_triple(theta: float, t: float, delta_theta: float,
                   truth_flux: Callable[[float, float], float], sigma: float, rng):
    """Noisy flux at (theta - dth, theta, theta + dth) at time t."""
    angles = (theta - delta_theta, theta, theta + delta_theta)
    return tuple(truth_flux(a % TWO_PI, t) + sigma * rng.standard_normal()
                 for a in angles)


def angular_derivative(triple, delta_theta: float) -> float:
    """Centered difference of the absolute flux, (|d+| - |d-|)/(2 dth)."""
    lo, _, hi = triple
    return (abs(hi) - abs(lo)) / (2.0 * delta_theta)


def decide_direction(phi_theta: float) -> Direction:
    """Counterclockwise when the absolute flux grows with theta."""
    return Direction.CCW if phi_theta > 0 else Direction.CW


def step_size(direction: Direction, prev_dir: Optional[Direction],
              params: StrategyParams) -> TravelBudget:
    """Step-rule distance: m c1 pi on a kept course, floor(m/2) c1 pi on
    a direction change; travel time is distance over speed."""
    if prev_dir is None or direction == prev_dir:
        d = params.m * params.c1 * math.pi
    else:
        d = (params.m // 2) * params.c1 * math.pi
    return TravelBudget(d=d, b=d / params.speed)


def move_sensor(sensor: SensorState, direction: Direction, distance: float) -> SensorState:
    """Advance the sensor by an arc length along the boundary."""
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    theta = (sensor.theta + direction.value * distance) % TWO_PI
    return SensorState(theta=theta, prev_dir=direction, k=sensor.k + 1)


def check_stop(triple, direction: Direction, prev_dir: Optional[Direction]) -> StopReason:
    """Strict local maximum wins over reversal, per the loop's branch order."""
    lo, mid, hi = (abs(v) for v in triple)
    if mid > lo and mid > hi:
        return StopReason.LOCAL_MAX
    if prev_dir is not None and direction != prev_dir:
        return StopReason.REVERSAL
    return StopReason.CONTINUE


def run_strategy(
    params: StrategyParams,
    truth_flux: Callable[[float, float], float],
    sigma: float,
    rng,
    infer: Callable[[MeasurementSet, int], object],
    theta0: float,
    dt_sample: Optional[float] = None,
) -> StrategyResult:
    """Execute the Measure-Infer-Move loop.

    ``infer(data, k)`` runs the inference subroutine on all accumulated
    data and returns the window's posterior object.  ``truth_flux`` is
    the fine-grid truth solver, queried as flux(theta, t).
    """
    sensor = SensorState(theta=theta0)
    data = MeasurementSet()
    windows: List[WindowRecord] = []
    posteriors = []
    path = [sensor.theta]
    T = 0.0
    b = 0.0
    stop = StopReason.CONTINUE

    for k in range(params.max_windows):
        t_start = T + b
        t_end = t_start + params.window_length
        times, values = sample_window(t_start, t_end, sensor.theta, params.n_t,
                                      truth_flux, sigma, rng)
        data.extend(times, [sensor.theta] * params.n_t, values)
        posteriors.append(infer(data, k))

        triple = measure_triple(sensor.theta, t_end, params.delta_theta,
                                truth_flux, sigma, rng)
        data.triples.append(triple)

        if params.lagged_direction and len(data.triples) > 1:
            decision_triple = data.triples[-2]
        else:
            decision_triple = triple
        direction = decide_direction(angular_derivative(decision_triple,
                                                        params.delta_theta))
        budget = step_size(direction, sensor.prev_dir, params)
        stop = check_stop(triple, direction, sensor.prev_dir)
        windows.append(WindowRecord(k, t_start, t_end, sensor.theta, direction,
                                    budget.d, budget.b, stop))
        sensor = move_sensor(sensor, direction, params.move_fraction * budget.d)
        path.append(sensor.theta)
        T, b = t_end, budget.b

        if stop is StopReason.LOCAL_MAX:
            path.pop()  # the stopping rule returns before the move takes effect
            return StrategyResult(windows, posteriors, data, path,
                                  posteriors[-1], stop)
        if stop is StopReason.REVERSAL:
            t_start = T + b
            t_end = t_start + params.window_length
            times, values = sample_window(t_start, t_end, sensor.theta, params.n_t,
                                          truth_flux, sigma, rng)
            data.extend(times, [sensor.theta] * params.n_t, values)
            final = infer(data, k + 1)
            posteriors.append(final)
            windows.append(WindowRecord(k + 1, t_start, t_end, sensor.theta, None,
                                        0.0, 0.0, StopReason.REVERSAL))
            return StrategyResult(windows, posteriors, data, path, final, stop)

    path.pop()  # window budget exhausted before the last move was measured
    return StrategyResult(windows, posteriors, data, path, posteriors[-1], stop)


def run_fixed_sensor(
    params: StrategyParams,
    truth_flux: Callable[[float, float], float],
    sigma: float,
    rng,
    infer: Callable[[MeasurementSet, int], object],
    theta0: float,
    schedule: List[tuple],
) -> StrategyResult:
    """Baseline: identical window schedule but the sensor never moves.

    ``schedule`` is a list of (t_start, t_end) pairs, typically copied
    from a moving-sensor run so the data budgets match exactly.
    """
    data = MeasurementSet()
    windows = []
    posteriors = []
    theta = theta0 % TWO_PI
    for k, (t_start, t_end) in enumerate(schedule):
        times, values = sample_window(t_start, t_end, theta, params.n_t,
                                      truth_flux, sigma, rng)
        data.extend(times, [theta] * params.n_t, values)
        posteriors.append(infer(data, k))
        windows.append(WindowRecord(k, t_start, t_end, theta, None, 0.0, 0.0,
                                    StopReason.CONTINUE))
    return StrategyResult(windows, posteriors, data, [theta] * len(schedule),
                          posteriors[-1], StopReason.CONTINUE)
