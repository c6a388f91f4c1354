"""The c-flow credibility score.

A window of (timestamp, box, median horizontal flow) samples ending at the current
frame t0 is reduced to two numbers: the summed absolute residual of the flow series
against its least-squares line (epsilon) and the change of box diagonal between the
two most recent samples (delta_d). Both are normalized with quantities intrinsic to
the window and combined as sigmoid(delta_d_norm / epsilon_norm).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from core.tracks import BBox, diagonal
from errors import (
    ConfigError,
    DegenerateAbscissa,
    InsufficientWindow,
    MissingCurrent,
    UnsortedWindow,
    WindowSpanError,
)


class BoxSource(str, Enum):
    GT = "GT"
    PRED = "PRED"
    HYP = "HYP"


@dataclass(frozen=True)
class WindowSample:
    timestamp: float
    frame_index: int
    box: BBox
    u: float
    source: BoxSource = BoxSource.GT

    def __post_init__(self):
        if not math.isfinite(self.u):
            raise ValueError(f"median flow must be finite, got {self.u}")


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float

    def at(self, t):
        return self.intercept + self.slope * t


@dataclass(frozen=True)
class CFlowParams:
    k: int = 5
    min_samples: int = 3
    tau_d: float = 1.0
    tau_u: float = 0.1
    tau_eps: float = 1e-3

    def validate(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.min_samples < 3:
            raise ConfigError(f"min_samples must be >= 3, got {self.min_samples}")
        for name in ("tau_d", "tau_u", "tau_eps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive number, got {value}")
        return self


class Normalized(NamedTuple):
    delta_d_norm: float
    epsilon_norm: float
    saturated: bool


@dataclass(frozen=True)
class CFlowResult:
    score: float
    epsilon: float
    epsilon_norm: float
    delta_d: float
    delta_d_norm: float
    n_samples: int
    saturated: bool
    fit: Optional[LineFit] = field(default=None, compare=False)

    CSV_FIELDS = ("score", "epsilon", "epsilon_norm", "delta_d", "delta_d_norm", "n_samples", "saturated")

    def to_row(self):
        return {name: getattr(self, name) for name in self.CSV_FIELDS}


def _series(samples):
    t = np.array([s.timestamp for s in samples], dtype=np.float64)
    u = np.array([s.u for s in samples], dtype=np.float64)
    return t, u


def fit_line(samples) -> LineFit:
    """Ordinary least squares of u against timestamp (closed form, centered)."""
    if len(samples) < 2:
        raise InsufficientWindow(f"a line fit needs >= 2 samples, got {len(samples)}")
    t, u = _series(samples)
    dt = t - t.mean()
    sxx = float(np.dot(dt, dt))
    if sxx == 0.0:
        raise DegenerateAbscissa("all timestamps in the window are equal")
    slope = float(np.dot(dt, u - u.mean())) / sxx
    intercept = float(u.mean()) - slope * float(t.mean())
    return LineFit(slope=slope, intercept=intercept)


def residuals(samples, fit: LineFit) -> np.ndarray:
    """Signed residuals u_i - (intercept + slope * t_i)."""
    t, u = _series(samples)
    return u - (fit.intercept + fit.slope * t)


def epsilon(samples, fit: LineFit) -> float:
    """Sum of absolute residuals; signed OLS residuals always sum to zero."""
    return float(np.sum(np.abs(residuals(samples, fit))))


def delta_d(box_t0: BBox, box_t1: BBox) -> float:
    return diagonal(box_t0) - diagonal(box_t1)


def normalize(delta_d_value: float, epsilon_value: float, samples, params: CFlowParams = CFlowParams()) -> Normalized:
    """Makes delta_d and epsilon dimensionless using only the window itself."""
    if len(samples) < 2:
        raise InsufficientWindow(f"normalization needs >= 2 samples, got {len(samples)}")
    d0 = diagonal(samples[-1].box)
    d1 = diagonal(samples[-2].box)
    delta_d_norm = delta_d_value / max(d0, d1, params.tau_d)

    u_scale = max(float(np.median(np.abs(_series(samples)[1]))), params.tau_u)
    raw = epsilon_value / (len(samples) * u_scale)
    saturated = raw < params.tau_eps
    return Normalized(delta_d_norm, max(raw, params.tau_eps), saturated)


SCORE_MIN = math.nextafter(0.0, 1.0)
SCORE_MAX = math.nextafter(1.0, 0.0)


def sigmoid(x: float) -> float:
    """Logistic function, kept inside the open interval (0, 1) for any finite x."""
    # Branch on sign so exp never overflows
    if x >= 0:
        value = 1.0 / (1.0 + math.exp(-x))
    else:
        z = math.exp(x)
        value = z / (1.0 + z)
    return min(max(value, SCORE_MIN), SCORE_MAX)


def check_window(window, params: CFlowParams, t0: Optional[int] = None) -> int:
    """Validates window shape and returns t0."""
    if len(window) < params.min_samples:
        raise InsufficientWindow(f"{len(window)} samples in window, need >= {params.min_samples}")
    indices = [s.frame_index for s in window]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise UnsortedWindow(f"window frame indices not strictly increasing: {indices}")
    if t0 is None:
        t0 = indices[-1]
    elif indices[-1] != t0:
        raise MissingCurrent(f"no sample at t0={t0}", frame_index=t0)
    if indices[0] < t0 - params.k:
        raise WindowSpanError(f"sample at frame {indices[0]} is older than t0 - k = {t0 - params.k}",
                              frame_index=t0)
    return t0


def cflow(window, params: CFlowParams = CFlowParams(), t0: Optional[int] = None) -> CFlowResult:
    """Credibility score of the box at the window's most recent frame."""
    check_window(window, params, t0)
    fit = fit_line(window)
    eps = epsilon(window, fit)
    dd = delta_d(window[-1].box, window[-2].box)
    norm = normalize(dd, eps, window, params)
    return CFlowResult(
        score=sigmoid(norm.delta_d_norm / norm.epsilon_norm),
        epsilon=eps,
        epsilon_norm=norm.epsilon_norm,
        delta_d=dd,
        delta_d_norm=norm.delta_d_norm,
        n_samples=len(window),
        saturated=norm.saturated,
        fit=fit,
    )
