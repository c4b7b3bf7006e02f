"""Gaussian-mechanism calibration for the one-shot mean embedding release."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import InvalidArgumentError

SIGMA_TOL = 1e-6


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not (np.isfinite(value) and value > 0):
            raise InvalidArgumentError(f"{name} must be a positive finite number, got {value!r}")


def embedding_sensitivity(m: int) -> float:
    """Replace-one Frobenius sensitivity of the per-class mean embedding.

    Each record contributes ``phi(x) y^T / m`` with a unit-norm feature and a
    one-hot label, so swapping one record moves the sum by at most ``2 / m``.
    """
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise InvalidArgumentError(f"record count must be a positive integer, got {m!r}")
    return 2.0 / int(m)


def delta_of_sigma(epsilon: float, noise_std: float, sensitivity: float) -> float:
    """Exact delta(epsilon) of a Gaussian mechanism with the given noise std and L2 sensitivity."""
    _check_positive(epsilon=epsilon, noise_std=noise_std, sensitivity=sensitivity)
    ratio = sensitivity / noise_std
    a = ratio / 2.0 - epsilon / ratio
    b = -ratio / 2.0 - epsilon / ratio
    # log-space keeps e^eps * Phi(b) from overflowing for large epsilon
    first = math.exp(norm.logcdf(a))
    second = math.exp(epsilon + norm.logcdf(b))
    return max(first - second, 0.0)


def classical_sigma(epsilon: float, delta: float) -> float:
    """sqrt(2 ln(1.25/delta)) / epsilon."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def calibrate_noise_multiplier(epsilon: float | None = None, delta: float | None = None, *, disabled: bool = False) -> float:
    """Smallest unit-sensitivity noise multiplier meeting (epsilon, delta).

    Bisection on the exact privacy curve; the result is always on the feasible
    side, i.e. ``delta_of_sigma(epsilon, sigma, 1) <= delta``.
    ``disabled=True`` returns 0 and is the only way to turn the noise off.
    """
    if disabled:
        return 0.0
    if epsilon is None or delta is None:
        raise InvalidArgumentError("epsilon and delta are required unless privacy is disabled")
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise InvalidArgumentError(f"epsilon must be positive and finite, got {epsilon!r}")
    if not (0.0 < delta < 1.0):
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta!r}")

    lo, hi = 1e-3, max(classical_sigma(epsilon, delta), 1e-3)
    while delta_of_sigma(epsilon, lo, 1.0) <= delta:
        lo /= 2.0
    while delta_of_sigma(epsilon, hi, 1.0) > delta:
        hi *= 2.0
    # far tighter than SIGMA_TOL so the delta target is met with negligible slack
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if delta_of_sigma(epsilon, mid, 1.0) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class PrivacyParams:
    """Parameters of the single noisy release."""

    epsilon: float | None
    delta: float | None
    sigma: float
    m: int
    sensitivity: float
    disabled: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be nonnegative")
        if self.sigma == 0 and not self.disabled:
            raise InvalidArgumentError("sigma = 0 requires the explicit privacy-disabled mode")

    @property
    def noise_std(self) -> float:
        """Per-entry standard deviation of the embedding noise, 2 sigma / m."""
        return self.sigma * self.sensitivity

    @classmethod
    def calibrate(cls, epsilon, delta, m, disabled=False):
        sens = embedding_sensitivity(m)
        if disabled:
            return cls(epsilon=None, delta=None, sigma=0.0, m=int(m), sensitivity=sens, disabled=True)
        sigma = calibrate_noise_multiplier(epsilon, delta)
        return cls(epsilon=float(epsilon), delta=float(delta), sigma=sigma, m=int(m), sensitivity=sens)

    def report(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sigma": self.sigma,
            "sensitivity": self.sensitivity,
            "m": self.m,
            "disabled": self.disabled,
        }
