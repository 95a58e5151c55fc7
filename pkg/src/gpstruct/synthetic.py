"""Synthetic data sets used by the experiments and tests."""

from __future__ import annotations

import numpy as np


def co2_like_series(
    rng: np.random.Generator,
    start: float = 1958.0,
    stop: float = 2001.0,
    noise: float = 0.3,
) -> tuple[np.ndarray, np.ndarray]:
    """Monthly series with a quadratic trend, an annual cycle with a harmonic, and noise.

    Shaped like the Mauna Loa CO2 record (ppm against decimal year).
    """
    x = np.arange(start, stop, 1.0 / 12.0) + 1.0 / 24.0
    t = x - start
    trend = 315.0 + 0.75 * t + 0.012 * t**2
    seasonal = 3.0 * np.sin(2.0 * np.pi * x) + 0.8 * np.sin(4.0 * np.pi * x + 0.5)
    # slowly varying wobble so the residual is not pure white noise
    wobble = 0.4 * np.sin(2.0 * np.pi * t / 7.3)
    return x, trend + seasonal + wobble + noise * rng.standard_normal(x.size)
