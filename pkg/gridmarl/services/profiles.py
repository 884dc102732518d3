"""
Exogenous time series: CSV reading/writing and the synthetic day profiles
used by the bundled scenarios.

CSV format: header ``step,value``, one row per control step.
"""
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from gridmarl.core.errors import ConfigurationError

STEPS_PER_DAY_5MIN = 288


@lru_cache(maxsize=64)
def _read_cached(path: str, mtime: float) -> np.ndarray:
    frame = pd.read_csv(path)
    if list(frame.columns) != ["step", "value"]:
        raise ConfigurationError(f"expected header 'step,value', found {','.join(map(str, frame.columns))}", path)
    if not frame["step"].is_monotonic_increasing or (len(frame) and frame["step"].iloc[0] != 0):
        raise ConfigurationError("steps must start at 0 and increase", path)
    values = frame["value"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("profile contains non-finite values", path)
    values.setflags(write=False)
    return values


def read_profile(path: str | Path) -> np.ndarray:
    """
    Read a profile CSV. Results are cached and read-only, so series can be
    shared between environment instances.

    Args:
        path: CSV file with header step,value

    Returns:
        Values as an immutable float64 array
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"profile file not found: {path}")
    try:
        return _read_cached(str(path.resolve()), path.stat().st_mtime)
    except (pd.errors.EmptyDataError, ValueError) as e:
        raise ConfigurationError(f"cannot parse profile: {e}", str(path)) from e


def write_profile(path: str | Path, values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"step": np.arange(len(values)), "value": np.asarray(values, dtype=np.float64)}).to_csv(
        path, index=False, float_format="%.6f"
    )
    return path


def _hours(steps: int, dt_hours: float) -> np.ndarray:
    return np.arange(steps) * dt_hours


def clear_sky_pv(steps: int = STEPS_PER_DAY_5MIN, dt_hours: float = 5 / 60, peak_kw: float = 60.0,
                 sunrise: float = 6.0, sunset: float = 18.0) -> np.ndarray:
    """Half-sine between sunrise and sunset, peaking at midday."""
    hours = _hours(steps, dt_hours)
    phase = (hours - sunrise) / (sunset - sunrise)
    return np.where((phase > 0) & (phase < 1), peak_kw * np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)


def ambient_temperature(steps: int = STEPS_PER_DAY_5MIN, dt_hours: float = 5 / 60, mean: float = 27.0,
                        swing: float = 7.0, peak_hour: float = 15.0) -> np.ndarray:
    """Daily sinusoid peaking mid-afternoon."""
    hours = _hours(steps, dt_hours)
    return mean + swing * np.cos(2 * np.pi * (hours - peak_hour) / 24.0)


def residential_load_shape(steps: int = STEPS_PER_DAY_5MIN, dt_hours: float = 5 / 60,
                           base: float = 0.45, afternoon_peak: float = 0.55, evening_peak: float = 0.35) -> np.ndarray:
    """Per-unit load shape with an afternoon peak around 15:00 and an evening shoulder."""
    hours = _hours(steps, dt_hours)
    afternoon = afternoon_peak * np.exp(-0.5 * ((hours - 15.0) / 2.0) ** 2)
    evening = evening_peak * np.exp(-0.5 * ((hours - 19.5) / 1.5) ** 2)
    return base + afternoon + evening


DAY_PROFILES = {
    "pv_clear_sky.csv": clear_sky_pv,
    "ambient_temperature.csv": ambient_temperature,
    "residential_load.csv": residential_load_shape,
}


def write_day_profiles(directory: str | Path, steps: int = STEPS_PER_DAY_5MIN,
                       dt_hours: float = 5 / 60) -> list[Path]:
    """Write the default day profiles the bundled scenarios reference."""
    directory = Path(directory)
    return [write_profile(directory / name, make(steps, dt_hours)) for name, make in DAY_PROFILES.items()]
