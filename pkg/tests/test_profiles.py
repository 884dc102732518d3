from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gridmarl.config import settings
from gridmarl.core.errors import ConfigurationError
from gridmarl.services.profiles import (
    DAY_PROFILES,
    ambient_temperature,
    clear_sky_pv,
    read_profile,
    residential_load_shape,
    write_day_profiles,
    write_profile,
)


def test_clear_sky_is_zero_at_night_and_peaks_at_noon() -> None:
    pv = clear_sky_pv(peak_kw=60.0)
    assert pv.shape == (288,)
    assert pv[:72].max() == 0.0
    assert pv[216:].max() == 0.0
    assert pv[144] == pytest.approx(60.0)
    assert pv.min() >= 0.0


def test_ambient_peaks_mid_afternoon() -> None:
    temps = ambient_temperature(mean=27.0, swing=7.0)
    assert int(np.argmax(temps)) == 180
    assert temps.max() == pytest.approx(34.0)
    assert temps.min() == pytest.approx(20.0)


def test_load_shape_stays_above_base() -> None:
    load = residential_load_shape(base=0.45)
    assert load.min() >= 0.45
    assert 170 <= int(np.argmax(load)) <= 190


def test_bundled_profiles_are_the_default_day(tmp_path: Path) -> None:
    written = write_day_profiles(tmp_path)
    assert sorted(p.name for p in written) == sorted(DAY_PROFILES)
    bundled = Path(settings.scenarios_folder) / "profiles"
    for path in written:
        np.testing.assert_allclose(read_profile(path), read_profile(bundled / path.name), atol=1e-6)


def test_profiles_are_read_only(tmp_path: Path) -> None:
    values = read_profile(write_profile(tmp_path / "p.csv", np.arange(4.0)))
    with pytest.raises(ValueError):
        values[0] = 1.0


def test_bad_header_is_a_configuration_error(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("t,kw\n0,1.0\n")
    with pytest.raises(ConfigurationError):
        read_profile(path)


def test_missing_profile(tmp_path: Path) -> None:
    with pytest.raises(ConfigurationError):
        read_profile(tmp_path / "absent.csv")
