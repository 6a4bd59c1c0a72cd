from typing import Optional

import pytest

from containers import Dataset
from simulator import ScenarioConfig, run_scenario


def junction_scenario(clutter: Optional[dict] = None, radar: Optional[dict] = None) -> ScenarioConfig:
	""" Four 60 m arms watched by one sensor for 30 s """
	return ScenarioConfig.model_validate({
		"duration": 30.0,
		"arrival_rate": 0.2,
		"map": {"arm_lengths": [60.0, 60.0, 60.0, 60.0], "parking": False},
		"sensors": [{"id": "sensor_a", "position": [-12.0, -12.0, 6.0], "yaw": 40.0, "pitch": 8.0, "radar": radar or {}}],
		"clutter": clutter or {},
	})


@pytest.fixture(scope="session")
def junction() -> Dataset:
	return run_scenario(junction_scenario())


@pytest.fixture(scope="session")
def noisy_junction() -> Dataset:
	""" Range noise of 0.3 m and 30 % static clutter """
	return run_scenario(junction_scenario(clutter={"static_fraction": 0.3}, radar={"range_noise_sigma": 0.3}))
