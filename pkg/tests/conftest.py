import pytest

from pollencast.data import SeasonDefinition, label_years
from pollencast.synth import generate_synthetic


@pytest.fixture(scope="session")
def season_def():
    return SeasonDefinition(delta_c=120.0, delta_n=4)


@pytest.fixture(scope="session")
def seed42_dataset():
    """The 17-year reference dataset used throughout the suite."""
    return generate_synthetic(seed=42, years=17)


@pytest.fixture(scope="session")
def seed42_labels(seed42_dataset, season_def):
    return label_years(seed42_dataset, season_def)
