import pytest

from mtte.datagen import GeneratorConfig, generate_cohort


@pytest.fixture(scope="session")
def default_cohort():
    """The full-size default cohort (200 cases / 1000 controls), generated once."""
    return generate_cohort(GeneratorConfig(seed=0))
