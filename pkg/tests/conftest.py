import numpy as np
import pytest

from thermosched.datasets import binomial_dataset
from thermosched.noise import GeometricNoise


@pytest.fixture(autouse=True)
def disable_typer_rich_colors(monkeypatch):
    # https://rich.readthedocs.io/en/stable/console.html#environment-variables
    monkeypatch.setenv("TERM", "unknown")


@pytest.fixture()
def binomial():
    """Binomial(14, 0.5) pmf over the 15 states 0..14."""
    return binomial_dataset()


@pytest.fixture()
def geometric():
    return GeometricNoise()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240607)
