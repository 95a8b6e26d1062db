"""Rule-fact attack-path enumeration over digital-twin network models."""

from importlib import resources

from .model import Network, Scenario, load_model, validate_model
from .traversal import RealityPath, run_traversal
from .values import FactValue, ValueKind

__version__ = "0.1.0"

FIXTURES = ("model1", "model2")


def fixture_bytes(name: str) -> bytes:
    """Raw bytes of a bundled model file (``model1`` or ``model2``)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}")
    return resources.files(__package__).joinpath("fixtures", f"{name}.json").read_bytes()


def load_fixture(name: str) -> Network:
    return load_model(fixture_bytes(name))


__all__ = [
    "FactValue",
    "Network",
    "RealityPath",
    "Scenario",
    "ValueKind",
    "fixture_bytes",
    "load_fixture",
    "load_model",
    "run_traversal",
    "validate_model",
]
