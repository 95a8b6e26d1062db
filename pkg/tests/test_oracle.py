import dataclasses
from math import perm

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpath import load_fixture
from twinpath.generate import GEN_KINDS, dumps_model, random_model, synthetic_model
from twinpath.model import validate_model
from twinpath.oracle import MultisetDigest, OracleLimitExceeded, enumerate_paths, oracle_digest

from .support import engine_digest, mini_doc, net_from


def hub_count(n: int) -> int:
    return sum(perm(n, k) for k in range(n + 1))


# -- digest --


def test_digest_is_order_independent_and_counts_duplicates():
    a = MultisetDigest().update([b"x", b"y", b"z"])
    b = MultisetDigest().update([b"z", b"x", b"y"])
    assert a == b and a.hexdigest() == b.hexdigest()
    assert MultisetDigest().update([b"x", b"x"]) != MultisetDigest().update([b"x"])
    assert MultisetDigest().hexdigest() == "0" * 64


# -- oracle --


@pytest.mark.parametrize("name", ["model1", "model2"])
def test_oracle_on_fixtures(name):
    net = load_fixture(name)
    assert len(enumerate_paths(net, net.scenario())) == 65
    assert oracle_digest(net, net.scenario()) == engine_digest(net)


def test_oracle_start_equals_end():
    net = net_from(mini_doc())
    sc = dataclasses.replace(net.scenario(), end_container="A")
    assert len(enumerate_paths(net, sc)) == 1


def test_oracle_limit():
    net = load_fixture("model1")
    with pytest.raises(OracleLimitExceeded):
        enumerate_paths(net, net.scenario(), max_branches=10)


@pytest.mark.parametrize("seed", range(40))
def test_random_models_validate_and_agree(seed):
    net = net_from(random_model(seed))
    assert validate_model(net) == []
    assert engine_digest(net) == oracle_digest(net, net.scenario())


# -- generator --


@pytest.mark.parametrize("n", range(1, 6))
def test_hub_matches_permutation_closed_form(n):
    assert engine_digest(net_from(synthetic_model("hub", size=n))).count == hub_count(n)


def test_hub4_is_65():
    net = net_from(synthetic_model("hub", size=4))
    assert oracle_digest(net, net.scenario()).count == 65 == hub_count(4)


def test_grid_2x2_matches_oracle():
    net = net_from(synthetic_model("grid", rows=2, cols=2))
    assert engine_digest(net) == oracle_digest(net, net.scenario())
    assert engine_digest(net).count == 2


@pytest.mark.parametrize("size, depth", [(1, 1), (2, 1), (2, 2), (3, 2), (2, 3), (3, 3)])
def test_umbrella_count(size, depth):
    net = net_from(synthetic_model("umbrella", size=size, depth=depth))
    d = engine_digest(net)
    assert d.count == size ** (depth + 1)
    assert d == oracle_digest(net, net.scenario())


def test_closing_a_hub_spoke_removes_a_satellite():
    # L2 is the first Hub -> satellite link
    net = net_from(synthetic_model("hub", size=4, closed=["L2"]))
    assert engine_digest(net).count == hub_count(3)


def test_branching_generator_matches_oracle():
    net = net_from(synthetic_model("hub", size=3, branch=True))
    assert engine_digest(net) == oracle_digest(net, net.scenario())
    assert engine_digest(net).count > hub_count(3)


@pytest.mark.parametrize("kind", GEN_KINDS)
def test_generation_is_deterministic(kind):
    assert dumps_model(synthetic_model(kind, seed=7)) == dumps_model(synthetic_model(kind, seed=7))
    assert validate_model(net_from(synthetic_model(kind, seed=7))) == []


def test_generator_rejects_bad_arguments():
    with pytest.raises(ValueError):
        synthetic_model("ring")
    with pytest.raises(ValueError):
        synthetic_model("hub", size=0)
    with pytest.raises(ValueError):
        synthetic_model("hub", closed=["L99"])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_random_model_is_deterministic(seed):
    assert random_model(seed) == random_model(seed)
