import random

import pytest

from onionkep import gen_params, keypair_from_secrets, make_params


class ScriptedRng:
    """Feeds predetermined draws to code expecting a random.Random."""

    def __init__(self, values):
        self.values = list(values)

    def randrange(self, start, stop=None):
        value = self.values.pop(0)
        if stop is None:
            start, stop = 0, start
        assert start <= value < stop, f"scripted draw {value} outside [{start}, {stop})"
        return value


@pytest.fixture
def toy_params():
    # p = q = 2, r = 11: n = 44, phi = 20. All worked examples live here.
    return make_params(2, 2, 11)


@pytest.fixture
def toy_alice(toy_params):
    return keypair_from_secrets(toy_params, 3, 13)


@pytest.fixture
def toy_bob(toy_params):
    return keypair_from_secrets(toy_params, 5, 15)


@pytest.fixture(scope="session")
def params_64():
    return gen_params(64, random.Random(0xBEEF))


@pytest.fixture(scope="session")
def params_256():
    return gen_params(256, random.Random(0xCAFE))
