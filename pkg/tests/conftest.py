import random

import numpy as np
import pytest
import torch

from vpntk.backbones import ConditionalGenerator, FeatureExtractor
from vpntk.ntk_features import NTKConfig, build_feature_map


@pytest.fixture(autouse=True)
def entropy_audit(monkeypatch):
    """Fail any test that draws from a global (unseeded) RNG or asks for an unseeded generator."""
    real_default_rng = np.random.default_rng

    def seeded_only(seed=None):
        if seed is None:
            raise AssertionError("unseeded numpy Generator requested")
        return real_default_rng(seed)

    monkeypatch.setattr(np.random, "default_rng", seeded_only)
    np_state = np.random.get_state()
    torch_state = torch.random.get_rng_state().clone()
    py_state = random.getstate()
    yield
    np_after = np.random.get_state()
    assert np_after[0] == np_state[0] and np.array_equal(np_after[1], np_state[1]) and np_after[2:] == np_state[2:], \
        "global numpy RNG was used"
    assert torch.equal(torch.random.get_rng_state(), torch_state), "global torch RNG was used"
    assert random.getstate() == py_state, "global random module was used"


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def toy_gen():
    return ConditionalGenerator.toy(0)


@pytest.fixture(scope="session")
def toy_fe():
    return FeatureExtractor.toy(0)


@pytest.fixture(scope="session")
def micro():
    """Small seeded pipeline pieces for finite-difference checks: 8-dim features, narrow NTK net."""
    gen = ConditionalGenerator.toy(3, latent_dim=4, num_source_classes=5)
    fe = FeatureExtractor.toy(3, feat_dim=8)
    fmap = build_feature_map(NTKConfig(8, (6,), init_seed=3))
    return gen, fe, fmap


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        lines.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
