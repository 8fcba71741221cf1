import numpy as np
import pytest
from hypothesis import settings, HealthCheck

from warpbench import GenConfig, generate_sample

settings.register_profile(
    "warpbench",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("warpbench")

# The acceptance suite's 50 pinned samples (256^2, K = seed % 4, seeds 0..49).
# Generated lazily and cached for the session; meshes are dropped after
# generation to keep memory bounded (no cached consumer needs them).
_ACCEPTANCE_BUNDLES: list = []


def acceptance_bundles():
    if not _ACCEPTANCE_BUNDLES:
        for seed in range(50):
            b = generate_sample(GenConfig(seed=seed, fold_count=seed % 4))
            b.mesh = None
            _ACCEPTANCE_BUNDLES.append(b)
    return _ACCEPTANCE_BUNDLES


@pytest.fixture(scope="session")
def small_bundle():
    """One 128^2 sample with two folds for integration-level unit tests."""
    return generate_sample(GenConfig(resolution=128, seed=11, fold_count=2))


@pytest.fixture(scope="session")
def flat_bundle():
    """Degenerate sample: no folds, no bend, frame margin zero."""
    return generate_sample(
        GenConfig(resolution=128, seed=3, fold_count=0, bend_amplitude=0.0,
                  frame_margin=0.0)
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
