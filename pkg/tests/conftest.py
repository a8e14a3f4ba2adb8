import numpy as np
import pytest

from scrl.corpus import SynthesisConfig, generate_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """20 videos, 6 scenes each, D=16: big enough to exercise every stage."""
    return generate_corpus(
        SynthesisConfig(
            num_videos=20, scenes_per_video=6, shots_per_scene_min=4,
            shots_per_scene_max=9, dimension=16, latent_noise_sigma=0.25,
            interleave_prob=0.3, seed=11,
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)
