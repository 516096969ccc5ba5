import numpy as np
import pytest

from cystseg.synthetic import SynthSpec, generate


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small generated dataset: 3 volumes x 2 frames, 96x128 px."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    spec = SynthSpec(n_volumes=3, frames_per_volume=2, height=96, width=128,
                     band_top=16, band_bottom=80, axis_min=3, axis_max=7,
                     cysts_min=2, cysts_max=4, seed=11)
    manifest_path = generate(spec, root)
    return spec, manifest_path


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
