import numpy as np
import pytest
import torch

from scicodec.models import MultiTaskCodec


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    torch.use_deterministic_algorithms(True)


@pytest.fixture
def tiny_model():
    """Small 2-decoder hyperprior model for shape/coding tests."""
    return MultiTaskCodec(backbone="hyperprior", decoders=2, latent_channels=16,
                          hyper_channels=8, hidden_channels=8, stages=2, seed=7)


@pytest.fixture
def tiny_ar_model():
    return MultiTaskCodec(backbone="channel-ar", decoders=2, latent_channels=16,
                          hyper_channels=8, hidden_channels=8, stages=2, slices=4, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_pools(tmp_path_factory):
    """Small shared pools of procedural synthetic/natural images."""
    from scicodec import toydata
    root = tmp_path_factory.mktemp("pools")
    toydata.generate_synthetic_pool(root / "synthetic", 6, size=256, seed=11)
    toydata.generate_natural_pool(root / "natural", 6, size=256, seed=12)
    return root
