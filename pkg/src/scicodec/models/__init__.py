from .codec import MultiTaskCodec, CapabilityError, PaddingRequiredError
from .gdn import GDN, gdn
from .quant import quantize, round_away
from .gaussian import gaussian_bin_likelihood, bits_from_likelihood, SIGMA_MIN, LIKELIHOOD_FLOOR
from .factorized import FactorizedPrior

__all__ = [
    "MultiTaskCodec",
    "CapabilityError",
    "PaddingRequiredError",
    "GDN",
    "gdn",
    "quantize",
    "round_away",
    "gaussian_bin_likelihood",
    "bits_from_likelihood",
    "FactorizedPrior",
    "SIGMA_MIN",
    "LIKELIHOOD_FLOOR",
]
