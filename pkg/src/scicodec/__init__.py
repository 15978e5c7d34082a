"""scicodec: multi-task learned compression for screen content images.

A learned image codec whose shared latent serves two synthesis heads,
input reconstruction and synthetic/natural region segmentation, together
with the dataset synthesizer, bit-exact entropy coder, quality metrics,
and BD-rate evaluation harness needed to run the full experiment matrix.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
