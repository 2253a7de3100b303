"""Feature transfer learning for classifiers trained on imbalanced data.

Augments under-represented classes in feature space by transferring
intra-class variance from data-rich classes through a shared PCA basis,
then trains with a two-stage alternating regimen. Everything runs at desk
scale on synthetic vector data.
"""

__version__ = "0.1.0"

from ._kernels import USING_NUMBA, kernel_mode

__all__ = ["USING_NUMBA", "kernel_mode", "__version__"]
