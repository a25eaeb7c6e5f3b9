"""Task arithmetic vs. multitask gradient descent on small MLPs."""
__version__ = "0.1.0"

from tavlab.kernels import BACKEND, available_backends, set_backend  # noqa: F401
