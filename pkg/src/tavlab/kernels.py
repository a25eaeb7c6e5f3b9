"""Backend selection for the hot MLP kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels`` is used. ``TAVLAB_BACKEND=python``
forces the fallback. Both backends expose ``loss``, ``loss_grad``, ``hvp``
and ``logits`` with identical signatures.
"""
import importlib
import os

from tavlab import _pykernels

IDENTITY, RELU, SIGMOID, TANH = (
    _pykernels.IDENTITY, _pykernels.RELU, _pykernels.SIGMOID, _pykernels.TANH)


def _load(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("tavlab._ckernels")
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        _load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def _default():
    forced = os.environ.get("TAVLAB_BACKEND")
    if forced:
        return forced
    return available_backends()[0]


BACKEND = _default()
_active = _load(BACKEND)


def set_backend(name):
    """Switch the process-wide backend; returns the previous name."""
    global BACKEND, _active
    previous = BACKEND
    _active = _load(name)
    BACKEND = name
    return previous


def active():
    return _active
