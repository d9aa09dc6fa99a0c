"""Serialization dispatch for the three RHS kinds."""

from __future__ import annotations

from .apce import ChaosRhs
from .kernels import KernelRhs
from .neural import NeuralRhs

_KINDS = {"chaos": ChaosRhs, "kernel": KernelRhs, "neural": NeuralRhs}


def rhs_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(payload)
