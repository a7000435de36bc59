"""Finite-blocklength rate math (normal approximation).

Implements the short-packet rate approximation

    B = n * log2(1 + gamma) - log2(e) * Qinv(eps) * sqrt(n)

and its exact inverse in gamma, which turns a per-mini-slot bit and error
probability requirement into a required SINR target. The sqrt(n) term uses
a unit dispersion coefficient; the full SINR-dependent dispersion factor is
deliberately not applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = ["q_inv", "fbl_bits", "required_sinr", "UrllcRequirement", "requirements_from_config"]

LOG2E = math.log2(math.e)


def q_inv(eps: float) -> float:
    """Inverse Gaussian tail function Qinv(eps), eps in (0, 1).

    Backed by the inverse normal CDF (accurate to machine precision,
    well below the 1e-10 contract).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"q_inv requires 0 < eps < 1, got {eps}")
    return float(-ndtri(eps))


def fbl_bits(gamma, n: float, eps: float):
    """Bits deliverable in n symbols at SINR gamma and error probability eps.

    May be negative for tiny gamma; callers clamp at zero for reporting.
    """
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    if n < 1:
        raise ValueError("blocklength n must be >= 1")
    out = n * np.log2(1.0 + gamma) - LOG2E * q_inv(eps) * math.sqrt(n)
    return float(out) if out.ndim == 0 else out


def required_sinr(bits: float, n: float, eps: float) -> float:
    """Exact inverse of fbl_bits in gamma for a required bit payload."""
    if bits < 0:
        raise ValueError("bits must be nonnegative")
    if n < 1:
        raise ValueError("blocklength n must be >= 1")
    return float(2.0 ** ((bits + LOG2E * q_inv(eps) * math.sqrt(n)) / n) - 1.0)


@dataclass(frozen=True)
class UrllcRequirement:
    """Per-user low-latency QoS requirement with its derived SINR target."""

    bits: float
    error_prob: float
    blocklength: int
    gamma_req: float

    @classmethod
    def create(cls, bits: float, error_prob: float, blocklength: int) -> "UrllcRequirement":
        if not 0.0 < error_prob < 0.5:
            raise ValueError(f"error_prob must lie in (0, 0.5), got {error_prob}")
        if blocklength < 1:
            raise ValueError("blocklength must be >= 1")
        if bits < 0:
            raise ValueError("bits must be nonnegative")
        return cls(
            bits=float(bits),
            error_prob=float(error_prob),
            blocklength=int(blocklength),
            gamma_req=required_sinr(bits, blocklength, error_prob),
        )


def requirements_from_config(cfg) -> tuple[UrllcRequirement, ...]:
    """One requirement per URLLC user, blocklength n = W * T_ms."""
    from .scenario import derived_quantities

    n = derived_quantities(cfg).n
    return tuple(
        UrllcRequirement.create(b, e, n)
        for b, e in zip(cfg.urllc_bits_list(), cfg.urllc_error_prob_list())
    )
