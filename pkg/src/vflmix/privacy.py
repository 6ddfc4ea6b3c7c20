"""Privacy mechanisms applied to the gradients the active party sends out.

Both mechanisms act on backward gradient messages only; forward embeddings
are never touched. Noise is i.i.d. per entry per message, no clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ContractError

MECHANISMS = ("none", "gaussian_noise", "top_k")


@dataclass(frozen=True)
class PrivacyConfig:
    mechanism: str = "none"
    noise_variance: float = 0.0
    compression_ratio: float = 1.0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ContractError(f"mechanism must be one of {MECHANISMS}")
        if self.noise_variance < 0:
            raise ContractError("noise variance must be non-negative")
        if not 0.0 < self.compression_ratio <= 1.0:
            raise ContractError("compression ratio must lie in (0, 1]")


def dp_perturb(grad, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Add elementwise N(0, variance) noise."""
    if variance < 0:
        raise ContractError("noise variance must be non-negative")
    g = np.asarray(grad, dtype=np.float64)
    if variance == 0.0:
        return g.copy()
    return g + rng.normal(0.0, np.sqrt(variance), size=g.shape)


def compress_topk(grad, ratio: float) -> np.ndarray:
    """Keep the ceil(ratio*d) largest-magnitude entries per row, zero the rest.

    Ties keep the lower index. Accepts a single row or a 2-D batch of rows.
    """
    if not 0.0 < ratio <= 1.0:
        raise ContractError("compression ratio must lie in (0, 1]")
    g = np.asarray(grad, dtype=np.float64)
    single_row = g.ndim == 1
    rows = g.reshape(1, -1) if single_row else g
    if rows.ndim != 2:
        raise ContractError("gradient must be 1-D or 2-D")
    d = rows.shape[1]
    keep = int(np.ceil(ratio * d))
    out = np.zeros_like(rows)
    # stable sort on -|g| keeps the lower index first among equal magnitudes
    order = np.argsort(-np.abs(rows), axis=1, kind="stable")[:, :keep]
    np.put_along_axis(out, order, np.take_along_axis(rows, order, axis=1), axis=1)
    return out[0] if single_row else out


def apply_privacy(grad, config: PrivacyConfig, rng: np.random.Generator) -> np.ndarray:
    if config.mechanism == "gaussian_noise":
        return dp_perturb(grad, config.noise_variance, rng)
    if config.mechanism == "top_k":
        return compress_topk(grad, config.compression_ratio)
    return np.asarray(grad, dtype=np.float64)
