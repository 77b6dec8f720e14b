from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..core import Tensor
from ..core import functional as F


@dataclass(frozen=True)
class LossWeights:
    wi: float  # watermarked image vs cover
    rwm: float  # recovered message vs embedded
    ri: float  # restored image vs cover (noise-free stage only)

    def __post_init__(self):
        for name in ("wi", "rwm", "ri"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {getattr(self, name)}")


STAGE_WEIGHTS = {
    "noise_free": LossWeights(1.0, 0.001, 1.0),
    "specific": LossWeights(1.0, 0.01, 0.0),
    "combined": LossWeights(1.0, 1.0, 0.0),
}


def loss_terms(cover, wi: Tensor, msg, rwm_logits: Tensor, ri: Optional[Tensor], weights: LossWeights) -> dict:
    """Weighted terms of the total objective, keyed wi / rwm / ri."""
    terms = {"wi": F.mse_loss(wi, cover) * weights.wi,
             "rwm": F.mse_loss(rwm_logits, msg) * weights.rwm}
    if weights.ri > 0:
        if ri is None:
            raise ValueError("restored image required when the ri weight is positive")
        terms["ri"] = F.mse_loss(ri, cover) * weights.ri
    return terms


def loss_total(cover, wi: Tensor, msg, rwm_logits: Tensor, ri: Optional[Tensor], weights: LossWeights) -> Tensor:
    terms = loss_terms(cover, wi, msg, rwm_logits, ri, weights)
    total = terms["wi"] + terms["rwm"]
    if "ri" in terms:
        total = total + terms["ri"]
    return total
