# app/schemas/lora.py
from typing import List

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.utils.validation import is_nondecreasing


class LoraConfig(BaseModel):
    """Depth k plus the ranks of layers L-k .. L-1, shallowest first."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(ge=0)
    ranks: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_ranks(self) -> "LoraConfig":
        if len(self.ranks) != self.depth:
            raise ValueError(f"depth {self.depth} but {len(self.ranks)} ranks given")
        if any(rank < 1 for rank in self.ranks):
            raise ValueError(f"ranks must be positive, got {self.ranks}")
        if not is_nondecreasing(self.ranks):
            raise ValueError(f"ranks must be nondecreasing with depth, got {self.ranks}")
        return self

    @property
    def rank_sum(self) -> int:
        return sum(self.ranks)

    def layer_indices(self, num_layers: int) -> range:
        return range(num_layers - self.depth, num_layers)

    def rank_map(self, num_layers: int) -> dict:
        return dict(zip(self.layer_indices(num_layers), self.ranks))

    @classmethod
    def suffix_of(cls, distribution: List[int], depth: int) -> "LoraConfig":
        """Deepest `depth` entries of a global rank distribution."""
        ranks = list(distribution[len(distribution) - depth:]) if depth else []
        return cls(depth=depth, ranks=ranks)
