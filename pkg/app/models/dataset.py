# models/dataset.py
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

from app.services.numerics import Matrix
from app.utils.error_handling import ShapeMismatchError


@dataclass(frozen=True)
class SyntheticDataset:
    """Samples stored column-wise: features is (dim x n), labels has length n."""

    features: Matrix
    labels: NDArray[np.int64]
    num_classes: int

    def __post_init__(self) -> None:
        if self.features.shape[1] != self.labels.shape[0]:
            raise ShapeMismatchError(
                f"{self.features.shape[1]} feature columns but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes - 1}]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def subset(self, indices) -> "SyntheticDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return SyntheticDataset(self.features[:, indices], self.labels[indices], self.num_classes)

    def batch(self, indices) -> Tuple[Matrix, NDArray[np.int64]]:
        indices = np.asarray(indices, dtype=np.int64)
        return self.features[:, indices], self.labels[indices]

    def split(self, first: int) -> Tuple["SyntheticDataset", "SyntheticDataset"]:
        return self.subset(np.arange(first)), self.subset(np.arange(first, len(self)))

    def class_fractions(self) -> NDArray[np.float64]:
        counts = np.bincount(self.labels, minlength=self.num_classes)
        return counts / max(len(self), 1)


def concatenate(datasets) -> SyntheticDataset:
    datasets = list(datasets)
    return SyntheticDataset(
        np.concatenate([d.features for d in datasets], axis=1),
        np.concatenate([d.labels for d in datasets]),
        datasets[0].num_classes,
    )
