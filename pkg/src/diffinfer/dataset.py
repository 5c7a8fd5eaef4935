from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class Dataset:
    """Paired covariates ``X`` (n, d_x) and responses ``Y`` (n, d_y)."""

    X: np.ndarray
    Y: np.ndarray
    x_names: list = field(default_factory=list)
    y_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1) if self.X.size else self.X.reshape(len(self.Y), 0)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if not self.x_names:
            self.x_names = [f"x{i + 1}" for i in range(self.d_x)]
        if not self.y_names:
            self.y_names = [f"y{i + 1}" for i in range(self.d_y)]

    def __len__(self):
        return self.Y.shape[0]

    @property
    def d_x(self):
        return self.X.shape[1]

    @property
    def d_y(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.Y[idx], list(self.x_names), list(self.y_names))
