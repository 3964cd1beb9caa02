"""Input-feature normalization for the gain networks.

Statistics are computed once on a pilot rollout over training data and then
frozen; they travel with the model checkpoint. Normalized features are
clipped so that out-of-distribution test conditions cannot push unbounded
values into the recurrent cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_STD_FLOOR = 1e-8


@dataclass
class FeatureNormalizer:
    mean: np.ndarray
    scale: np.ndarray
    clip: float = 10.0

    def __call__(self, features: np.ndarray) -> np.ndarray:
        out = (features - self.mean) / self.scale
        if np.isfinite(self.clip):
            out = np.clip(out, -self.clip, self.clip)
        return out

    @classmethod
    def identity(cls, dim: int) -> "FeatureNormalizer":
        return cls(np.zeros(dim), np.ones(dim), clip=np.inf)

    @classmethod
    def fit(cls, samples: np.ndarray, clip: float = 10.0) -> "FeatureNormalizer":
        """Per-component statistics; constant components keep unit scale."""
        samples = np.asarray(samples, dtype=float).reshape(-1, samples.shape[-1])
        mean = samples.mean(axis=0)
        std = samples.std(axis=0)
        scale = np.where(std > _STD_FLOOR, std, 1.0)
        return cls(mean, scale, clip)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "clip": None if np.isinf(self.clip) else self.clip}

    @classmethod
    def from_json(cls, data: dict) -> "FeatureNormalizer":
        clip = data.get("clip")
        return cls(np.asarray(data["mean"], dtype=float),
                   np.asarray(data["scale"], dtype=float),
                   np.inf if clip is None else float(clip))
