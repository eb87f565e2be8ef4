"""Per-pixel channel-mixing transforms (1x1 convolutions) and PCA calibration."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import check_tensor, read_array, write_array


@dataclass(frozen=True)
class ChannelTransform:
    """A forward/inverse pair of affine channel maps.

    The inverse is stored independently of the forward map; nothing forces
    it to be the exact matrix inverse. ``kind == "identity"`` passes tensors
    of any channel count through unchanged.
    """

    kind: str = "identity"
    forward: Optional[np.ndarray] = None
    forward_bias: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None
    inverse_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "identity":
            return
        if self.kind != "conv1x1":
            raise ValueError(f"unknown transform kind {self.kind!r}")
        c = None
        for name in ("forward", "inverse"):
            m = np.asarray(getattr(self, name), dtype=np.float32)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ShapeError(f"{name} matrix must be square, got {m.shape}")
            if c is not None and m.shape[0] != c:
                raise ShapeError("forward and inverse matrices differ in size")
            c = m.shape[0]
            object.__setattr__(self, name, m)
        for name in ("forward_bias", "inverse_bias"):
            b = getattr(self, name)
            b = np.zeros(c, np.float32) if b is None else np.asarray(b, np.float32).reshape(-1)
            if b.shape != (c,):
                raise ShapeError(f"{name} must have length {c}, got {b.shape}")
            object.__setattr__(self, name, b)

    @classmethod
    def identity(cls) -> "ChannelTransform":
        return cls()

    @classmethod
    def from_matrix(cls, forward, bias=None, inverse=None, inverse_bias=None) -> "ChannelTransform":
        """Build a conv1x1 transform; a missing inverse is the exact affine inverse."""
        forward = np.asarray(forward, dtype=np.float32)
        b = np.zeros(forward.shape[0]) if bias is None else np.asarray(bias, np.float64).reshape(-1)
        if inverse is None:
            inv = np.linalg.inv(forward.astype(np.float64))
            inverse = inv
            if inverse_bias is None:
                inverse_bias = -inv @ b
        return cls("conv1x1", forward, b, inverse, inverse_bias)

    @property
    def channels(self) -> Optional[int]:
        return None if self.kind == "identity" else self.forward.shape[0]

    def _apply(self, m, b, x):
        x = check_tensor(np.asarray(x))
        if self.kind == "identity":
            return x.astype(np.float32, copy=False)
        if x.shape[0] != m.shape[0]:
            raise ShapeError(f"transform has {m.shape[0]} channels, tensor has {x.shape[0]}")
        y = np.einsum("ij,jhw->ihw", m.astype(np.float64), x.astype(np.float64))
        y += b.astype(np.float64)[:, None, None]
        return y.astype(np.float32)

    def apply_forward(self, x: np.ndarray) -> np.ndarray:
        return self._apply(self.forward, self.forward_bias, x)

    def apply_inverse(self, y: np.ndarray) -> np.ndarray:
        return self._apply(self.inverse, self.inverse_bias, y)

    def save(self, matrix_path, bias_path=None, inverse_path=None, inverse_bias_path=None):
        """Store parameters as ATNS tensors (matrix ``C x C x 1``, bias ``C x 1 x 1``)."""
        if self.kind == "identity":
            raise ValueError("identity transform has no parameters to save")
        c = self.channels
        write_array(self.forward.reshape(c, c, 1), matrix_path)
        for arr, path in ((self.forward_bias, bias_path), (self.inverse_bias, inverse_bias_path)):
            if path is not None:
                write_array(arr.reshape(c, 1, 1), path)
        if inverse_path is not None:
            write_array(self.inverse.reshape(c, c, 1), inverse_path)

    @classmethod
    def load(cls, matrix_path, bias_path=None, inverse_path=None,
             inverse_bias_path=None) -> "ChannelTransform":
        def vec(path):
            return None if path is None else read_array(path).reshape(-1)

        def mat(path):
            if path is None:
                return None
            a = read_array(path)
            if a.ndim != 3 or a.shape[2] != 1 or a.shape[0] != a.shape[1]:
                raise ShapeError(f"transform matrix file must be C x C x 1, got {a.shape}")
            return a[:, :, 0]

        return cls.from_matrix(mat(matrix_path), vec(bias_path), mat(inverse_path),
                               vec(inverse_bias_path))


def apply_forward(t: ChannelTransform, x: np.ndarray) -> np.ndarray:
    return t.apply_forward(x)


def apply_inverse(t: ChannelTransform, y: np.ndarray) -> np.ndarray:
    return t.apply_inverse(y)


def _orient(rows: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each row positive
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), idx])
    signs[signs == 0] = 1
    return rows * signs[:, None]


def fit_pca_transform(samples: Sequence[np.ndarray], rtol: float = 1e-10) -> ChannelTransform:
    """Fit a decorrelating orthonormal channel transform from sample activations.

    Rows of the forward matrix are covariance eigenvectors sorted by
    decreasing variance; the forward bias removes the channel mean and the
    inverse is the transpose plus the mean. Directions whose variance is
    below ``rtol`` times the largest are not estimable; they are replaced by
    identity rows Gram-Schmidt-orthogonalised against the retained basis.
    """
    if len(samples) < 2:
        raise DomainError("need at least two calibration tensors")
    arrs = [check_tensor(np.asarray(s)) for s in samples]
    c = arrs[0].shape[0]
    if any(a.shape[0] != c for a in arrs):
        raise ShapeError("calibration tensors disagree on channel count")
    pixels = np.concatenate([a.reshape(c, -1).astype(np.float64) for a in arrs], axis=1)
    if pixels.shape[1] <= c:
        raise DomainError(f"need more than {c} pixels to fit a {c}-channel transform")
    mean = pixels.mean(axis=1)
    centered = pixels - mean[:, None]
    cov = centered @ centered.T / (pixels.shape[1] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals, rows = evals[order], evecs[:, order].T
    keep = evals > rtol * max(evals[0], 0.0) if evals[0] > 0 else np.zeros(c, bool)
    basis = list(_orient(rows[keep]))
    for i in range(c):
        if len(basis) == c:
            break
        r = np.eye(c)[i]
        for v in basis:
            r = r - (r @ v) * v
        n = np.linalg.norm(r)
        if n > 1e-6:
            basis.append(r / n)
    m = np.array(basis)
    return ChannelTransform("conv1x1", m, -m @ mean, m.T, mean)
