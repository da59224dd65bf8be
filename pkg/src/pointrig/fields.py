"""Analytic density fields used as the synthetic stand-in for a trained model.

A field is a callable mapping (N, 3) world points to (N,) densities.
"""

from __future__ import annotations

import numpy as np


def segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-30:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(points - closest, axis=-1)


def capsule(a, b, radius: float, density: float = 1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    def field(x: np.ndarray) -> np.ndarray:
        return np.where(segment_distances(x, a, b) <= radius, density, 0.0)

    return field


def box(center, half_extent, density: float = 1.0):
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(half_extent, dtype=np.float64)

    def field(x: np.ndarray) -> np.ndarray:
        inside = np.all(np.abs(x - center) <= half, axis=-1)
        return np.where(inside, density, 0.0)

    return field


def sphere(center, radius: float, density: float = 1.0):
    center = np.asarray(center, dtype=np.float64)

    def field(x: np.ndarray) -> np.ndarray:
        return np.where(np.linalg.norm(x - center, axis=-1) <= radius, density, 0.0)

    return field


def union(*fields):
    def field(x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[:-1])
        for f in fields:
            out = np.maximum(out, f(x))
        return out

    return field


def empty():
    return lambda x: np.zeros(x.shape[:-1])


def capsule_volume(length: float, radius: float) -> float:
    return np.pi * radius**2 * length + 4.0 / 3.0 * np.pi * radius**3
