"""Magnetic permeability laws and their assignment to mesh triangles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .geometry import Mesh, Region, element_mask

MU0 = 4e-7 * np.pi


def _check_field(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if np.any(H < 0):
        raise ValueError("field magnitude must be non-negative")
    return H


@dataclass(frozen=True)
class LinearMaterial:
    mu: float

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"permeability must be positive, got {self.mu}")

    @property
    def is_linear(self) -> bool:
        return True

    @property
    def mu_max(self) -> float:
        return self.mu

    @property
    def mu_min(self) -> float:
        return self.mu

    def permeability(self, H):
        H = _check_field(H)
        return np.full_like(H, self.mu) if H.ndim else self.mu

    def chord_and_tangent(self, H):
        mu = self.permeability(H)
        return mu, mu


@dataclass(frozen=True)
class SaturableMaterial:
    """Rational saturation law ``mu(H) = mu_l + (mu_u - mu_l) / (1 + H / H0)``.

    ``mu`` decreases from ``mu_u`` at zero field towards ``mu_l``, while
    ``B = mu(H) H`` stays strictly increasing.
    """

    mu_l: float
    mu_u: float
    H0: float

    def __post_init__(self) -> None:
        if not (0 < self.mu_l <= self.mu_u):
            raise ValueError(f"need 0 < mu_l <= mu_u, got mu_l={self.mu_l}, mu_u={self.mu_u}")
        if not self.H0 > 0:
            raise ValueError(f"H0 must be positive, got {self.H0}")

    @property
    def is_linear(self) -> bool:
        return False

    @property
    def mu_max(self) -> float:
        return self.mu_u

    @property
    def mu_min(self) -> float:
        return self.mu_l

    def permeability(self, H):
        H = _check_field(H)
        out = self.mu_l + (self.mu_u - self.mu_l) / (1.0 + H / self.H0)
        return out if H.ndim else float(out)

    def chord_and_tangent(self, H):
        """Return ``(mu(H), dB/dH)``."""
        H = _check_field(H)
        q = 1.0 / (1.0 + H / self.H0)
        chord = self.mu_l + (self.mu_u - self.mu_l) * q
        tangent = self.mu_l + (self.mu_u - self.mu_l) * q * q
        if H.ndim:
            return chord, tangent
        return float(chord), float(tangent)


Material = Union[LinearMaterial, SaturableMaterial]


def permeability(material: Material, H):
    return material.permeability(H)


def chord_and_tangent(material: Material, H):
    return material.chord_and_tangent(H)


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Per-triangle material assignment stored as a palette plus an index array."""

    palette: tuple[Material, ...]
    index: np.ndarray

    def __post_init__(self) -> None:
        self.index.flags.writeable = False

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, t: int) -> Material:
        return self.palette[self.index[t]]

    @property
    def is_linear(self) -> bool:
        used = np.unique(self.index)
        return all(self.palette[i].is_linear for i in used)

    def groups(self):
        for p, mat in enumerate(self.palette):
            sel = np.flatnonzero(self.index == p)
            if len(sel):
                yield mat, sel

    def chord_and_tangent(self, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        chord = np.empty_like(H)
        tangent = np.empty_like(H)
        for mat, sel in self.groups():
            c, t = mat.chord_and_tangent(H[sel])
            chord[sel] = c
            tangent[sel] = t
        return chord, tangent

    def linearized(self, which: str = "upper") -> "MaterialField":
        """Replace every nonlinear law by a linear one at its upper or lower bound."""
        pal = []
        for m in self.palette:
            if m.is_linear:
                pal.append(m)
            else:
                pal.append(LinearMaterial(m.mu_max if which == "upper" else m.mu_min))
        return MaterialField(tuple(pal), self.index)

    def key(self) -> tuple:
        return (self.palette, self.index.tobytes())


def material_field(
    mesh: Mesh,
    anomaly_region: Region | np.ndarray,
    anomaly_material: Material,
    background_material: Material,
) -> MaterialField:
    """Assign ``anomaly_material`` inside the region and the background elsewhere.

    ``anomaly_region`` may also be a precomputed per-triangle boolean mask.
    """
    if isinstance(anomaly_region, np.ndarray):
        mask = anomaly_region.astype(bool)
        if mask.shape != (mesh.n_triangles,):
            raise ValueError("mask length must equal the triangle count")
    else:
        mask = element_mask(mesh, anomaly_region)
    return MaterialField((background_material, anomaly_material), mask.astype(np.int8))


def layered_field(mesh: Mesh, layers: Sequence[tuple[Region | np.ndarray, Material]], background: Material) -> MaterialField:
    """Assign materials from a list of (region, material); later layers win."""
    index = np.zeros(mesh.n_triangles, dtype=np.int8)
    palette: list[Material] = [background]
    for region, mat in layers:
        mask = region if isinstance(region, np.ndarray) else element_mask(mesh, region)
        palette.append(mat)
        index[mask] = len(palette) - 1
    return MaterialField(tuple(palette), index)
