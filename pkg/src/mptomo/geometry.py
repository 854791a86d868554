"""Disk meshes and region primitives for the inspection domain.

The mesh is a structured triangulation of a disk built from concentric rings
(ring ``j`` carries ``6 j`` vertices), which keeps it deterministic and free of
any external mesher.  Regions are small immutable shape descriptors with a
vectorised membership test; they are mapped onto the mesh by testing triangle
centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation of a disk of radius ``radius`` centred at the origin.

    Attributes
    ----------
    vertices : (n, 2) float array, meters
    triangles : (m, 3) int array, counterclockwise vertex indices
    boundary : (b,) int array, boundary vertex indices in loop order
        (counterclockwise, starting at the mesh rotation angle)
    radius : float
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    radius: float
    areas: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        object.__setattr__(self, "areas", 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))
        object.__setattr__(self, "centroids", p.mean(axis=1))
        for arr in (self.vertices, self.triangles, self.boundary, self.areas, self.centroids):
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_edges(self) -> np.ndarray:
        """Ordered loop of boundary vertex pairs, shape (b, 2)."""
        return np.column_stack([self.boundary, np.roll(self.boundary, -1)])

    @property
    def boundary_angle(self) -> np.ndarray:
        """Polar angle of each boundary vertex in loop order, in [0, 2 pi)."""
        xy = self.vertices[self.boundary]
        return np.mod(np.arctan2(xy[:, 1], xy[:, 0]), 2.0 * np.pi)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2).ravel()

    def boundary_mass(self) -> np.ndarray:
        """P1 mass matrix of the boundary loop (dense, b x b)."""
        b = len(self.boundary)
        xy = self.vertices[self.boundary]
        length = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
        m = np.zeros((b, b))
        idx = np.arange(b)
        nxt = (idx + 1) % b
        np.add.at(m, (idx, idx), length / 3.0)
        np.add.at(m, (nxt, nxt), length / 3.0)
        np.add.at(m, (idx, nxt), length / 6.0)
        np.add.at(m, (nxt, idx), length / 6.0)
        return m

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        if np.any(self.areas <= 0):
            raise ValueError("mesh has non-positive triangle areas")
        r = np.linalg.norm(self.vertices[self.boundary], axis=1)
        if np.max(np.abs(r - self.radius)) > 1e-9:
            raise ValueError("boundary vertex off the circle")
        edges = np.sort(
            np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]),
            axis=1,
        )
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("edge shared by more than two triangles")
        bnd = {tuple(e) for e in np.sort(self.boundary_edges, axis=1)}
        single = {tuple(e) for e in uniq[counts == 1]}
        if single != bnd:
            raise ValueError("boundary loop does not match the free edges of the mesh")
        ang = np.unwrap(self.boundary_angle)
        if not np.all(np.diff(ang) > 0):
            raise ValueError("boundary loop is not ordered by increasing angle")

    def to_json(self) -> dict:
        return {
            "radius": self.radius,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary": self.boundary.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Mesh":
        vertices = np.asarray(data["vertices"], dtype=float)
        boundary = np.asarray(data["boundary"], dtype=np.int64)
        radius = data.get("radius")
        if radius is None:
            radius = float(np.mean(np.linalg.norm(vertices[boundary], axis=1)))
        return cls(vertices, np.asarray(data["triangles"], dtype=np.int64), boundary, float(radius))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Mesh":
        return cls.from_json(json.loads(Path(path).read_text()))


def _ring_count(radius: float, target_h: float) -> int:
    return max(1, math.ceil(radius / target_h - 1e-9))


MESH_ROTATION = 0.013


def build_disk_mesh(radius: float, target_h: float, rotation: float = MESH_ROTATION) -> Mesh:
    """Structured triangulation of the disk of the given radius.

    ``ceil(radius / target_h)`` equally spaced rings are used; ring ``j`` holds
    ``6 j`` equally spaced vertices, offset by half a spacing, so the arc
    spacing stays close to the radial spacing everywhere.  Adjacent rings are
    zipped together by always closing the shorter of the two candidate
    diagonals, which keeps the longest edge at about 1.474 ring spacings.

    The whole pattern is turned by ``rotation`` radians so that no triangle
    centroid falls on the axis-aligned lines of a test-cell lattice.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not 0 < target_h < radius:
        raise ValueError(f"target_h must lie in (0, radius), got {target_h}")

    n = _ring_count(radius, target_h)
    counts = [1] + [6 * j for j in range(1, n + 1)]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    xy = [np.zeros((1, 2))]
    for j in range(1, n + 1):
        theta = rotation + 2.0 * np.pi * (np.arange(6 * j) + 0.5) / (6 * j)
        r = radius if j == n else radius * j / n
        xy.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    vertices = np.vstack(xy)

    tris: list[tuple[int, int, int]] = [(0, 1 + i, 1 + (i + 1) % 6) for i in range(6)]
    for j in range(2, n + 1):
        mi, mo = counts[j - 1], counts[j]
        si, so = starts[j - 1], starts[j]
        a = b = 0
        while a < mi or b < mo:
            if b >= mo:
                inner = True
            elif a >= mi:
                inner = False
            else:
                d_in = np.hypot(*(vertices[si + (a + 1) % mi] - vertices[so + b % mo]))
                d_out = np.hypot(*(vertices[si + a % mi] - vertices[so + (b + 1) % mo]))
                inner = d_in < d_out
            if inner:
                tris.append((si + a % mi, so + b % mo, si + (a + 1) % mi))
                a += 1
            else:
                tris.append((si + a % mi, so + b % mo, so + (b + 1) % mo))
                b += 1
    boundary = np.arange(starts[n], starts[n] + counts[n])
    return Mesh(vertices, np.asarray(tris, dtype=np.int64), boundary, float(radius))


# ---------------------------------------------------------------------------
# Regions


def _as_points(points) -> np.ndarray:
    return np.asarray(points, dtype=float)


def _local(points: np.ndarray, center, rotation: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    d = points - np.asarray(center, dtype=float)
    c, s = math.cos(rotation), math.sin(rotation)
    u = c * d[..., 0] + s * d[..., 1]
    v = -s * d[..., 0] + c * d[..., 1]
    return u, v


class Region:
    """Base class for shape descriptors.  Subclasses implement ``contains``."""

    kind: str = ""

    def contains(self, points) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_json(self) -> dict:
        out = {"type": self.kind}
        for k, v in self.__dict__.items():
            if isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[k] = v
        return out


@dataclass(frozen=True)
class Disk(Region):
    center: tuple[float, float]
    radius: float
    kind = "disk"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        return np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class Rectangle(Region):
    center: tuple[float, float]
    width: float
    height: float
    rotation: float = 0.0
    kind = "rectangle"

    def contains(self, points) -> np.ndarray:
        u, v = _local(_as_points(points), self.center, self.rotation)
        return (np.abs(u) <= 0.5 * self.width) & (np.abs(v) <= 0.5 * self.height)


@dataclass(frozen=True)
class Ellipse(Region):
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float = 0.0
    kind = "ellipse"

    def contains(self, points) -> np.ndarray:
        u, v = _local(_as_points(points), self.center, self.rotation)
        return (u / self.semi_axes[0]) ** 2 + (v / self.semi_axes[1]) ** 2 <= 1.0


@dataclass(frozen=True)
class CShape(Region):
    """Annular sector with its gap of width ``opening_angle`` facing +x."""

    center: tuple[float, float]
    inner_radius: float
    outer_radius: float
    opening_angle: float
    kind = "c_shape"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        dx = p[..., 0] - self.center[0]
        dy = p[..., 1] - self.center[1]
        r = np.hypot(dx, dy)
        ang = np.abs(np.arctan2(dy, dx))
        return (r >= self.inner_radius) & (r <= self.outer_radius) & (ang >= 0.5 * self.opening_angle)


@dataclass(frozen=True)
class LShape(Region):
    """Two perpendicular bars of width ``thickness`` meeting at ``corner``.

    ``arm_lengths`` are measured along +x and +y from the corner.
    """

    corner: tuple[float, float]
    arm_lengths: tuple[float, float]
    thickness: float
    kind = "l_shape"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        u = p[..., 0] - self.corner[0]
        v = p[..., 1] - self.corner[1]
        t = self.thickness
        horiz = (u >= 0) & (u <= self.arm_lengths[0]) & (v >= 0) & (v <= t)
        vert = (u >= 0) & (u <= t) & (v >= 0) & (v <= self.arm_lengths[1])
        return horiz | vert


@dataclass(frozen=True)
class Drop(Region):
    """Teardrop bounded by the cubic ``v^2 = (1 + u)^2 (1 - u) / 4``.

    Coordinates are scaled by ``size``; the round end faces +x and the tip
    sits at ``center - (size, 0)``.
    """

    center: tuple[float, float]
    size: float
    rotation: float = 0.0
    kind = "drop"

    def contains(self, points) -> np.ndarray:
        u, v = _local(_as_points(points), self.center, self.rotation)
        u = u / self.size
        v = v / self.size
        inside_u = (u >= -1.0) & (u <= 1.0)
        half = 0.5 * (1.0 + u) * np.sqrt(np.clip(1.0 - u, 0.0, None))
        return inside_u & (np.abs(v) <= half)


@dataclass(frozen=True)
class Bean(Region):
    """Star-shaped lobe ``r(t) = size (1 + b cos t + c sin^2 t)``.

    With ``c > (1 - 2 b) / 2`` the curve is indented on the -x side.
    """

    center: tuple[float, float]
    size: float
    b: float = 0.3
    c: float = 0.5
    rotation: float = 0.0
    kind = "bean"

    def contains(self, points) -> np.ndarray:
        u, v = _local(_as_points(points), self.center, self.rotation)
        t = np.arctan2(v, u)
        r = self.size * (1.0 + self.b * np.cos(t) + self.c * np.sin(t) ** 2)
        return np.hypot(u, v) <= r


@dataclass(frozen=True)
class HalfPlane(Region):
    """Points ``x`` with ``(x - point) . normal >= 0``."""

    point: tuple[float, float]
    normal: tuple[float, float]
    kind = "half_plane"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        return (p[..., 0] - self.point[0]) * self.normal[0] + (p[..., 1] - self.point[1]) * self.normal[1] >= 0


@dataclass(frozen=True)
class DiskComplement(Region):
    center: tuple[float, float]
    radius: float
    kind = "complement_disk"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        return np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1]) >= self.radius


@dataclass(frozen=True)
class Union(Region):
    regions: tuple[Region, ...] = ()
    kind = "union"

    def contains(self, points) -> np.ndarray:
        p = _as_points(points)
        out = np.zeros(p.shape[:-1], dtype=bool)
        for r in self.regions:
            out |= r.contains(p)
        return out

    def to_json(self) -> dict:
        return {"type": "union", "regions": [r.to_json() for r in self.regions]}


EMPTY = Union(())

_KINDS: dict[str, type[Region]] = {
    cls.kind: cls for cls in (Disk, Rectangle, Ellipse, CShape, LShape, Drop, Bean, HalfPlane, DiskComplement)
}
_ALIASES = {"annular_sector": "c_shape", "circle": "disk", "complement_of_disk": "complement_disk"}


def region_from_json(data: dict | None) -> Region:
    """Build a region from its JSON descriptor; ``None`` gives the empty region."""
    if data is None:
        return EMPTY
    data = dict(data)
    kind = data.pop("type")
    kind = _ALIASES.get(kind, kind)
    if kind == "union":
        return Union(tuple(region_from_json(r) for r in data.get("regions", [])))
    if kind == "empty":
        return EMPTY
    if kind not in _KINDS:
        raise ValueError(f"unknown region type {kind!r}")
    kwargs = {k.replace("-", "_"): (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
    return _KINDS[kind](**kwargs)


def region_contains(region: Region, point: Sequence[float]) -> bool:
    return bool(region.contains(np.asarray(point, dtype=float)))


def element_mask(mesh: Mesh, region: Region) -> np.ndarray:
    """Per-triangle membership, decided at the triangle centroid."""
    return np.asarray(region.contains(mesh.centroids), dtype=bool)
