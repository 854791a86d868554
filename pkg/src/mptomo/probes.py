"""Offline probe design: Fourier boundary basis, linear average-DtN matrices,
and eigenvector selection for (test cell, fictitious region) pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import counters
from .forward import Configuration, SolverSettings, _lu
from .geometry import Mesh, Region, element_mask
from .materials import LinearMaterial, layered_field

log = logging.getLogger(__name__)


class BoundaryBasis:
    """Harmonics ``cos(n t), sin(n t)``, ``n = 1..order``, normalised in L2 of the circle.

    Columns of ``table`` are ordered cos 1, sin 1, cos 2, sin 2, ...
    """

    def __init__(self, mesh: Mesh, order: int):
        if order < 1:
            raise ValueError("basis order must be >= 1")
        self.mesh = mesh
        self.order = order
        theta = mesh.boundary_angle
        cols = []
        for n in range(1, order + 1):
            cols.append(np.cos(n * theta))
            cols.append(np.sin(n * theta))
        self.norm = np.sqrt(np.pi * mesh.radius)
        self.table = np.column_stack(cols) / self.norm
        self.table.flags.writeable = False

    def __len__(self) -> int:
        return 2 * self.order

    def harmonic(self, m: int) -> tuple[int, str]:
        return m // 2 + 1, ("cos", "sin")[m % 2]

    def gram(self) -> np.ndarray:
        # lumped boundary mass: the trapezoid rule is exact for these harmonics
        w = self.mesh.boundary_mass().sum(axis=0)
        return self.table.T @ (w[:, None] * self.table)

    def potential(self, coefficients, amplitude: float | None = None) -> "BoundaryPotential":
        return BoundaryPotential(np.asarray(coefficients, dtype=float), amplitude, self)


@dataclass(frozen=True, eq=False)
class BoundaryPotential:
    """A boundary potential ``sum_m c_m phi_m`` in a :class:`BoundaryBasis`.

    When ``amplitude`` is given the nodal values are rescaled so that their
    peak magnitude equals it; otherwise the raw expansion is used.
    """

    coefficients: np.ndarray
    amplitude: float | None
    basis: BoundaryBasis

    @property
    def raw(self) -> np.ndarray:
        return self.basis.table @ self.coefficients

    @property
    def scale(self) -> float:
        if self.amplitude is None:
            return 1.0
        peak = float(np.max(np.abs(self.raw)))
        return self.amplitude / peak if peak > 0 else 0.0

    @property
    def values(self) -> np.ndarray:
        return self.scale * self.raw


@dataclass(frozen=True, eq=False)
class DtnMatrix:
    """``M[m, n] = <avg Lambda(phi_m), phi_n>`` for a linear configuration."""

    matrix: np.ndarray
    basis: BoundaryBasis

    def form(self, potential: BoundaryPotential) -> float:
        c = potential.scale * potential.coefficients
        return float(c @ self.matrix @ c)


def assemble_dtn_matrix(config: Configuration, basis: BoundaryBasis) -> DtnMatrix:
    """Average-DtN matrix of a linear configuration (one solve per basis function)."""
    if not config.is_linear:
        raise ValueError("assemble_dtn_matrix requires an all-linear configuration")
    space = config.space
    mu, _ = config.materials.chord_and_tangent(np.zeros(config.mesh.n_triangles))
    ke = space.element_matrices(mu)
    kib = space.coupling_matrix(ke)
    lu = _lu(space.interior_matrix(ke))
    psi = np.empty((config.mesh.n_vertices, len(basis)))
    psi[space.boundary] = basis.table
    psi[space.interior] = lu.solve(-np.asarray(kib @ basis.table))
    counters.bump("linear_solves", len(basis))
    grads = np.einsum("tkd,tkm->tdm", space.grads, psi[config.mesh.triangles])
    m = 0.5 * np.einsum("t,tdm,tdn->mn", space.area * mu, grads, grads)
    return DtnMatrix(0.5 * (m + m.T), basis)


# ---------------------------------------------------------------------------
# Symmetric eigensolver


def _round_robin(n: int) -> list[list[tuple[int, int]]]:
    """Tournament schedule: ``n - 1`` rounds of disjoint pairs covering all pairs once."""
    players = list(range(n)) + ([None] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a is not None and b is not None:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol: float = 1e-13, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of one round act on disjoint index pairs and can be
    applied together.  Iteration stops once the off-diagonal Frobenius norm is
    at most ``tol`` times the Frobenius norm of ``a``.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    counters.bump("eigendecompositions")
    peak = np.max(np.abs(a), initial=0.0)
    if n == 1 or peak == 0.0:
        return np.diag(a).copy(), v
    # power-of-two rescaling keeps the norms clear of under/overflow exactly
    exp = int(np.frexp(peak)[1])
    a = np.ldexp(a, -exp)
    norm = np.linalg.norm(a)
    target = tol * norm
    schedule = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= target:
            break
        for pairs in schedule:
            p = np.array([pq[0] for pq in pairs])
            q = np.array([pq[1] for pq in pairs])
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            # tan of the rotation angle, written to stay finite for huge |tau|
            big = np.abs(tau) > 1e150
            tau_s = np.where(big, 1.0, tau)
            t = np.where(tau_s >= 0, 1.0, -1.0) / (np.abs(tau_s) + np.sqrt(1.0 + tau_s * tau_s))
            t = np.where(big, 0.5 / np.where(big, tau, 1.0), t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rot = np.eye(n)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            a[p, q] = 0.0
            a[q, p] = 0.0
            v = v @ rot
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.ldexp(np.diag(a), exp)
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def min_eigenpair(delta) -> tuple[float, np.ndarray]:
    """Algebraically smallest eigenvalue and a unit eigenvector.

    The eigenvector sign is fixed so that its largest-magnitude entry is
    positive.
    """
    d = np.asarray(delta, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {d.shape}")
    scale = np.linalg.norm(d)
    if np.linalg.norm(d - d.T) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    w, v = jacobi_eigh(0.5 * (d + d.T))
    vec = v[:, 0]
    vec = vec / np.linalg.norm(vec)
    j = int(np.argmax(np.abs(vec)))
    if vec[j] < 0:
        vec = -vec
    return float(w[0]), vec


# ---------------------------------------------------------------------------
# Probe selection


@dataclass(frozen=True)
class ProbeCandidate:
    potential: BoundaryPotential | None
    lambda_min: float
    delta_norm: float


class MatrixCache:
    """Memoises linear DtN matrices by (permeability, triangle mask)."""

    def __init__(self, mesh: Mesh, basis: BoundaryBasis, mu_bg: float, settings: SolverSettings | None = None):
        self.mesh = mesh
        self.basis = basis
        self.mu_bg = mu_bg
        self.settings = settings or SolverSettings()
        self._store: dict[tuple, np.ndarray] = {}

    def get(self, mask: np.ndarray, mu: float) -> np.ndarray:
        key = (float(mu), mask.tobytes())
        out = self._store.get(key)
        if out is None:
            field = layered_field(self.mesh, [(mask, LinearMaterial(mu))], LinearMaterial(self.mu_bg))
            out = assemble_dtn_matrix(Configuration(self.mesh, field, self.settings), self.basis).matrix
            self._store[key] = out
        return out

    def clear(self) -> None:
        self._store.clear()


def select_probe(
    test_region: Region | np.ndarray,
    fictitious: Region | np.ndarray,
    basis: BoundaryBasis,
    mesh: Mesh,
    mu_u: float,
    mu_l: float,
    mu_bg: float,
    amplitude: float = 1e4,
    neg_tol: float = 1e-12,
    cache: MatrixCache | None = None,
) -> ProbeCandidate:
    """Eigenvector of ``M_F(mu_u) - M_T(mu_l)`` for its smallest eigenvalue.

    ``potential`` is ``None`` unless that eigenvalue is below
    ``-neg_tol * ||M_F - M_T||_F``; the tolerance only screens out rounding
    noise around zero.
    """
    counters.bump("probe_selections")
    t_mask = test_region if isinstance(test_region, np.ndarray) else element_mask(mesh, test_region)
    f_mask = fictitious if isinstance(fictitious, np.ndarray) else element_mask(mesh, fictitious)
    if np.any(t_mask & f_mask):
        raise ValueError("fictitious region overlaps the test region")
    if cache is None:
        cache = MatrixCache(mesh, basis, mu_bg)
    delta = cache.get(f_mask, mu_u) - cache.get(t_mask, mu_l)
    lam, vec = min_eigenpair(delta)
    dnorm = float(np.linalg.norm(delta))
    if not lam < -neg_tol * dnorm:
        return ProbeCandidate(None, lam, dnorm)
    return ProbeCandidate(basis.potential(vec, amplitude), lam, dnorm)
