"""P1 finite elements for the nonlinear magnetostatic scalar-potential problem.

Solves ``div(mu(|grad psi|) grad psi) = 0`` in the disk with ``psi = f`` on the
boundary, and evaluates the Dirichlet-to-Neumann pairing through the weighted
Dirichlet energy

    <Lambda(f), g> = int mu(|grad psi_f|) grad psi_f . grad w_g dx

where ``w_g`` is any discrete extension of ``g``.  The average DtN form
``int_0^1 <Lambda(a f), f> da`` is evaluated with Gauss-Legendre quadrature and
continuation in the amplitude ``a``.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import counters
from .geometry import Mesh
from .materials import MaterialField

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for forward-solver failures."""


class NonConvergenceError(SolverError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(f"{message}; residual trace: {', '.join(f'{r:.3e}' for r in trace)}")
        self.trace = trace


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    rel_tol: float = 1e-10
    max_iter: int = 50
    alpha_nodes: int = 8
    max_halvings: int = 20
    picard_steps: int = 5

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1 or self.alpha_nodes < 1:
            raise ValueError("max_iter and alpha_nodes must be >= 1")


class FemSpace:
    """Precomputed P1 element data and sparsity maps for one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        tri = mesh.triangles
        p = mesh.vertices[tri]
        area = mesh.areas
        grads = np.empty((len(tri), 3, 2))
        for k in range(3):
            e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            grads[:, k, 0] = -e[:, 1]
            grads[:, k, 1] = e[:, 0]
        grads /= (2.0 * area)[:, None, None]
        self.grads = grads
        self.area = area
        self.boundary = mesh.boundary
        self.interior = mesh.interior
        self.boundary_weights = mesh.boundary_mass().sum(axis=0)

        n = mesh.n_vertices
        local = -np.ones(n, dtype=np.int64)
        local[self.interior] = np.arange(len(self.interior))
        bloc = -np.ones(n, dtype=np.int64)
        bloc[self.boundary] = np.arange(len(self.boundary))
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        ri, ci = local[rows], local[cols]

        ni = len(self.interior)
        sel = (ri >= 0) & (ci >= 0)
        self._ii_sel = np.flatnonzero(sel)
        keys = ri[sel] * ni + ci[sel]
        uniq, self._ii_inv = np.unique(keys, return_inverse=True)
        self._ii_indices = (uniq % ni).astype(np.int32)
        self._ii_indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // ni, minlength=ni))]).astype(np.int32)
        self._ii_nnz = len(uniq)
        self._ni = ni

        nb = len(self.boundary)
        selb = (ri >= 0) & (bloc[cols] >= 0)
        self._ib_sel = np.flatnonzero(selb)
        self._ib_rows = ri[selb]
        self._ib_cols = bloc[cols][selb]
        self._nb = nb

    # -- element kernels ---------------------------------------------------
    def gradients(self, psi: np.ndarray) -> np.ndarray:
        """Per-triangle gradient of a nodal field, shape (m, 2)."""
        return np.einsum("tkd,tk->td", self.grads, psi[self.mesh.triangles])

    def nodal_flux(self, q: np.ndarray) -> np.ndarray:
        """Assemble ``int q . grad phi_i`` for a per-triangle vector field ``q``."""
        contrib = self.area[:, None] * np.einsum("tkd,td->tk", self.grads, q)
        return np.bincount(self.mesh.triangles.ravel(), weights=contrib.ravel(), minlength=self.mesh.n_vertices)

    def element_matrices(self, coef: np.ndarray) -> np.ndarray:
        """Local stiffness ``area * G D G^T`` for scalar (m,) or tensor (m,2,2) coefficients."""
        if coef.ndim == 1:
            return (coef * self.area)[:, None, None] * np.einsum("tid,tjd->tij", self.grads, self.grads)
        return self.area[:, None, None] * np.einsum("tid,tde,tje->tij", self.grads, coef, self.grads)

    def interior_matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        vals = ke.reshape(-1)[self._ii_sel]
        data = np.bincount(self._ii_inv, weights=vals, minlength=self._ii_nnz)
        return sp.csr_matrix((data, self._ii_indices, self._ii_indptr), shape=(self._ni, self._ni))

    def coupling_matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        vals = ke.reshape(-1)[self._ib_sel]
        return sp.csr_matrix((vals, (self._ib_rows, self._ib_cols)), shape=(self._ni, self._nb))

    def full_matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        tri = self.mesh.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        n = self.mesh.n_vertices
        return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))


_SPACES: "weakref.WeakKeyDictionary[Mesh, FemSpace]" = weakref.WeakKeyDictionary()


def fem_space(mesh: Mesh) -> FemSpace:
    space = _SPACES.get(mesh)
    if space is None:
        space = _SPACES[mesh] = FemSpace(mesh)
    return space


@dataclass(frozen=True, eq=False)
class Configuration:
    mesh: Mesh
    materials: MaterialField
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self) -> None:
        if len(self.materials) != self.mesh.n_triangles:
            raise ValueError("material assignment length must equal the triangle count")

    @property
    def is_linear(self) -> bool:
        return self.materials.is_linear

    @property
    def space(self) -> FemSpace:
        return fem_space(self.mesh)


@dataclass(frozen=True, eq=False)
class PotentialSolution:
    psi: np.ndarray
    boundary_values: np.ndarray
    residual: float
    load: float
    iterations: int
    trace: tuple[float, ...] = ()

    def field_magnitude(self, config: Configuration) -> np.ndarray:
        """Per-triangle ``H = |grad psi|``."""
        return np.linalg.norm(config.space.gradients(self.psi), axis=1)


def boundary_values(f, mesh: Mesh) -> np.ndarray:
    """Nodal boundary values (loop order) of a boundary potential or raw array."""
    vals = getattr(f, "values", f)
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (len(mesh.boundary),):
        raise ValueError(f"boundary data must have {len(mesh.boundary)} entries, got shape {vals.shape}")
    return vals


def _check_zero_mean(f: np.ndarray, mesh: Mesh) -> None:
    w = fem_space(mesh).boundary_weights
    mean = float(w @ f)
    scale = float(w @ np.abs(f))
    if abs(mean) > 1e-8 * max(scale, 1e-300):
        raise ValueError(f"boundary data must have zero mean on the boundary (integral {mean:.3e})")


def _lu(matrix: sp.csr_matrix):
    try:
        return spla.splu(matrix.tocsc())
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystemError(f"stiffness matrix is singular ({exc}); check material bounds") from None


class _Problem:
    """Nonlinear residual and tangent for one configuration and boundary datum."""

    def __init__(self, config: Configuration, f: np.ndarray):
        self.config = config
        self.space = config.space
        self.f = f

    def full(self, psi_i: np.ndarray) -> np.ndarray:
        psi = np.empty(self.config.mesh.n_vertices)
        psi[self.space.interior] = psi_i
        psi[self.space.boundary] = self.f
        return psi

    def flux(self, psi: np.ndarray):
        g = self.space.gradients(psi)
        H = np.linalg.norm(g, axis=1)
        chord, tangent = self.config.materials.chord_and_tangent(H)
        return g, H, chord, tangent

    def residual(self, psi_i: np.ndarray) -> np.ndarray:
        psi = self.full(psi_i)
        g, _, chord, _ = self.flux(psi)
        return self.space.nodal_flux(chord[:, None] * g)[self.space.interior]

    def tangent_matrix(self, psi_i: np.ndarray) -> sp.csr_matrix:
        g, H, chord, tangent = self.flux(self.full(psi_i))
        safe = np.where(H > 0, H, 1.0)
        e = g / safe[:, None]
        e[H == 0] = 0.0
        outer = np.einsum("ti,tj->tij", e, e)
        d = chord[:, None, None] * (np.eye(2) - outer) + tangent[:, None, None] * outer
        return self.space.interior_matrix(self.space.element_matrices(d))

    def picard(self, psi_i: np.ndarray) -> np.ndarray:
        _, _, chord, _ = self.flux(self.full(psi_i))
        ke = self.space.element_matrices(chord)
        kii = self.space.interior_matrix(ke)
        kib = self.space.coupling_matrix(ke)
        counters.bump("linear_solves")
        return _lu(kii).solve(-(kib @ self.f))


def _solve_linear(config: Configuration, f: np.ndarray) -> PotentialSolution:
    space = config.space
    mu, _ = config.materials.chord_and_tangent(np.zeros(config.mesh.n_triangles))
    ke = space.element_matrices(mu)
    kii = space.interior_matrix(ke)
    kib = space.coupling_matrix(ke)
    rhs = -(kib @ f)
    load = float(np.linalg.norm(rhs))
    counters.bump("linear_solves")
    psi_i = _lu(kii).solve(rhs) if len(rhs) else rhs
    psi = np.empty(config.mesh.n_vertices)
    psi[space.interior] = psi_i
    psi[space.boundary] = f
    res = float(np.linalg.norm(kii @ psi_i - rhs))
    return PotentialSolution(psi, f.copy(), res, load, 1, (res,))


def solve(config: Configuration, f, initial_guess: np.ndarray | None = None) -> PotentialSolution:
    """Solve the (possibly nonlinear) Dirichlet problem for boundary data ``f``.

    Linear configurations take a single sparse solve.  Otherwise a damped
    Newton iteration is used: each step is halved until the residual
    decreases, and a short run of Picard (fixed-point) updates restarts the
    iteration when no damped step helps.

    ``initial_guess`` may be a full nodal vector or interior values only; its
    boundary entries are ignored.
    """
    mesh = config.mesh
    f = boundary_values(f, mesh)
    _check_zero_mean(f, mesh)
    counters.bump("forward_solves")
    if config.is_linear:
        return _solve_linear(config, f)

    st = config.settings
    prob = _Problem(config, f)
    space = config.space
    ni = len(space.interior)
    if not np.any(f):
        return PotentialSolution(np.zeros(mesh.n_vertices), f.copy(), 0.0, 0.0, 0, (0.0,))

    load = float(np.linalg.norm(prob.residual(np.zeros(ni))))
    tol = st.rel_tol * load
    if initial_guess is None:
        psi_i = np.zeros(ni)
    else:
        initial_guess = np.asarray(initial_guess, dtype=float)
        psi_i = initial_guess[space.interior].copy() if len(initial_guess) == mesh.n_vertices else initial_guess.copy()

    r = prob.residual(psi_i)
    rn = float(np.linalg.norm(r))
    trace = [rn]
    picard_used = False
    it = 0
    while rn > tol:
        if it >= st.max_iter:
            raise NonConvergenceError(f"Newton did not converge in {st.max_iter} iterations", trace)
        it += 1
        counters.bump("newton_steps")
        counters.bump("linear_solves")
        step = _lu(prob.tangent_matrix(psi_i)).solve(-r)
        t = 1.0
        accepted = False
        for _ in range(st.max_halvings + 1):
            trial = psi_i + t * step
            r_trial = prob.residual(trial)
            rn_trial = float(np.linalg.norm(r_trial))
            if rn_trial < rn:
                accepted = True
                break
            t *= 0.5
        if accepted:
            psi_i, r, rn = trial, r_trial, rn_trial
            trace.append(rn)
            continue
        if picard_used:
            raise NonConvergenceError("Newton stalled after Picard restart", trace)
        log.debug("Newton stalled at residual %.3e; restarting with Picard steps", rn)
        picard_used = True
        for _ in range(st.picard_steps):
            psi_i = prob.picard(psi_i)
        r = prob.residual(psi_i)
        rn = float(np.linalg.norm(r))
        trace.append(rn)
    return PotentialSolution(prob.full(psi_i), f.copy(), rn, load, it, tuple(trace))


def _flux_pairing(config: Configuration, sol: PotentialSolution, w: np.ndarray) -> float:
    """``int mu(|grad psi|) grad psi . grad w`` over the domain."""
    space = config.space
    g = space.gradients(sol.psi)
    H = np.linalg.norm(g, axis=1)
    chord, _ = config.materials.chord_and_tangent(H)
    gw = space.gradients(w)
    return float(np.sum(space.area * chord * np.einsum("td,td->t", g, gw)))


def dtn_form(config: Configuration, f, g=None) -> float:
    """Pairing ``<Lambda(f), g>``; ``g`` defaults to ``f``.

    For linear configurations both potentials are solved and the symmetric
    energy product is returned.  For nonlinear ones ``g`` is extended by the
    solution itself when ``g`` is ``f`` and by zero interior values otherwise.
    """
    mesh = config.mesh
    fv = boundary_values(f, mesh)
    gv = fv if g is None else boundary_values(g, mesh)
    sol_f = solve(config, fv)
    if g is None or np.array_equal(gv, fv):
        return _flux_pairing(config, sol_f, sol_f.psi)
    if config.is_linear:
        sol_g = solve(config, gv)
        return _flux_pairing(config, sol_f, sol_g.psi)
    w = np.zeros(mesh.n_vertices)
    w[mesh.boundary] = gv
    return _flux_pairing(config, sol_f, w)


@lru_cache(maxsize=32)
def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes (increasing) and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class AverageFormResult:
    value: float
    integrand: tuple[float, ...]
    alphas: tuple[float, ...]
    max_field: float
    newton_steps: int


def avg_dtn_form(config: Configuration, f, nodes: int | None = None, details: bool = False):
    """Quadrature of ``int_0^1 <Lambda(a f), f> da``.

    Nodes are visited in increasing ``a``; each nonlinear solve is warm-started
    from the previous node's potential rescaled to the new amplitude, and the
    first one from the linear solve with every nonlinear law frozen at its
    upper permeability.
    """
    mesh = config.mesh
    fv = boundary_values(f, mesh)
    n = nodes or config.settings.alpha_nodes
    alphas, weights = gauss_legendre_01(n)
    counters.bump("linear_chains" if config.is_linear else "nonlinear_chains")

    guess = None
    if not config.is_linear:
        upper = Configuration(mesh, config.materials.linearized("upper"), config.settings)
        guess = solve(upper, alphas[0] * fv).psi
    vals = []
    max_field = 0.0
    steps = 0
    prev = alphas[0]
    for a in alphas:
        if guess is not None:
            guess = guess * (a / prev)
        sol = solve(config, a * fv, initial_guess=guess)
        vals.append(_flux_pairing(config, sol, sol.psi) / a)
        max_field = max(max_field, float(np.max(sol.field_magnitude(config), initial=0.0)))
        steps += sol.iterations
        guess = sol.psi
        prev = a
    value = float(np.dot(weights, vals))
    if details:
        return AverageFormResult(value, tuple(vals), tuple(alphas), max_field, steps)
    return value
