"""Scenario files: one JSON document describing a complete tomography experiment."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .forward import SolverSettings
from .geometry import EMPTY, Region, region_from_json
from .materials import MU0, LinearMaterial, SaturableMaterial

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySettings:
    """Layout of the fictitious regions built around each test cell.

    Disk complements have radii ``disk_factors * side / sqrt(2)``; half-planes
    start ``offset * side`` from the cell centre along ``directions`` equally
    spaced normals.  ``fallback_offsets`` are tried, in order, only for cells
    that obtain no probe from the regular members.
    """

    disk_factors: tuple[float, ...] = (1.5, 2.5, 4.0)
    directions: int = 8
    halfplane_offsets: tuple[float, ...] = (1.0,)
    fallback_offsets: tuple[float, ...] = (2.0, 3.0, 4.0)
    neg_tol: float = 1e-12


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    radius: float = 0.3
    mesh_h: float = 0.02
    mu_r_background: float = 1.0
    mu_r_low: float = 10.0
    mu_r_high: float = 1000.0
    H0: float = 200.0
    anomaly: Region = EMPTY
    cell: float = 0.05
    margin: float = 0.03
    basis_order: int = 8
    amplitude: float = 1e4
    solver: SolverSettings = field(default_factory=SolverSettings)
    family: FamilySettings = field(default_factory=FamilySettings)
    eta: float = 1e-3
    seed: int = 0

    # -- materials ---------------------------------------------------------
    @property
    def background(self) -> LinearMaterial:
        return LinearMaterial(self.mu_r_background * MU0)

    @property
    def anomaly_material(self) -> SaturableMaterial:
        return SaturableMaterial(self.mu_r_low * MU0, self.mu_r_high * MU0, self.H0)

    @property
    def zero_contrast(self) -> bool:
        return self.mu_r_low == self.mu_r_background

    def with_updates(self, **changes) -> "Scenario":
        return replace(self, **changes)

    # -- validation --------------------------------------------------------
    def validate(self) -> "Scenario":
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ScenarioError(f"scenario {self.name!r}: {msg}")

        need(self.radius > 0, "radius must be positive")
        need(0 < self.mesh_h < self.radius, "mesh_h must lie in (0, radius)")
        need(self.mu_r_background > 0, "background mu_r must be positive")
        need(0 < self.mu_r_low <= self.mu_r_high, "need 0 < mu_r_low <= mu_r_high")
        need(self.H0 > 0, "H0 must be positive")
        need(
            self.mu_r_low >= self.mu_r_background,
            "the anomaly law must stay above the background permeability (mu_r_low >= background mu_r)",
        )
        if self.zero_contrast:
            log.warning("scenario %r has zero contrast (mu_r_low == background); no probe can be found", self.name)
        need(0 < self.cell < self.radius, "cell side must lie in (0, radius)")
        need(self.margin >= 0, "margin must be non-negative")
        need(self.basis_order >= 1, "basis order must be >= 1")
        need(self.amplitude > 0, "probe amplitude must be positive")
        need(self.solver.rel_tol > 0 and self.solver.max_iter >= 1, "solver tolerances must be positive")
        need(self.solver.alpha_nodes >= 1, "alpha_nodes must be >= 1")
        need(self.eta >= 0, "eta must be non-negative")
        from .recon import build_test_grid  # local import: recon depends on this module

        try:
            build_test_grid(self.radius, self.cell, self.margin)
        except ValueError as exc:
            raise ScenarioError(f"scenario {self.name!r}: {exc}") from None
        return self

    # -- serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        return {
            "name": self.name,
            "geometry": {"radius": self.radius, "mesh_h": self.mesh_h},
            "background": {"mu_r": self.mu_r_background},
            "anomaly_material": {"mu_r_low": self.mu_r_low, "mu_r_high": self.mu_r_high, "H0": self.H0},
            "anomaly": None if self.anomaly == EMPTY else {"shape": self.anomaly.to_json()},
            "grid": {"cell": self.cell, "margin": self.margin},
            "basis": {"order": self.basis_order},
            "probe": {"amplitude": self.amplitude},
            "family": {
                "disk_factors": list(self.family.disk_factors),
                "directions": self.family.directions,
                "halfplane_offsets": list(self.family.halfplane_offsets),
                "fallback_offsets": list(self.family.fallback_offsets),
                "neg_tol": self.family.neg_tol,
            },
            "solver": {
                "rel_tol": self.solver.rel_tol,
                "max_iter": self.solver.max_iter,
                "alpha_nodes": self.solver.alpha_nodes,
            },
            "noise": {"eta": self.eta, "seed": self.seed},
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        d = cls()
        geo = data.get("geometry", {})
        mat = data.get("anomaly_material", {})
        grid = data.get("grid", {})
        solver = data.get("solver", {})
        noise = data.get("noise", {})
        fam = data.get("family", {})
        anomaly = data.get("anomaly")
        try:
            region = EMPTY if anomaly is None else region_from_json(anomaly.get("shape"))
            return cls(
                name=data.get("name", d.name),
                radius=float(geo.get("radius", d.radius)),
                mesh_h=float(geo.get("mesh_h", d.mesh_h)),
                mu_r_background=float(data.get("background", {}).get("mu_r", d.mu_r_background)),
                mu_r_low=float(mat.get("mu_r_low", d.mu_r_low)),
                mu_r_high=float(mat.get("mu_r_high", d.mu_r_high)),
                H0=float(mat.get("H0", d.H0)),
                anomaly=region,
                cell=float(grid.get("cell", d.cell)),
                margin=float(grid.get("margin", d.margin)),
                basis_order=int(data.get("basis", {}).get("order", d.basis_order)),
                amplitude=float(data.get("probe", {}).get("amplitude", d.amplitude)),
                solver=SolverSettings(
                    rel_tol=float(solver.get("rel_tol", d.solver.rel_tol)),
                    max_iter=int(solver.get("max_iter", d.solver.max_iter)),
                    alpha_nodes=int(solver.get("alpha_nodes", d.solver.alpha_nodes)),
                ),
                family=FamilySettings(
                    disk_factors=tuple(fam.get("disk_factors", d.family.disk_factors)),
                    directions=int(fam.get("directions", d.family.directions)),
                    halfplane_offsets=tuple(fam.get("halfplane_offsets", d.family.halfplane_offsets)),
                    fallback_offsets=tuple(fam.get("fallback_offsets", d.family.fallback_offsets)),
                    neg_tol=float(fam.get("neg_tol", d.family.neg_tol)),
                ),
                eta=float(noise.get("eta", d.eta)),
                seed=int(noise.get("seed", d.seed)),
            )
        except (TypeError, KeyError, AttributeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None

    def system_hash(self) -> str:
        """Content hash of every key the offline probe set depends on.

        Name, true anomaly and noise settings are excluded, so one probe cache
        serves any inspection of the same tomographic system.
        """
        data = self.to_json()
        for key in ("name", "anomaly", "noise"):
            data.pop(key)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Read a scenario from a JSON file, or a bundled scenario by name."""
    path = Path(path_or_name)
    if not path.is_file() and not path.suffix:
        bundled = resources.files("mptomo") / "scenarios" / f"{path_or_name}.json"
        if bundled.is_file():
            return Scenario.from_json(json.loads(bundled.read_text())).validate()
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {str(path)!r}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {str(path)!r} is not valid JSON: {exc}") from None
    return Scenario.from_json(data).validate()


def bundled_scenarios() -> list[str]:
    folder = resources.files("mptomo") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))
