"""Monotonicity-based reconstruction: offline probe precomputation, simulated
measurements with bounded uniform noise, the thresholded acceptance rule and
area-based quality metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import counters
from .forward import Configuration, avg_dtn_form
from .geometry import (
    DiskComplement,
    HalfPlane,
    Mesh,
    Rectangle,
    Region,
    Union,
    build_disk_mesh,
    element_mask,
)
from .materials import material_field
from .probes import BoundaryBasis, BoundaryPotential, MatrixCache, select_probe
from .scenario import FamilySettings, Scenario

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Test cells and fictitious regions


@dataclass(frozen=True)
class TestGrid:
    """Square cells ``[i s, (i+1) s] x [j s, (j+1) s]`` kept inside radius ``R - margin``."""

    __test__ = False

    side: float
    radius: float
    margin: float
    lattice: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.lattice)

    @property
    def centers(self) -> np.ndarray:
        return (np.asarray(self.lattice, dtype=float) + 0.5) * self.side

    @property
    def cells(self) -> tuple[Rectangle, ...]:
        return tuple(Rectangle((float(c[0]), float(c[1])), self.side, self.side) for c in self.centers)

    def masks(self, mesh: Mesh) -> np.ndarray:
        """Boolean array (cells, triangles) of centroid membership."""
        return np.array([element_mask(mesh, c) for c in self.cells]).reshape(len(self), mesh.n_triangles)

    def union(self, indices: Iterable[int]) -> Union:
        cells = self.cells
        return Union(tuple(cells[k] for k in indices))


def build_test_grid(radius: float, side: float, margin: float) -> TestGrid:
    if not 0 < side < radius:
        if side > 0:
            raise ValueError(f"test grid is empty: cell side {side} does not fit in radius {radius}")
        raise ValueError(f"cell side must be positive, got {side}")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    limit = radius - margin
    n = math.ceil(radius / side) + 1
    kept = []
    for j in range(-n, n):
        for i in range(-n, n):
            corners = [(i * side, j * side), ((i + 1) * side, j * side), (i * side, (j + 1) * side), ((i + 1) * side, (j + 1) * side)]
            dist = max(math.hypot(x, y) for x, y in corners)
            if dist <= limit + 1e-12 and dist < radius:
                kept.append((i, j))
    if not kept:
        raise ValueError(f"test grid is empty: no {side} m cell fits within radius {limit}")
    return TestGrid(side, radius, margin, tuple(kept))


def build_fictitious_family(
    cell: Rectangle,
    radius: float,
    family: FamilySettings = FamilySettings(),
    mesh: Mesh | None = None,
    offsets: Sequence[float] | None = None,
) -> list[Region]:
    """Disk complements and half-planes around ``cell`` that avoid it.

    With ``mesh`` given, members sharing a triangle with the cell are dropped
    (with a warning).  ``offsets`` overrides the half-plane offsets, and an
    empty ``disk_factors`` list leaves only half-planes.
    """
    c = np.asarray(cell.center, dtype=float)
    s = cell.width
    corners = c + 0.5 * s * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
    if np.max(np.linalg.norm(corners, axis=1)) >= radius:
        raise ValueError("test cell is not inside the domain")
    members: list[Region] = [DiskComplement((float(c[0]), float(c[1])), f * s / math.sqrt(2.0)) for f in family.disk_factors]
    for off in family.halfplane_offsets if offsets is None else offsets:
        for q in range(family.directions):
            a = 2.0 * math.pi * q / family.directions
            d = (math.cos(a), math.sin(a))
            members.append(HalfPlane((float(c[0] + off * s * d[0]), float(c[1] + off * s * d[1])), d))
    if mesh is None:
        return members
    t_mask = element_mask(mesh, cell)
    kept = []
    for m in members:
        if np.any(element_mask(mesh, m) & t_mask):
            warnings.warn(f"dropping fictitious region {m} overlapping the test cell", stacklevel=2)
        else:
            kept.append(m)
    return kept


# ---------------------------------------------------------------------------
# Runtime system


class TomographySystem:
    """Mesh, basis, grid and materials derived from a scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.mesh = build_disk_mesh(scenario.radius, scenario.mesh_h)
        self.basis = BoundaryBasis(self.mesh, scenario.basis_order)
        self.grid = build_test_grid(scenario.radius, scenario.cell, scenario.margin)
        self.cell_masks = self.grid.masks(self.mesh)
        self.background = scenario.background
        self.nonlinear = scenario.anomaly_material
        self.settings = scenario.solver

    def configuration(self, region: Region | np.ndarray, material=None) -> Configuration:
        field_ = material_field(self.mesh, region, material or self.nonlinear, self.background)
        return Configuration(self.mesh, field_, self.settings)

    def background_configuration(self) -> Configuration:
        return self.configuration(np.zeros(self.mesh.n_triangles, dtype=bool))

    def potential(self, record: "ProbeRecord") -> BoundaryPotential:
        return self.basis.potential(record.coefficients, record.amplitude)

    def region_mask(self, region: Region | np.ndarray) -> np.ndarray:
        if isinstance(region, np.ndarray):
            return region.astype(bool)
        return element_mask(self.mesh, region)


@lru_cache(maxsize=4)
def _system(scenario: Scenario) -> TomographySystem:
    return TomographySystem(scenario)


def worker_count() -> int:
    env = os.environ.get("MPTOMO_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_counted(fn, arg):
    with counters.tally() as delta:
        out = fn(arg)
    return out, delta


def parallel_map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """Map ``fn`` over ``items`` in order, in worker processes when ``workers > 1``.

    Operation counters incremented in workers are merged back into this process.
    """
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        results = list(pool.map(_run_counted, [fn] * len(items), items))
    out = []
    for res, delta in results:
        counters.merge(delta)
        out.append(res)
    return out


# ---------------------------------------------------------------------------
# Offline phase


@dataclass(frozen=True, eq=False)
class ProbeRecord:
    k: int
    i: int
    lambda_min: float
    coefficients: np.ndarray
    amplitude: float
    reference: float  # avg form of the probe with the test cell filled by the nonlinear law
    background: float  # avg form of the probe with no anomaly
    region: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "i": self.i,
            "lambda_min": self.lambda_min,
            "coefficients": [float(c) for c in self.coefficients],
            "amplitude": self.amplitude,
            "reference": self.reference,
            "background": self.background,
            "region": self.region,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProbeRecord":
        return cls(
            int(d["k"]),
            int(d["i"]),
            float(d["lambda_min"]),
            np.asarray(d["coefficients"], dtype=float),
            float(d["amplitude"]),
            float(d["reference"]),
            float(d["background"]),
            d.get("region", {}),
        )


class CacheError(RuntimeError):
    pass


@dataclass(eq=False)
class ProbeSet:
    records: list[ProbeRecord]
    n_cells: int
    scenario_hash: str = ""
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def keys(self) -> list[tuple[int, int]]:
        return [(r.k, r.i) for r in self.records]

    def cells_without_probes(self) -> list[int]:
        have = {r.k for r in self.records}
        return [k for k in range(self.n_cells) if k not in have]

    def to_json(self) -> dict:
        return {
            "scenario_hash": self.scenario_hash,
            "n_cells": self.n_cells,
            "rejected": self.rejected,
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProbeSet":
        return cls(
            [ProbeRecord.from_json(r) for r in d["records"]],
            int(d["n_cells"]),
            d.get("scenario_hash", ""),
            int(d.get("rejected", 0)),
        )

    def save(self, path: str | Path) -> None:
        write_atomic(path, json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path, expected_hash: str | None = None) -> "ProbeSet":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CacheError(f"cannot read probe cache {str(path)!r}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise CacheError(f"probe cache {str(path)!r} is corrupt: {exc}") from None
        probes = cls.from_json(data)
        if expected_hash is not None and probes.scenario_hash != expected_hash:
            raise CacheError(
                f"probe cache {str(path)!r} was built for a different tomographic system "
                f"(hash {probes.scenario_hash[:12]} != {expected_hash[:12]}); rerun precompute"
            )
        return probes


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class CellProbes:
    k: int
    records: list[ProbeRecord]
    rejected: int


def select_cell_probes(system: TomographySystem, k: int, cache: MatrixCache | None = None) -> tuple[list, int]:
    """Probe potentials for cell ``k`` as ``(i, region, candidate)`` triples.

    The regular family is tried first; fallback half-plane offsets are used
    only while the cell still has no probe.
    """
    sc = system.scenario
    fam = sc.family
    cell = system.grid.cells[k]
    t_mask = system.cell_masks[k]
    if cache is None:
        cache = MatrixCache(system.mesh, system.basis, system.background.mu, system.settings)
    mu_u = system.nonlinear.mu_u
    mu_l = system.nonlinear.mu_l
    found = []
    rejected = 0
    i = 0
    stages = [None] + [[off] for off in fam.fallback_offsets]
    for stage, offsets in enumerate(stages):
        if stage > 0 and found:
            break
        fam_stage = fam if stage == 0 else FamilySettings((), fam.directions, tuple(offsets), (), fam.neg_tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            members = build_fictitious_family(cell, sc.radius, fam_stage, system.mesh)
        for region in members:
            f_mask = element_mask(system.mesh, region)
            cand = select_probe(
                t_mask, f_mask, system.basis, system.mesh, mu_u, mu_l, system.background.mu,
                amplitude=sc.amplitude, neg_tol=fam.neg_tol, cache=cache,
            )
            if cand.potential is None:
                rejected += 1
            else:
                found.append((i, region, cand))
            i += 1
    return found, rejected


def _cell_task(arg: tuple[Scenario, int]) -> CellProbes:
    scenario, k = arg
    system = _system(scenario)
    found, rejected = select_cell_probes(system, k)
    if not found:
        log.debug("test cell %d obtained no probe potential", k)
    t_config = system.configuration(system.cell_masks[k])
    bg_config = system.background_configuration()
    records = []
    for i, region, cand in found:
        pot = cand.potential
        records.append(
            ProbeRecord(
                k, i, cand.lambda_min, pot.coefficients, float(pot.amplitude),
                reference=avg_dtn_form(t_config, pot),
                background=avg_dtn_form(bg_config, pot),
                region=region.to_json(),
            )
        )
    return CellProbes(k, records, rejected)


def precompute(scenario: Scenario, workers: int | None = None) -> ProbeSet:
    """Offline phase: choose probe potentials for every test cell and store
    their reference (test cell filled by the nonlinear law) and background
    average-DtN forms."""
    scenario.validate()
    system = _system(scenario)
    results = parallel_map(_cell_task, [(scenario, k) for k in range(len(system.grid))], workers)
    records = [r for res in results for r in res.records]
    rejected = sum(res.rejected for res in results)
    probes = ProbeSet(records, len(system.grid), scenario.system_hash(), rejected)
    bare = probes.cells_without_probes()
    if bare:
        log.warning("%d of %d test cells obtained no probe potential and will always be accepted", len(bare), len(system.grid))
    return probes


# ---------------------------------------------------------------------------
# Online phase


@dataclass(frozen=True)
class Measurement:
    k: int
    i: int
    value: float
    exact: float
    noise: float


@dataclass(eq=False)
class MeasurementSet:
    records: list[Measurement]
    eta: float
    delta: float
    seed: int

    def keys(self) -> list[tuple[int, int]]:
        return [(m.k, m.i) for m in self.records]

    @property
    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.records])

    def to_json(self) -> dict:
        return {
            "eta": self.eta,
            "delta": self.delta,
            "seed": self.seed,
            "records": [{"k": m.k, "i": m.i, "value": m.value, "exact": m.exact, "noise": m.noise} for m in self.records],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MeasurementSet":
        recs = [Measurement(int(r["k"]), int(r["i"]), float(r["value"]), float(r["exact"]), float(r["noise"])) for r in d["records"]]
        return cls(recs, float(d["eta"]), float(d["delta"]), int(d["seed"]))


def noise_draws(seed: int, keys: Sequence[tuple[int, int]]) -> np.ndarray:
    """Uniform draws in (-1, 1), one independent stream per ``(k, i)`` key."""
    out = np.empty(len(keys))
    for n, (k, i) in enumerate(keys):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(k), int(i))))
        x = rng.uniform(-1.0, 1.0)
        while x == -1.0:
            x = rng.uniform(-1.0, 1.0)
        out[n] = x
    return out


def add_noise(exact: np.ndarray, eta: float, delta: float, seed: int, keys: Sequence[tuple[int, int]]):
    """``exact + eta * delta * xi`` with ``xi ~ U(-1, 1)``; returns (noisy, noise)."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    noise = eta * delta * noise_draws(seed, keys)
    return np.asarray(exact, dtype=float) + noise, noise


def _exact_task(arg) -> float:
    scenario, mask, coefficients, amplitude = arg
    system = _system(scenario)
    return avg_dtn_form(system.configuration(mask), system.basis.potential(coefficients, amplitude))


def exact_forms(system: TomographySystem, anomaly: Region | np.ndarray, probes: ProbeSet, workers: int | None = None) -> np.ndarray:
    """Noise-free average-DtN forms of every probe for the true configuration."""
    mask = system.region_mask(anomaly)
    if workers is None or workers <= 1:
        config = system.configuration(mask)
        return np.array([avg_dtn_form(config, system.potential(r)) for r in probes.records])
    args = [(system.scenario, mask, r.coefficients, r.amplitude) for r in probes.records]
    return np.array(parallel_map(_exact_task, args, workers))


def measure(
    system: TomographySystem,
    anomaly: Region | np.ndarray,
    probes: ProbeSet,
    eta: float,
    seed: int,
    workers: int | None = None,
) -> MeasurementSet:
    """Simulated noisy measurements of every probe form for the true anomaly.

    The noise scale ``delta`` is the largest deviation of the exact forms from
    the background forms over the probe set.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    return measurements_from_exact(probes, exact_forms(system, anomaly, probes, workers), eta, seed)


def measurements_from_exact(probes: ProbeSet, exact: np.ndarray, eta: float, seed: int) -> MeasurementSet:
    """Add bounded noise to precomputed exact forms (one value per probe)."""
    exact = np.asarray(exact, dtype=float)
    if exact.shape != (len(probes),):
        raise ValueError("need one exact form per probe")
    background = np.array([r.background for r in probes.records])
    delta = float(np.max(np.abs(exact - background))) if len(exact) else 0.0
    keys = probes.keys()
    noisy, noise = add_noise(exact, eta, delta, seed, keys)
    recs = [Measurement(k, i, float(v), float(e), float(n)) for (k, i), v, e, n in zip(keys, noisy, exact, noise)]
    return MeasurementSet(recs, float(eta), delta, int(seed))


@dataclass(eq=False)
class ReconstructionMask:
    accepted: np.ndarray
    # smallest m - t + eta*delta over the cell's probes (inf when it has none)
    slack: np.ndarray

    def __len__(self) -> int:
        return len(self.accepted)

    def region(self, grid: TestGrid) -> Union:
        return grid.union(np.flatnonzero(self.accepted))

    def triangle_mask(self, cell_masks: np.ndarray) -> np.ndarray:
        if not np.any(self.accepted):
            return np.zeros(cell_masks.shape[1], dtype=bool)
        return np.any(cell_masks[self.accepted], axis=0)

    def to_csv(self, path: str | Path, grid: TestGrid) -> None:
        rows = ["k,cx,cy,accepted"]
        for k, (c, a) in enumerate(zip(grid.centers, self.accepted)):
            rows.append(f"{k},{float(c[0])!r},{float(c[1])!r},{int(a)}")
        write_atomic(path, "\n".join(rows) + "\n")

    @staticmethod
    def read_csv(path: str | Path) -> list[dict]:
        with open(path, newline="") as fh:
            return [
                {"k": int(r["k"]), "cx": float(r["cx"]), "cy": float(r["cy"]), "accepted": r["accepted"].strip() in ("1", "true", "True")}
                for r in csv.DictReader(fh)
            ]


def reconstruct(probes: ProbeSet, measurements: MeasurementSet) -> ReconstructionMask:
    """Accept cell ``k`` iff ``m_ki - t_ki >= -eta * delta`` for every probe ``i`` of the cell.

    Pure bookkeeping over stored numbers; no forward solve happens here.
    """
    if probes.keys() != measurements.keys():
        raise ValueError("probe and measurement index sets differ")
    threshold = -measurements.eta * measurements.delta
    slack = np.full(probes.n_cells, np.inf)
    for rec, meas in zip(probes.records, measurements.records):
        slack[rec.k] = min(slack[rec.k], meas.value - rec.reference - threshold)
    return ReconstructionMask(slack >= 0.0, slack)


def metrics(system: TomographySystem, mask: ReconstructionMask, anomaly: Region | np.ndarray) -> dict:
    """Area-weighted coverage, spurious fraction and Jaccard index of the estimate.

    Coverage is 1 when the anomaly is empty; Jaccard is 1 when both sets are empty.
    """
    area = system.mesh.areas
    est = mask.triangle_mask(system.cell_masks)
    true = system.region_mask(anomaly)
    inter = float(area[est & true].sum())
    a_true = float(area[true].sum())
    a_est = float(area[est].sum())
    a_union = float(area[est | true].sum())
    return {
        "coverage": inter / a_true if a_true > 0 else 1.0,
        "spurious_fraction": float(area[est & ~true].sum()) / a_est if a_est > 0 else 0.0,
        "jaccard": inter / a_union if a_union > 0 else 1.0,
        "accepted_cells": int(np.sum(mask.accepted)),
        "total_cells": int(len(mask)),
    }
