import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mptomo import counters
from mptomo.forward import avg_dtn_form
from mptomo.geometry import EMPTY, HalfPlane, Rectangle, build_disk_mesh, element_mask
from mptomo.recon import (
    CacheError,
    Measurement,
    MeasurementSet,
    ProbeRecord,
    ProbeSet,
    ReconstructionMask,
    TomographySystem,
    add_noise,
    build_fictitious_family,
    build_test_grid,
    exact_forms,
    measure,
    measurements_from_exact,
    metrics,
    noise_draws,
    precompute,
    reconstruct,
)
from mptomo.scenario import FamilySettings


# ---------------------------------------------------------------------------
# test grid


def test_grid_corners_inside():
    g = build_test_grid(0.3, 0.05, 0.03)
    c = g.centers
    corners = c[:, None, :] + 0.025 * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
    assert np.max(np.linalg.norm(corners, axis=2)) <= 0.27 + 1e-12


def test_grid_count_matches_enumeration():
    # brute force over lattice corner points: a cell is kept iff its farthest corner is close enough
    s, limit = 0.05, 0.27
    count = 0
    for i in range(-20, 20):
        for j in range(-20, 20):
            xs = np.array([i, i + 1]) * s
            ys = np.array([j, j + 1]) * s
            far = math.sqrt(np.max(xs**2) + np.max(ys**2))
            count += far <= limit
    assert len(build_test_grid(0.3, 0.05, 0.03)) == count == 76


def test_grid_cells_disjoint_and_inside():
    g = build_test_grid(0.3, 0.05, 0.03)
    assert len(set(g.lattice)) == len(g)
    mesh = build_disk_mesh(0.3, 0.02)
    masks = g.masks(mesh)
    assert masks.sum(axis=0).max() == 1
    assert np.all(np.linalg.norm(g.centers, axis=1) < 0.3)


@pytest.mark.parametrize("s", [0.61, 0.3, 0.29])
def test_grid_too_coarse(s):
    with pytest.raises(ValueError):
        build_test_grid(0.3, s, 0.03)


def test_grid_negative_margin():
    with pytest.raises(ValueError):
        build_test_grid(0.3, 0.05, -0.01)


# ---------------------------------------------------------------------------
# fictitious family

CELL = Rectangle((0.025, 0.025), 0.05, 0.05)


def test_family_size():
    assert len(build_fictitious_family(CELL, 0.3)) == 11


def test_family_disjoint_on_mesh():
    mesh = build_disk_mesh(0.3, 0.02)
    t = element_mask(mesh, CELL)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        members = build_fictitious_family(CELL, 0.3, mesh=mesh)
    assert len(members) == 11
    for m in members:
        assert not np.any(element_mask(mesh, m) & t)


def test_boundary_cell_outward_half_plane():
    cell = Rectangle((0.225, 0.025), 0.05, 0.05)
    out = build_fictitious_family(cell, 0.3)[3]
    assert isinstance(out, HalfPlane) and out.normal == (1.0, 0.0)
    mesh = build_disk_mesh(0.3, 0.02)
    area = mesh.areas[element_mask(mesh, out)].sum()
    d, R = 0.275, 0.3
    segment = R**2 * math.acos(d / R) - d * math.sqrt(R**2 - d**2)
    assert area == pytest.approx(segment, rel=0.25)
    assert area / (math.pi * R**2) < 0.02


def test_overlapping_members_dropped():
    mesh = build_disk_mesh(0.3, 0.02)
    fam = FamilySettings(disk_factors=(0.5,), halfplane_offsets=(0.2,))
    with pytest.warns(UserWarning):
        members = build_fictitious_family(CELL, 0.3, fam, mesh=mesh)
    assert members == []


# ---------------------------------------------------------------------------
# offline phase on the coarse system


def test_coarse_probe_invariants(coarse_probes):
    assert len(coarse_probes) > 0
    assert all(r.lambda_min < 0 for r in coarse_probes.records)
    assert all(r.reference >= 0 and r.background >= 0 for r in coarse_probes.records)
    # the reference form exceeds the background: the nonlinear cell raises the energy
    assert all(r.reference > r.background for r in coarse_probes.records)


def test_precompute_deterministic(coarse_scenario, coarse_probes):
    again = precompute(coarse_scenario, workers=1)
    assert json.dumps(again.to_json()) == json.dumps(coarse_probes.to_json())


def test_zero_contrast_precompute_empty(coarse_scenario):
    probes = precompute(coarse_scenario.with_updates(mu_r_low=1.0), workers=1)
    assert len(probes) == 0
    assert probes.rejected > 0


def test_cache_roundtrip_and_hash(coarse_scenario, coarse_probes, tmp_path):
    path = tmp_path / "c.json"
    coarse_probes.save(path)
    back = ProbeSet.load(path, expected_hash=coarse_scenario.system_hash())
    assert back.keys() == coarse_probes.keys()
    for a, b in zip(back.records, coarse_probes.records):
        assert np.array_equal(a.coefficients, b.coefficients)
        assert (a.reference, a.background, a.lambda_min) == (b.reference, b.background, b.lambda_min)
    with pytest.raises(CacheError, match="rerun precompute"):
        ProbeSet.load(path, expected_hash=coarse_scenario.with_updates(radius=0.31).system_hash())
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(CacheError, match="bad.json"):
        ProbeSet.load(tmp_path / "bad.json")


def test_hash_ignores_noise_and_anomaly(coarse_scenario):
    h = coarse_scenario.system_hash()
    assert coarse_scenario.with_updates(eta=0.5, seed=9, anomaly=CELL, name="x").system_hash() == h
    assert coarse_scenario.with_updates(amplitude=1e3).system_hash() != h


# ---------------------------------------------------------------------------
# online phase


@pytest.fixture(scope="module")
def coarse_system(coarse_scenario):
    return TomographySystem(coarse_scenario)


@pytest.fixture(scope="module")
def block(coarse_system):
    # cells 3 and 4 of the coarse grid: the square [-0.1, 0.1] x [-0.1, 0]
    return coarse_system.grid.union([3, 4])


@pytest.fixture(scope="module")
def block_exact(coarse_system, coarse_probes, block):
    return exact_forms(coarse_system, block, coarse_probes)


def test_exact_forms_match_direct(coarse_system, coarse_probes, block, block_exact):
    rec = coarse_probes.records[0]
    direct = avg_dtn_form(coarse_system.configuration(block), coarse_system.potential(rec))
    assert block_exact[0] == direct


def test_noiseless_measurements_exact(coarse_probes, block_exact):
    ms = measurements_from_exact(coarse_probes, block_exact, 0.0, 3)
    assert np.array_equal(ms.values, block_exact)


def test_empty_anomaly_delta_zero(coarse_system, coarse_probes):
    ms = measure(coarse_system, EMPTY, coarse_probes, 0.5, 1)
    assert ms.delta == 0.0
    assert np.array_equal(ms.values, [r.background for r in coarse_probes.records])


def test_noise_bounded(coarse_probes, block_exact):
    ms = measurements_from_exact(coarse_probes, block_exact, 1e-3, 11)
    assert ms.delta > 0
    err = np.abs(ms.values - block_exact)
    assert np.all(err <= 1e-3 * ms.delta)
    assert np.array_equal([m.exact for m in ms.records], block_exact)


def test_measurements_deterministic(coarse_probes, block_exact):
    a = measurements_from_exact(coarse_probes, block_exact, 1e-3, 5)
    b = measurements_from_exact(coarse_probes, block_exact, 1e-3, 5)
    c = measurements_from_exact(coarse_probes, block_exact, 1e-3, 6)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert not np.array_equal(a.values, c.values)


def test_measurement_json_roundtrip(coarse_probes, block_exact):
    ms = measurements_from_exact(coarse_probes, block_exact, 1e-3, 5)
    back = MeasurementSet.from_json(json.loads(json.dumps(ms.to_json())))
    assert back.keys() == ms.keys() and np.array_equal(back.values, ms.values)
    assert (back.eta, back.delta, back.seed) == (ms.eta, ms.delta, ms.seed)


def test_noise_stream_per_record():
    keys = [(k, i) for k in range(5) for i in range(7)]
    full = noise_draws(42, keys)
    sub = noise_draws(42, keys[::-3])
    assert np.array_equal(full[::-3], sub)
    assert np.all(np.abs(full) < 1)


def test_negative_eta_rejected():
    with pytest.raises(ValueError):
        add_noise(np.zeros(2), -1.0, 1.0, 0, [(0, 0), (0, 1)])


def test_coarse_inclusion(coarse_system, coarse_probes, block, block_exact):
    for eta, seed in [(0.0, 0), (1e-3, 1), (1e-3, 2)]:
        mask = reconstruct(coarse_probes, measurements_from_exact(coarse_probes, block_exact, eta, seed))
        assert mask.accepted[[3, 4]].all()
        assert metrics(coarse_system, mask, block)["coverage"] == 1.0


def test_coarse_empty_anomaly(coarse_system, coarse_probes):
    mask = reconstruct(coarse_probes, measure(coarse_system, EMPTY, coarse_probes, 0.0, 0))
    assert not mask.accepted.any()


def test_reconstruct_pure_bookkeeping(coarse_probes, block_exact):
    ms = measurements_from_exact(coarse_probes, block_exact, 1e-3, 0)
    with counters.tally() as ops:
        reconstruct(coarse_probes, ms)
    assert sum(ops.values()) == 0


# ---------------------------------------------------------------------------
# reconstruction rule on synthetic numbers


def synthetic(n_cells, per_cell, rng):
    recs, meas = [], []
    for k in range(n_cells):
        for i in range(per_cell):
            t = float(rng.uniform(1, 2))
            m = t + float(rng.normal(0, 0.1))
            recs.append(ProbeRecord(k, i, -1.0, np.zeros(2), 1.0, t, 1.0))
            meas.append(Measurement(k, i, m, m, 0.0))
    return ProbeSet(recs, n_cells), meas


def test_huge_eta_accepts_everything(rng):
    probes, meas = synthetic(6, 3, rng)
    mask = reconstruct(probes, MeasurementSet(meas, 1e9, 1.0, 0))
    assert mask.accepted.all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(seed, e1, e2):
    probes, meas = synthetic(8, 4, np.random.default_rng(seed))
    lo, hi = sorted((e1, e2))
    a = reconstruct(probes, MeasurementSet(meas, lo, 0.3, 0)).accepted
    b = reconstruct(probes, MeasurementSet(meas, hi, 0.3, 0)).accepted
    assert np.all(b[a])


def test_rule_is_all_probes(rng):
    probes, meas = synthetic(1, 3, rng)
    for j, (r, m) in enumerate(zip(probes.records, meas)):
        meas[j] = Measurement(m.k, m.i, r.reference + (0.0 if j else -0.1), 0.0, 0.0)
    assert not reconstruct(probes, MeasurementSet(meas, 0.0, 1.0, 0)).accepted[0]
    meas[0] = Measurement(0, 0, probes.records[0].reference, 0.0, 0.0)
    assert reconstruct(probes, MeasurementSet(meas, 0.0, 1.0, 0)).accepted[0]


def test_cell_without_probes_accepted(rng):
    probes, meas = synthetic(3, 2, rng)
    probes = ProbeSet([r for r in probes.records if r.k != 1], 3)
    meas = [m for m in meas if m.k != 1]
    mask = reconstruct(probes, MeasurementSet(meas, 0.0, 1.0, 0))
    assert mask.accepted[1] and np.isinf(mask.slack[1])


def test_index_mismatch(rng):
    probes, meas = synthetic(2, 2, rng)
    with pytest.raises(ValueError):
        reconstruct(probes, MeasurementSet(meas[:-1], 0.0, 1.0, 0))


# ---------------------------------------------------------------------------
# metrics


def test_metrics_identical(coarse_system, block):
    mask = ReconstructionMask(np.isin(np.arange(12), [3, 4]), np.zeros(12))
    q = metrics(coarse_system, mask, block)
    assert q["jaccard"] == 1.0 and q["coverage"] == 1.0 and q["spurious_fraction"] == 0.0


def test_metrics_disjoint(coarse_system, block):
    mask = ReconstructionMask(np.isin(np.arange(12), [10, 11]), np.zeros(12))
    q = metrics(coarse_system, mask, block)
    assert q["jaccard"] == 0.0 and q["coverage"] == 0.0 and q["spurious_fraction"] == 1.0


def test_metrics_everything_accepted(coarse_system):
    small = coarse_system.grid.union([7])
    mask = ReconstructionMask(np.ones(12, bool), np.zeros(12))
    q = metrics(coarse_system, mask, small)
    area = coarse_system.mesh.areas
    est = mask.triangle_mask(coarse_system.cell_masks)
    assert q["coverage"] == 1.0
    assert q["spurious_fraction"] == pytest.approx(1 - area[coarse_system.cell_masks[7]].sum() / area[est].sum())


def test_metrics_empty_sets(coarse_system):
    none = ReconstructionMask(np.zeros(12, bool), np.zeros(12))
    q = metrics(coarse_system, none, EMPTY)
    assert q == {"coverage": 1.0, "spurious_fraction": 0.0, "jaccard": 1.0, "accepted_cells": 0, "total_cells": 12}


def test_mask_csv_roundtrip(coarse_system, tmp_path):
    acc = np.isin(np.arange(12), [0, 5, 6])
    ReconstructionMask(acc, np.zeros(12)).to_csv(tmp_path / "m.csv", coarse_system.grid)
    rows = ReconstructionMask.read_csv(tmp_path / "m.csv")
    assert [r["accepted"] for r in rows] == acc.tolist()
    assert np.allclose([[r["cx"], r["cy"]] for r in rows], coarse_system.grid.centers)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "k,cx,cy,accepted"
