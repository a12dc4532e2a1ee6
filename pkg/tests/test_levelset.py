import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heatpoint.geometry import ConfigurationError, Domain, build_mesh
from heatpoint.levelset import ThresholdSpec, superlevel, suppress_node, threshold_map

SMALL = build_mesh(Domain(1.0), 0.5)  # 9 nodes
fields = arrays(np.float64, 9, elements=st.floats(-2, 2, allow_nan=False))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        ThresholdSpec(c=0.0)
    with pytest.raises(ConfigurationError):
        ThresholdSpec(variant="binary")
    with pytest.raises(ConfigurationError):
        ThresholdSpec(clearance=0.0)


def test_all_below_threshold_is_empty(mesh):
    assert threshold_map(np.full(225, 0.3), mesh, ThresholdSpec(0.3)).count == 0


def test_single_weighted_source(mesh):
    phi = np.zeros(225)
    j = mesh.index_of((-0.875, 0.0))
    phi[j] = 0.3 + 0.4
    f = threshold_map(phi, mesh, ThresholdSpec(0.3))
    assert f.count == 1
    assert tuple(f.locations[0]) == (-0.875, 0.0)
    assert f.intensities[0] == pytest.approx(0.7)


def test_threshold_is_strict():
    phi = np.zeros(9)
    phi[4] = 0.3
    phi[5] = np.nextafter(0.3, 1)
    nodes, _ = superlevel(phi, ThresholdSpec(0.3))
    np.testing.assert_array_equal(nodes, [5])


def test_constant_variant_has_unit_intensities():
    phi = np.array([0.1, 0.9, 0.5, -1, 2, 0, 0, 0, 0.31])
    f = threshold_map(phi, SMALL, ThresholdSpec(0.3, variant="constant"))
    np.testing.assert_array_equal(f.intensities, np.ones(4))
    np.testing.assert_array_equal(f.locations, SMALL.nodes[[1, 2, 4, 8]])


def test_length_mismatch(mesh):
    with pytest.raises(ValueError):
        threshold_map(np.zeros(10), mesh, ThresholdSpec())


def test_suppress_node_clamps_below_threshold():
    phi = np.linspace(-1, 1, 9)
    phi[3] = 0.9
    out = suppress_node(phi, 3, ThresholdSpec(0.3))
    assert out[3] == pytest.approx(0.29)
    assert 3 not in superlevel(out, ThresholdSpec(0.3))[0]
    mask = np.arange(9) != 3
    assert out[mask].tobytes() == phi[mask].tobytes()
    assert phi[3] == 0.9  # input untouched


def test_suppress_twice_warns_and_is_idempotent(caplog):
    phi = np.zeros(9)
    phi[2] = 0.9
    spec = ThresholdSpec(0.3)
    once = suppress_node(phi, 2, spec)
    with caplog.at_level(logging.WARNING, logger="heatpoint.levelset"):
        twice = suppress_node(once, 2, spec)
    assert "already" in caplog.text
    assert twice.tobytes() == once.tobytes()


@settings(max_examples=60, deadline=None)
@given(phi=fields, j=st.integers(0, 8), bump=st.floats(0, 3))
def test_raising_one_value_never_removes_others(phi, j, bump):
    spec = ThresholdSpec(0.3)
    before = set(superlevel(phi, spec)[0])
    raised = phi.copy()
    raised[j] += bump
    after = set(superlevel(raised, spec)[0])
    assert before - {j} <= after


@settings(max_examples=60, deadline=None)
@given(phi=fields)
def test_suppress_removes_exactly_one(phi):
    spec = ThresholdSpec(0.3)
    nodes, w = superlevel(phi, spec)
    for k, j in enumerate(nodes):
        n2, w2 = superlevel(suppress_node(phi, int(j), spec), spec)
        np.testing.assert_array_equal(n2, np.delete(nodes, k))
        np.testing.assert_array_equal(w2, np.delete(w, k))


@settings(max_examples=60, deadline=None)
@given(phi=fields)
def test_emitted_set_is_superlevel_set(phi):
    f = threshold_map(phi, SMALL, ThresholdSpec(0.3))
    np.testing.assert_array_equal(f.locations, SMALL.nodes[phi > 0.3])
    np.testing.assert_array_equal(f.intensities, phi[phi > 0.3])
