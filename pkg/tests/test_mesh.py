import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penode.mesh import DecisionLayout, Mesh, MeshError, build_equidistant, interval_of_nodes, node_times


def test_equidistant_vdp_grid():
    mesh = build_equidistant(0.0, 7.0, 500, 5)
    assert mesh.n_intervals == 500
    np.testing.assert_allclose(mesh.steps, 0.014)
    assert mesh.node_count - 1 == 2500
    t = node_times(mesh)
    assert t.size == 2501 and t[0] == 0.0 and t[-1] == 7.0
    assert np.all(np.diff(t) > 0)


def test_spectral_grid():
    mesh = build_equidistant(0.0, 7.0, 1, 70)
    assert mesh.n_intervals == 1 and mesh.node_count == 71


def test_single_euler_step():
    mesh = build_equidistant(0.0, 1.0, 1, 1)
    np.testing.assert_allclose(node_times(mesh), [0.0, 1.0])


def test_two_stage_node_times():
    # nodes {1/3, 1} mapped affinely into [0, 1/2] and [1/2, 1]
    mesh = build_equidistant(0.0, 1.0, 2, 2)
    np.testing.assert_allclose(node_times(mesh), [0.0, 1 / 6, 0.5, 2 / 3, 1.0], atol=1e-15)


@pytest.mark.parametrize("args", [(1.0, 1.0, 3, 2), (0.0, 1.0, 0, 2), (0.0, 1.0, 3, 0), (2.0, 1.0, 3, 2)])
def test_invalid_equidistant(args):
    with pytest.raises(MeshError):
        build_equidistant(*args)


def test_mesh_validation():
    with pytest.raises(MeshError):
        Mesh(np.array([0.0, 1.0, 1.0]), np.array([2, 2]))
    with pytest.raises(MeshError):
        Mesh(np.array([0.0, 1.0]), np.array([2, 2]))
    with pytest.raises(MeshError):
        Mesh(np.array([0.0]), np.array([], dtype=int))


def test_non_equidistant_mixed_stages():
    mesh = Mesh.from_boundaries([0.0, 0.1, 0.5, 2.0], [1, 3, 2])
    t = node_times(mesh)
    assert t.size == 1 + 6
    # interval boundaries appear exactly once as node times
    for b in mesh.boundaries:
        assert np.sum(np.isclose(t, b)) == 1
    interval, stage = interval_of_nodes(mesh)
    np.testing.assert_array_equal(interval, [0, 1, 1, 1, 2, 2])
    np.testing.assert_array_equal(stage, [1, 1, 2, 3, 1, 2])


def test_mesh_is_immutable():
    mesh = build_equidistant(0.0, 1.0, 4, 3)
    with pytest.raises(ValueError):
        mesh.boundaries[0] = 5.0


def test_full_scale_qvm_var_count():
    layout = DecisionLayout(build_equidistant(0.0, 42.0, 2500, 5), d_x=5, d_p=92)
    assert layout.var_count == (1 + 12500) * 5 + 92 == 62597
    assert layout.param_offset == 62505


def test_shared_boundary_node_identity():
    layout = DecisionLayout(build_equidistant(0.0, 1.0, 3, 4), d_x=2, d_p=1)
    for i in range(1, 3):
        assert layout.node_index(i, 0) == layout.node_index(i - 1, 4)
    assert layout.node_index(0, 0) == 0
    with pytest.raises(IndexError):
        layout.node_index(3, 1)
    with pytest.raises(IndexError):
        layout.node_index(0, 5)


@settings(max_examples=50, deadline=None)
@given(stages=st.lists(st.integers(1, 6), min_size=1, max_size=8), d_x=st.integers(1, 4),
       d_p=st.integers(0, 5), data=st.data())
def test_layout_round_trip(stages, d_x, d_p, data):
    mesh = Mesh.from_boundaries(np.arange(len(stages) + 1, dtype=float), stages)
    layout = DecisionLayout(mesh, d_x, d_p)
    assert layout.node_count == 1 + sum(stages)
    flat = data.draw(st.integers(0, layout.var_count - 1))
    loc = layout.locate(flat)
    if loc[0] == "param":
        assert layout.param_index(loc[1]) == flat
        assert flat >= layout.var_count - d_p
    else:
        _, node, state = loc
        i, j = layout.node_of(node)
        assert layout.node_index(i, j) == node
        assert layout.var_index(layout.node_index(i, j), state) == flat
