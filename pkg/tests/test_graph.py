import numpy as np
import pytest

from metroflow.errors import ConfigError, DataError, DimensionError, UnknownStationError
from metroflow.graph import (
    build_graph,
    graph_transform,
    normalized_laplacian,
    read_topology,
    synth_topology,
    write_topology,
)
from metroflow.tensor import Tensor, parameter


def test_isolated_station():
    g = build_graph([], [["A"]])
    assert g.laplacian.tolist() == [[1.0]]


def test_two_station_path():
    g = build_graph([("A", "B")], [["A", "B"]])
    np.testing.assert_allclose(g.laplacian, np.full((2, 2), 0.5), rtol=0, atol=1e-12)


def test_triangle():
    g = build_graph([("A", "B"), ("B", "C"), ("A", "C")], [["A", "B", "C"]])
    np.testing.assert_allclose(g.laplacian, np.full((3, 3), 1 / 3), rtol=0, atol=1e-12)


def test_adjacency_properties_and_line_order():
    lines = [["a1", "x", "a3"], ["b1", "x", "b3"]]
    g = build_graph([("a1", "x"), ("x", "a3"), ("b1", "x"), ("x", "b3"), ("x", "a1")], lines)
    assert g.stations == ("a1", "x", "a3", "b1", "b3")
    a = g.adjacency
    assert np.array_equal(a, a.T) and not np.diag(a).any() and set(np.unique(a)) <= {0, 1}
    assert g.transfer_stations() == ["x"]
    assert a.sum() == 8  # duplicate edge counted once
    assert (g.degree >= 1).all()


def test_unknown_station_and_self_loop():
    with pytest.raises(UnknownStationError, match="Z"):
        build_graph([("A", "Z")], [["A", "B"]])
    with pytest.raises(DataError):
        build_graph([("A", "A")], [["A", "B"]])


def test_laplacian_arrays_are_read_only():
    g = build_graph([("A", "B")], [["A", "B"]])
    with pytest.raises(ValueError):
        g.laplacian[0, 0] = 2.0


def test_transform_identity_on_isolated_stations():
    g = build_graph([], [["A"], ["B"], ["C"]])
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(graph_transform(g, x), x)


def test_transform_path_and_regular_graph():
    g = build_graph([("A", "B")], [["A", "B"]])
    np.testing.assert_allclose(graph_transform(g, np.array([[1.0], [3.0]])), [[2.0], [2.0]])
    tri = build_graph([("A", "B"), ("B", "C"), ("A", "C")], [["A", "B", "C"]])
    const = np.tile([[2.0, -1.0, 5.0]], (3, 1))
    np.testing.assert_allclose(graph_transform(tri, const), const, atol=1e-12)


def test_transform_batches_and_differentiates():
    g = build_graph([("A", "B"), ("B", "C")], [["A", "B", "C"]])
    x = parameter(np.random.default_rng(1).normal(size=(2, 3, 4)))
    out = graph_transform(g, x)
    assert isinstance(out, Tensor) and out.shape == (2, 3, 4)
    out.sum().backward()
    np.testing.assert_allclose(x.grad, np.broadcast_to(g.laplacian.sum(axis=0)[:, None], (2, 3, 4)))
    with pytest.raises(DimensionError):
        graph_transform(g, np.ones((4, 2)))


def test_normalized_laplacian_symmetric_exactly():
    rng = np.random.default_rng(2)
    a = np.triu(rng.random((9, 9)) < 0.3, 1).astype(float)
    lap, deg = normalized_laplacian(a + a.T)
    assert np.array_equal(lap, lap.T)
    assert np.array_equal(deg, (a + a.T).sum(axis=1) + 1)


def test_synth_single_line_is_path():
    g = synth_topology(1, 5, 0, seed=3)
    expected = np.diag(np.ones(4), 1)
    assert np.array_equal(g.adjacency, expected + expected.T)


def test_synth_two_lines_one_transfer():
    g = synth_topology(2, 4, 1, seed=4)
    assert g.n_stations == 7
    assert g.is_connected()
    assert len(g.transfer_stations()) == 1


def test_synth_deterministic_and_validated():
    a, b = synth_topology(3, 6, 3, seed=5), synth_topology(3, 6, 3, seed=5)
    assert np.array_equal(a.adjacency, b.adjacency) and a.stations == b.stations
    with pytest.raises(ConfigError):
        synth_topology(2, 4, 0, seed=0)  # two lines cannot connect without a transfer


def test_topology_round_trip(tmp_path):
    g = synth_topology(2, 5, 2, seed=6)
    write_topology(g, tmp_path / "edges.csv", tmp_path / "lines.csv")
    assert (tmp_path / "edges.csv").read_text().splitlines()[0] == "station_a,station_b"
    h = read_topology(tmp_path / "edges.csv", tmp_path / "lines.csv")
    assert h.stations == g.stations and h.lines == g.lines
    assert np.array_equal(h.adjacency, g.adjacency)
