"""Metro topology, self-looped symmetric normalisation and the graph-signal transform."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError, UnknownStationError
from .tensor import Tensor


@dataclass(frozen=True, eq=False)
class MetroGraph:
    """Immutable station graph.

    ``stations`` follows line order: line 1 first in travel direction, then
    each later line's stations that have not appeared yet. Transfer stations
    therefore appear once in ``stations`` and in several ``lines``.
    """

    stations: tuple[str, ...]
    lines: tuple[tuple[str, ...], ...]
    adjacency: np.ndarray
    laplacian: np.ndarray = field(repr=False)
    degree: np.ndarray = field(repr=False)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.stations)}

    def transfer_stations(self) -> list[str]:
        counts: dict[str, int] = {}
        for line in self.lines:
            for s in set(line):
                counts[s] = counts.get(s, 0) + 1
        return [s for s in self.stations if counts.get(s, 0) > 1]

    def hop_distances(self) -> np.ndarray:
        """All-pairs shortest path lengths in edges (BFS per source)."""
        n = self.n_stations
        dist = np.full((n, n), -1, dtype=int)
        neighbours = [np.flatnonzero(row) for row in self.adjacency]
        for src in range(n):
            dist[src, src] = 0
            frontier = [src]
            while frontier:
                nxt = []
                for u in frontier:
                    for v in neighbours[u]:
                        if dist[src, v] < 0:
                            dist[src, v] = dist[src, u] + 1
                            nxt.append(v)
                frontier = nxt
        return dist

    def is_connected(self) -> bool:
        return bool((self.hop_distances() >= 0).all())


def normalized_laplacian(adjacency: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(D^-1/2 (A+I) D^-1/2, diag(D))`` for a 0/1 adjacency matrix."""
    a_hat = adjacency + np.eye(adjacency.shape[0])
    degree = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]
    # Enforce exact symmetry; the two products can differ in the last ulp.
    lap = np.triu(lap) + np.triu(lap, 1).T
    return lap, degree


def build_graph(edges: Iterable[tuple[str, str]], lines: Sequence[Sequence[str]]) -> MetroGraph:
    """Build a graph from track edges and ordered line definitions.

    Duplicate edges (either direction) collapse silently; an edge naming a
    station absent from every line raises UnknownStationError.
    """
    order: list[str] = []
    seen: set[str] = set()
    for line in lines:
        for s in line:
            if s not in seen:
                seen.add(s)
                order.append(s)
    if not order:
        raise DataError("graph needs at least one station")
    index = {s: i for i, s in enumerate(order)}
    adj = np.zeros((len(order), len(order)))
    for a, b in edges:
        for s in (a, b):
            if s not in index:
                raise UnknownStationError(f"edge references unknown station {s!r}")
        if a == b:
            raise DataError(f"self-loop edge at station {a!r}")
        adj[index[a], index[b]] = adj[index[b], index[a]] = 1.0
    lap, degree = normalized_laplacian(adj)
    adj.setflags(write=False)
    lap.setflags(write=False)
    degree.setflags(write=False)
    return MetroGraph(tuple(order), tuple(tuple(line) for line in lines), adj, lap, degree)


def line_edges(lines: Sequence[Sequence[str]]) -> list[tuple[str, str]]:
    return [(a, b) for line in lines for a, b in zip(line[:-1], line[1:])]


def graph_transform(graph: MetroGraph, signal) -> Tensor | np.ndarray:
    """Left-multiply a station-major signal by the normalised Laplacian.

    Accepts ``s x t`` or batched ``B x s x t``; numpy in, numpy out, Tensor in,
    Tensor out (differentiable w.r.t. the signal).
    """
    data = signal.data if isinstance(signal, Tensor) else np.asarray(signal, dtype=float)
    if data.ndim < 2 or data.shape[-2] != graph.n_stations:
        raise DimensionError(f"graph_transform: signal shape {data.shape} does not have {graph.n_stations} station rows")
    if isinstance(signal, Tensor):
        return T.matmul(Tensor(graph.laplacian), signal)
    return graph.laplacian @ data


def synth_topology(n_lines: int, stations_per_line: int, n_transfers: int, seed: int) -> MetroGraph:
    """Chain ``n_lines`` straight lines and merge ``n_transfers`` station pairs across lines.

    The first ``n_lines - 1`` transfers link each new line to an earlier one,
    which keeps the network connected; the rest join random line pairs.
    """
    if n_lines < 1 or stations_per_line < 1 or n_transfers < 0:
        raise ConfigError("synth_topology: n_lines and stations_per_line must be positive, n_transfers >= 0")
    if n_transfers < n_lines - 1:
        raise ConfigError(f"{n_lines} lines need at least {n_lines - 1} transfers to be connected, got {n_transfers}")
    if n_lines == 1 and n_transfers > 0:
        raise ConfigError("a single line cannot have transfer stations")
    if n_transfers > (n_lines - 1) * stations_per_line:
        raise ConfigError(f"too many transfers ({n_transfers}) for {n_lines} lines of {stations_per_line} stations")

    rng = np.random.default_rng(seed)
    width = len(str(stations_per_line))
    lines = [[f"L{k + 1}S{i + 1:0{width}d}" for i in range(stations_per_line)] for k in range(n_lines)]
    free = [set(range(stations_per_line)) for _ in range(n_lines)]

    def merge(a: int, b: int) -> bool:
        if not free[a] or not free[b]:
            return False
        ia = int(rng.choice(sorted(free[a])))
        ib = int(rng.choice(sorted(free[b])))
        free[a].discard(ia)
        free[b].discard(ib)
        lines[b][ib] = lines[a][ia]
        return True

    for k in range(1, n_lines):
        if not merge(int(rng.integers(0, k)), k):
            raise ConfigError("could not place spanning transfers")
    for _ in range(n_transfers - (n_lines - 1)):
        pairs = [(a, b) for a in range(n_lines) for b in range(a + 1, n_lines) if free[a] and free[b]]
        if not pairs:
            raise ConfigError(f"infeasible transfer count {n_transfers}")
        a, b = pairs[int(rng.integers(0, len(pairs)))]
        merge(a, b)
    return build_graph(line_edges(lines), lines)


# -- topology files --------------------------------------------------------------


def write_topology(graph: MetroGraph, edges_path: Path, lines_path: Path) -> None:
    idx = np.argwhere(np.triu(graph.adjacency) > 0)
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_a", "station_b"])
        for i, j in idx:
            w.writerow([graph.stations[i], graph.stations[j]])
    with open(lines_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for k, line in enumerate(graph.lines):
            w.writerow([f"L{k + 1}", *line])


def read_topology(edges_path: Path, lines_path: Path) -> MetroGraph:
    with open(lines_path, newline="") as fh:
        lines = [row[1:] for row in csv.reader(fh) if row and row[0] != "line_id"]
    with open(edges_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["station_a", "station_b"]:
        rows = rows[1:]
    edges = [(r[0], r[1]) for r in rows if r]
    return build_graph(edges, lines)
