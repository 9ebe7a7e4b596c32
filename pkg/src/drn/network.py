"""UAV communication graph and measurement dissemination with hop aging.

Each step every UAV emits one packet (its measurement, or a no-measurement
marker, always together with its pose) and floods it through the network.
Communication is lossless and instantaneous within the hop limit; latency is
modeled as information age instead: a packet that traveled h hops arrives
with hop_age = h. Entries beyond the hop limit keep the most recent packet
previously received, aging by one per elapsed step, so temporarily
disconnected UAVs can keep planning against stale peer poses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .sensing import Measurement

__all__ = [
    "CommGraph",
    "Packet",
    "KnowledgeEntry",
    "KnowledgeBase",
    "build_graph",
    "hop_distance",
    "disseminate",
]


@dataclass(frozen=True)
class Packet:
    """What one UAV shares per step: pose always, measurement when available."""

    origin_id: int
    pose: np.ndarray  # (3,)
    step: int
    measurement: Measurement | None = None


@dataclass(frozen=True)
class KnowledgeEntry:
    origin_id: int
    pose: np.ndarray
    step: int  # step the packet was generated at
    hop_age: int
    measurement: Measurement | None = None

    def aged(self) -> "KnowledgeEntry":
        return KnowledgeEntry(self.origin_id, self.pose, self.step,
                              self.hop_age + 1, self.measurement)


@dataclass
class KnowledgeBase:
    """Everything UAV ``owner`` knows about the fleet at the current step."""

    owner: int
    entries: dict[int, KnowledgeEntry]

    def fresh_measurements(self, step: int) -> list[Measurement]:
        """Measurements generated this step (any hop count within the limit)."""
        out = []
        for entry in self.entries.values():
            if entry.step == step and entry.measurement is not None:
                m = entry.measurement
                if m.hop_age != entry.hop_age:
                    m = Measurement(m.origin_id, m.origin_pose, m.step,
                                    hop_age=entry.hop_age, range=m.range,
                                    azimuth=m.azimuth, elevation=m.elevation,
                                    radial_speed=m.radial_speed)
                out.append(m)
        return out

    def peer_poses(self) -> list[np.ndarray]:
        return [e.pose for i, e in sorted(self.entries.items()) if i != self.owner]

    def fresh_count(self, step: int) -> int:
        return sum(1 for e in self.entries.values() if e.step == step)


class CommGraph:
    """Undirected proximity graph over UAV ids."""

    def __init__(self, ids: list[int], edges: set[frozenset]):
        self.ids = list(ids)
        self.adjacency: dict[int, list[int]] = {i: [] for i in ids}
        for edge in edges:
            a, b = sorted(edge)
            self.adjacency[a].append(b)
            self.adjacency[b].append(a)
        for i in self.adjacency:
            self.adjacency[i].sort()

    def neighbors(self, i: int) -> list[int]:
        return self.adjacency[i]


def build_graph(poses, comm_range: float) -> CommGraph:
    """Connect every pair of UAVs within comm_range (boundary inclusive)."""
    ids = [p.id for p in poses]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate UAV ids in {ids}")
    positions = {p.id: np.asarray(p.position, dtype=float) for p in poses}
    edges = set()
    for idx, i in enumerate(ids):
        for j in ids[idx + 1:]:
            if np.linalg.norm(positions[i] - positions[j]) <= comm_range:
                edges.add(frozenset((i, j)))
    return CommGraph(ids, edges)


def hop_distance(graph: CommGraph, i: int, j: int) -> int | None:
    """Shortest-path hop count from i to j; None when unreachable."""
    if i not in graph.adjacency or j not in graph.adjacency:
        raise KeyError(f"unknown UAV id in hop_distance({i}, {j})")
    if i == j:
        return 0
    seen = {i: 0}
    queue = deque([i])
    while queue:
        node = queue.popleft()
        for nb in graph.neighbors(node):
            if nb not in seen:
                seen[nb] = seen[node] + 1
                if nb == j:
                    return seen[nb]
                queue.append(nb)
    return None


def _hops_from(graph: CommGraph, source: int, hop_limit: int) -> dict[int, int]:
    # Truncated BFS: everything reachable within hop_limit.
    seen = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        if seen[node] == hop_limit:
            continue
        for nb in graph.neighbors(node):
            if nb not in seen:
                seen[nb] = seen[node] + 1
                queue.append(nb)
    return seen


def disseminate(packets: dict[int, Packet], graph: CommGraph, hop_limit: int = 1,
                previous: dict[int, KnowledgeBase] | None = None,
                stale_cache: bool = True) -> dict[int, KnowledgeBase]:
    """Flood this step's packets and return each UAV's knowledge base.

    UAV i receives packet j iff hop_distance(i, j) <= hop_limit, stored with
    hop_age equal to the hop distance. With stale_cache enabled, origins out
    of reach keep their previously received packet aged by one step.
    """
    if hop_limit < 1:
        raise ValueError("hop_limit must be >= 1")
    if set(packets) != set(graph.ids):
        raise ValueError("need exactly one packet per UAV in the graph")
    out: dict[int, KnowledgeBase] = {}
    for i in graph.ids:
        entries: dict[int, KnowledgeEntry] = {}
        if stale_cache and previous is not None and i in previous:
            for j, entry in previous[i].entries.items():
                entries[j] = entry.aged()
        for j, hops in _hops_from(graph, i, hop_limit).items():
            p = packets[j]
            entries[j] = KnowledgeEntry(j, p.pose, p.step, hops, p.measurement)
        out[i] = KnowledgeBase(owner=i, entries=entries)
    return out
