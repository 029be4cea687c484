"""Hierarchical navigable small world graph for approximate nearest neighbor search.

Multi-layer proximity graph over unit vectors, cosine distance. Construction
is single-writer; queries are read-only and may run concurrently against a
frozen graph. Deletions are not supported (rebuild instead).
"""

from __future__ import annotations

import heapq
import math
import random
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"NAVVIDX1"


class DuplicateKey(ValueError):
    pass


class EmptyIndex(LookupError):
    pass


class HnswIndex:
    """In-memory HNSW graph keyed by strings.

    Parameters follow the standard construction: `m` neighbors per node per
    layer (layer 0 keeps 2m), `ef_construction` beam width while inserting,
    level sampling factor 1/ln(m). All randomness comes from `seed`, so equal
    seeds and insert order give identical graphs.
    """

    def __init__(
        self,
        dim: int = 256,
        m: int = 16,
        ef_construction: int = 200,
        seed: int = 0,
    ):
        if m < 2:
            raise ValueError("m must be >= 2")
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.seed = seed
        self.ml = 1.0 / math.log(m)
        self._rng = random.Random(seed)
        self._keys: list[str] = []
        self._id_of: dict[str, int] = {}
        self._levels: list[int] = []
        # _links[node][layer] is a list of neighbor ids, layer 0 first.
        self._links: list[list[list[int]]] = []
        self._entry: int = -1
        self._max_level: int = -1
        self._capacity = 1024
        self._vectors = np.zeros((self._capacity, dim), dtype=np.float64)

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: str) -> bool:
        return key in self._id_of

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    def vector_of(self, key: str) -> np.ndarray:
        return self._vectors[self._id_of[key]].copy()

    def level_of(self, key: str) -> int:
        return self._levels[self._id_of[key]]

    def neighbors_of(self, key: str, layer: int) -> list[str]:
        node = self._id_of[key]
        if layer > self._levels[node]:
            return []
        return [self._keys[i] for i in self._links[node][layer]]

    @property
    def entry_key(self) -> str | None:
        return self._keys[self._entry] if self._entry >= 0 else None

    @property
    def max_level(self) -> int:
        return self._max_level

    def _grow(self, needed: int) -> None:
        if needed <= self._capacity:
            return
        new_cap = max(self._capacity * 2, needed)
        grown = np.zeros((new_cap, self.dim), dtype=np.float64)
        grown[: len(self._keys)] = self._vectors[: len(self._keys)]
        self._vectors = grown
        self._capacity = new_cap

    def _draw_level(self) -> int:
        # 1 - random() lies in (0, 1], so log is finite and level >= 0.
        u = 1.0 - self._rng.random()
        return int(-math.log(u) * self.ml)

    def _distances(self, query: np.ndarray, ids: list[int]) -> np.ndarray:
        return 1.0 - (self._vectors[ids] @ query)

    def _search_layer(
        self, query: np.ndarray, entry_ids: list[int], ef: int, layer: int
    ) -> list[tuple[float, int]]:
        """Beam search on one layer; returns (distance, id) sorted ascending."""
        visited = bytearray(len(self._keys))
        for node in entry_ids:
            visited[node] = 1
        dists = self._distances(query, entry_ids)
        candidates: list[tuple[float, int]] = []  # min-heap
        best: list[tuple[float, int]] = []  # max-heap via negated distance
        for node, dist in zip(entry_ids, dists):
            heapq.heappush(candidates, (dist, node))
            heapq.heappush(best, (-dist, node))
        while len(best) > ef:
            heapq.heappop(best)

        links = self._links
        push, pop, replace = heapq.heappush, heapq.heappop, heapq.heapreplace
        while candidates:
            dist, node = pop(candidates)
            if len(best) >= ef and dist > -best[0][0]:
                break
            fresh = [n for n in links[node][layer] if not visited[n]]
            if not fresh:
                continue
            for n in fresh:
                visited[n] = 1
            for other, d in zip(fresh, self._distances(query, fresh)):
                if len(best) < ef:
                    push(candidates, (d, other))
                    push(best, (-d, other))
                elif d < -best[0][0]:
                    push(candidates, (d, other))
                    replace(best, (-d, other))

        out = [(-nd, node) for nd, node in best]
        out.sort()
        return out

    def _select_neighbors(
        self, candidates: list[tuple[float, int]], m: int
    ) -> list[int]:
        """Diversity-aware neighbor selection.

        Scan candidates by ascending distance and keep one only when it is
        closer to the base point than to every neighbor kept so far; unfilled
        slots are backfilled from the discards by distance. Plain nearest-m
        clusters the links and ruins navigability on high-dimensional data.
        """
        if len(candidates) <= m:
            return [n for _, n in candidates]
        nodes = [n for _, n in candidates]
        base = np.fromiter((d for d, _ in candidates), dtype=np.float64, count=len(nodes))
        cvecs = self._vectors[nodes]
        pair = 1.0 - cvecs @ cvecs.T  # candidate-to-candidate distances
        nearest_kept = np.full(len(nodes), np.inf)
        selected: list[int] = []
        discarded: list[int] = []
        for i in range(len(nodes)):
            if len(selected) == m:
                break
            if base[i] < nearest_kept[i]:
                selected.append(i)
                np.minimum(nearest_kept, pair[i], out=nearest_kept)
            else:
                discarded.append(i)
        for i in discarded:
            if len(selected) == m:
                break
            selected.append(i)
        return [nodes[i] for i in selected]

    def _shrink_links(self, node: int, layer: int, capacity: int) -> None:
        links = self._links[node][layer]
        if len(links) <= capacity:
            return
        dists = self._distances(self._vectors[node], links)
        ranked = sorted(zip(dists, links), key=lambda t: (t[0], t[1]))
        self._links[node][layer] = self._select_neighbors(ranked, capacity)

    def insert(self, key: str, vector: np.ndarray) -> None:
        """Add one unit vector under an unused key."""
        if key in self._id_of:
            raise DuplicateKey(f"key already indexed: {key!r}")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector has shape {vec.shape}, expected ({self.dim},)")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"vector must be unit length, norm was {norm:.6g}")

        node = len(self._keys)
        level = self._draw_level()
        self._grow(node + 1)
        self._vectors[node] = vec
        self._keys.append(key)
        self._id_of[key] = node
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])

        if self._entry < 0:
            self._entry = node
            self._max_level = level
            return

        ep = [self._entry]
        for layer in range(self._max_level, level, -1):
            nearest = self._search_layer(vec, ep, 1, layer)
            ep = [nearest[0][1]]

        for layer in range(min(level, self._max_level), -1, -1):
            candidates = self._search_layer(vec, ep, self.ef_construction, layer)
            capacity = self.m0 if layer == 0 else self.m
            chosen = self._select_neighbors(candidates, capacity)
            self._links[node][layer] = list(chosen)
            for other in chosen:
                self._links[other][layer].append(node)
                self._shrink_links(other, layer, capacity)
            ep = [n for _, n in candidates]

        if level > self._max_level:
            self._entry = node
            self._max_level = level

    def knn(
        self, query: np.ndarray, k: int, ef: int | None = None
    ) -> list[tuple[str, float]]:
        """Top-k keys by cosine similarity, descending; ties break on key."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._keys:
            raise EmptyIndex("index has no vectors")
        if ef is None:
            ef = max(64, 2 * k)
        ef = max(ef, k)
        q = np.asarray(query, dtype=np.float64)

        ep = [self._entry]
        for layer in range(self._max_level, 0, -1):
            nearest = self._search_layer(q, ep, 1, layer)
            ep = [nearest[0][1]]
        found = self._search_layer(q, ep, ef, 0)

        # Re-score the beam pairwise before the final cut: the batched
        # distance kernel may round differently across batch shapes, and the
        # returned order must depend only on (vector, query) so equal
        # distances genuinely fall through to the key tie-break.
        rescored = sorted(
            (1.0 - float(np.dot(self._vectors[node], q)), self._keys[node])
            for _, node in found
        )
        return [(key, 1.0 - dist) for dist, key in rescored[:k]]

    def check_structure(self) -> list[str]:
        """Scan capacity and layer-membership invariants; returns violations."""
        problems = []
        for node, links in enumerate(self._links):
            level = self._levels[node]
            if len(links) != level + 1:
                problems.append(f"node {node} has {len(links)} layers, level {level}")
            for layer, neigh in enumerate(links):
                cap = self.m0 if layer == 0 else self.m
                if len(neigh) > cap:
                    problems.append(f"node {node} layer {layer} degree {len(neigh)} > {cap}")
                if len(set(neigh)) != len(neigh):
                    problems.append(f"node {node} layer {layer} has duplicate links")
                for other in neigh:
                    if self._levels[other] < layer:
                        problems.append(
                            f"node {node} layer {layer} links to {other} below its level"
                        )
        return problems

    def layer0_connected(self) -> bool:
        """True if every node is reachable from the entry point on layer 0."""
        if not self._keys:
            return True
        seen = {self._entry}
        stack = [self._entry]
        while stack:
            node = stack.pop()
            for other in self._links[node][0]:
                if other not in seen:
                    seen.add(other)
                    stack.append(other)
        return len(seen) == len(self._keys)

    # Binary persistence. Layout (all integers little-endian):
    #   magic "NAVVIDX1" | u32 dim | u32 m | u32 ef_construction | i64 seed
    #   | u32 node_count | i64 entry_id | i32 max_level
    #   then per node: u32 key_len | key utf-8 | u32 level
    #     | dim float64 vector | per layer 0..level: u32 degree | u32 ids
    def save(self, fh: BinaryIO) -> None:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIq", self.dim, self.m, self.ef_construction, self.seed))
        fh.write(struct.pack("<Iqi", len(self._keys), self._entry, self._max_level))
        for node, key in enumerate(self._keys):
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", self._levels[node]))
            fh.write(self._vectors[node].astype("<f8").tobytes())
            for layer_links in self._links[node]:
                fh.write(struct.pack("<I", len(layer_links)))
                fh.write(struct.pack(f"<{len(layer_links)}I", *layer_links))

    @classmethod
    def load(cls, fh: BinaryIO) -> "HnswIndex":
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"bad index header: {magic!r}")
        dim, m, ef_construction, seed = struct.unpack("<IIIq", fh.read(20))
        count, entry, max_level = struct.unpack("<Iqi", fh.read(16))
        index = cls(dim=dim, m=m, ef_construction=ef_construction, seed=seed)
        index._grow(count)
        for node in range(count):
            (key_len,) = struct.unpack("<I", fh.read(4))
            key = fh.read(key_len).decode("utf-8")
            (level,) = struct.unpack("<I", fh.read(4))
            vec = np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64)
            links = []
            for _ in range(level + 1):
                (degree,) = struct.unpack("<I", fh.read(4))
                links.append(list(struct.unpack(f"<{degree}I", fh.read(4 * degree))))
            index._keys.append(key)
            index._id_of[key] = node
            index._levels.append(level)
            index._links.append(links)
            index._vectors[node] = vec
        index._entry = entry
        index._max_level = max_level
        # Replay level draws so later inserts continue the same random stream.
        for _ in range(count):
            index._rng.random()
        return index
