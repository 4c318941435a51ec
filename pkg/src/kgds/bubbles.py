"""Sign-region ("bubble") detection, statistics and event tracking on
3-D snapshots indexed ``[z, y, x]``."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from numba import njit

EPS_REL = 1e-6


@dataclass
class LabelGrid:
    labels: np.ndarray
    epsilon: float
    reference_sign: int
    n_components: int
    connectivity: int = 6


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        if ra < rb:
            parent[rb] = ra
        else:
            parent[ra] = rb


@njit(cache=True)
def _label6(mask):
    nz, ny, nx = mask.shape
    flat = mask.ravel()
    N = flat.size
    parent = np.arange(N)
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                p = (k * ny + j) * nx + i
                if not flat[p]:
                    continue
                if i > 0 and flat[p - 1]:
                    _union(parent, p, p - 1)
                if j > 0 and flat[p - nx]:
                    _union(parent, p, p - nx)
                if k > 0 and flat[p - nx * ny]:
                    _union(parent, p, p - nx * ny)
    out = np.zeros(N, dtype=np.int32)
    root_id = np.zeros(N, dtype=np.int32)
    count = 0
    # ids in order of each component's first voxel (x-fastest scan)
    for p in range(N):
        if flat[p]:
            r = _find(parent, p)
            if root_id[r] == 0:
                count += 1
                root_id[r] = count
            out[p] = root_id[r]
    return out.reshape(mask.shape), count


def default_epsilon(psi0: np.ndarray) -> float:
    """``1e-6 * max|psi(., 0)|``."""
    return EPS_REL * float(np.max(np.abs(psi0)))


def reference_sign_of(psi0: np.ndarray) -> int:
    """Sign of the integral of the initial field (+1 when it vanishes)."""
    return -1 if float(np.sum(psi0)) < 0 else 1


def _values(field):
    return np.asarray(getattr(field, "values", field), dtype=float)


def detect_sign_regions(field, epsilon: float, reference_sign: int = 1) -> LabelGrid:
    """Label 6-connected components of ``{sign(psi) = -reference_sign, |psi| > epsilon}``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if reference_sign not in (1, -1):
        raise ValueError("reference_sign must be +1 or -1")
    v = _values(field)
    mask = np.ascontiguousarray((-reference_sign * v) > epsilon)
    labels, count = _label6(mask)
    return LabelGrid(labels, float(epsilon), int(reference_sign), int(count))


def euler_characteristic(mask: np.ndarray) -> int:
    """``V - E + F - C`` of the union of closed unit cubes at the marked voxels."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    C = int(m.sum())
    # faces normal to each axis: shared by the two voxels on either side
    F = 0
    for ax in range(3):
        a = np.swapaxes(m, 0, ax)
        F += int((a[1:] | a[:-1]).sum())
    # edges along each axis: shared by the 4 voxels around them
    E = 0
    for ax in range(3):
        a = np.moveaxis(m, ax, 0)
        E += int((a[:, 1:, 1:] | a[:, :-1, 1:] | a[:, 1:, :-1] | a[:, :-1, :-1]).sum())
    # vertices: shared by 8 voxels
    V = int((m[1:, 1:, 1:] | m[:-1, 1:, 1:] | m[1:, :-1, 1:] | m[1:, 1:, :-1]
             | m[:-1, :-1, 1:] | m[:-1, 1:, :-1] | m[1:, :-1, :-1] | m[:-1, :-1, :-1]).sum())
    return V - E + F - C


@dataclass
class BubbleStats:
    id: int
    volume_voxels: int
    volume_physical: float
    centroid: tuple[float, float, float]
    bbox: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    euler_char: int


def component_stats(grid: LabelGrid, dx: float) -> list[BubbleStats]:
    """Per-component volume, centroid (x, y, z), bbox ((x0, x1), (y0, y1), (z0, z1))
    in voxel indices, and Euler characteristic."""
    labels = grid.labels
    K = grid.n_components
    if K == 0:
        return []
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=K + 1)
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    kk, jj, ii = np.unravel_index(idx, labels.shape)
    sums = [np.bincount(lab, weights=c, minlength=K + 1) for c in (ii, jj, kk)]
    mins = [np.full(K + 1, np.iinfo(np.int64).max) for _ in range(3)]
    maxs = [np.full(K + 1, -1) for _ in range(3)]
    for a, c in enumerate((ii, jj, kk)):
        np.minimum.at(mins[a], lab, c)
        np.maximum.at(maxs[a], lab, c)
    out = []
    for c in range(1, K + 1):
        n = int(counts[c])
        box = tuple((int(mins[a][c]), int(maxs[a][c])) for a in range(3))
        (x0, x1), (y0, y1), (z0, z1) = box
        sub = labels[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] == c
        centroid = tuple(float(sums[a][c] / n * dx) for a in range(3))
        out.append(BubbleStats(c, n, n * dx**3, centroid, box, euler_characteristic(sub)))
    return out


@dataclass
class Event:
    t: float
    kind: str
    ids: list[int]
    volume_voxels: int = 0
    ambiguous: bool = False


@dataclass
class Snapshot:
    t: float
    bubbles: list[dict]

    @property
    def n_bubbles(self) -> int:
        return len(self.bubbles)


@dataclass
class BubbleTimeline:
    snapshots: list[Snapshot] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)

    def first(self, kind: str) -> Event | None:
        return next((e for e in self.events if e.kind == kind), None)

    def to_jsonl(self) -> str:
        lines = []
        for s in self.snapshots:
            lines.append(json.dumps({"t": s.t, "n_bubbles": s.n_bubbles, "bubbles": s.bubbles}))
        for e in self.events:
            lines.append(json.dumps({"event": asdict(e)}))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


class BubbleTracker:
    """Match components of consecutive snapshots by voxel overlap and emit
    formation, merge, split, topology_change and disappearance events."""

    def __init__(self):
        self.timeline = BubbleTimeline()
        self._prev_labels: np.ndarray | None = None
        self._prev_tracks: dict[int, int] = {}
        self._prev_chi: dict[int, int] = {}
        self._next_track = 1
        self._last_t: float | None = None

    def _new_track(self) -> int:
        tid = self._next_track
        self._next_track += 1
        return tid

    def update(self, t: float, grid: LabelGrid, stats: list[BubbleStats]) -> list[Event]:
        if self._last_t is not None and t <= self._last_t:
            raise ValueError("snapshots must be time-ordered")
        self._last_t = t
        events: list[Event] = []
        by_id = {s.id: s for s in stats}
        cur = grid.labels
        tracks: dict[int, int] = {}
        if self._prev_labels is None or not self._prev_tracks:
            for s in stats:
                tracks[s.id] = self._new_track()
                events.append(Event(t, "formation", [tracks[s.id]], s.volume_voxels))
        else:
            both = (cur > 0) & (self._prev_labels > 0)
            pairs, overlap = np.unique(
                np.stack([self._prev_labels[both], cur[both]]), axis=1, return_counts=True)
            prev_of: dict[int, list[tuple[int, int]]] = {}
            cur_of: dict[int, list[tuple[int, int]]] = {}
            for (p, c), w in zip(pairs.T, overlap):
                prev_of.setdefault(int(c), []).append((int(w), int(p)))
                cur_of.setdefault(int(p), []).append((int(w), int(c)))
            # split: one previous component feeding several current ones
            heir: dict[int, int] = {}
            for p, lst in cur_of.items():
                lst.sort(reverse=True)
                heir[p] = lst[0][1]
                if len(lst) > 1:
                    tie = lst[0][0] == lst[1][0]
                    events.append(Event(t, "split", [self._prev_tracks[p]], by_id[lst[0][1]].volume_voxels, tie))
            for s in stats:
                lst = sorted(prev_of.get(s.id, []), reverse=True)
                if not lst:
                    tracks[s.id] = self._new_track()
                    events.append(Event(t, "formation", [tracks[s.id]], s.volume_voxels))
                    continue
                # keep the identity of the largest-overlap parent if this is its heir
                best_p = lst[0][1]
                tie = len(lst) > 1 and lst[0][0] == lst[1][0]
                if heir.get(best_p) == s.id:
                    tracks[s.id] = self._prev_tracks[best_p]
                else:
                    tracks[s.id] = self._new_track()
                if len(lst) > 1:
                    ids = [self._prev_tracks[p] for _, p in lst]
                    events.append(Event(t, "merge", ids, s.volume_voxels, tie))
                elif self._prev_chi.get(best_p) is not None and heir.get(best_p) == s.id \
                        and self._prev_chi[best_p] != s.euler_char:
                    events.append(Event(t, "topology_change", [tracks[s.id]], s.volume_voxels))
            for p, tid in self._prev_tracks.items():
                if p not in cur_of:
                    events.append(Event(t, "disappearance", [tid]))
        self._prev_labels = cur.copy()
        self._prev_tracks = tracks
        self._prev_chi = {s.id: s.euler_char for s in stats}
        bubbles = [{"id": tracks[s.id], "volume_voxels": s.volume_voxels, "volume": s.volume_physical,
                    "centroid": list(s.centroid), "euler_char": s.euler_char} for s in stats]
        self.timeline.snapshots.append(Snapshot(t, bubbles))
        self.timeline.events.extend(events)
        return events


def timeline_events(frames: Iterable[tuple[float, LabelGrid, list[BubbleStats]]]) -> BubbleTimeline:
    """Fold ``(t, labels, stats)`` frames through a BubbleTracker."""
    tracker = BubbleTracker()
    for t, grid, stats in frames:
        tracker.update(t, grid, stats)
    return tracker.timeline


def analyse_field(field, epsilon: float, reference_sign: int, dx: float):
    grid = detect_sign_regions(field, epsilon, reference_sign)
    return grid, component_stats(grid, dx)
