"""Kinematic tree construction from the medial axis, plus post-training
skeleton simplification.

Bone indexing convention used throughout the package: joint 0 is the root;
bone b is the edge (parents[b+1] -> b+1), i.e. each non-root joint owns the
bone arriving at it. A bone's rotation pivots at its parent joint's position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import DataError
from .voxels import BinaryVolume

DEFAULT_BONE_LENGTH = 10
DEFAULT_STATIC_THRESHOLD_DEG = 20.0
STATIC_FRACTION = 0.05

_NEIGHBOR_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
)


@dataclass
class MedialGraph:
    points: np.ndarray  # (M, 3) world coordinates of medial voxels
    ijk: np.ndarray  # (M, 3) voxel indices
    neighbors: list[np.ndarray]  # 26-neighborhood adjacency, per point, ascending

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Skeleton:
    joints: np.ndarray  # (J, 3)
    parents: np.ndarray  # (J,) int; parents[0] == -1 (root)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        validate_tree(self.parents)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_bones(self) -> int:
        return len(self.joints) - 1

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(parent_joint, joint) per bone; bone b belongs to joint b+1."""
        return [(int(self.parents[j]), j) for j in range(1, self.n_joints)]

    def children(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.parents == j)

    def end_effectors(self) -> np.ndarray:
        """Joints with no children (BFS branch terminals)."""
        has_child = np.zeros(self.n_joints, dtype=bool)
        has_child[self.parents[self.parents >= 0]] = True
        return np.flatnonzero(~has_child)

    def to_dict(self) -> dict:
        return {
            "joints": self.joints.tolist(),
            "parents": self.parents.tolist(),
            "bones": [list(b) for b in self.bones],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(np.asarray(d["joints"]), np.asarray(d["parents"]))


@dataclass
class StaticityReport:
    static: np.ndarray  # (J,) bool; root entry refers to the root rotation
    max_deviation_deg: np.ndarray  # (J,)

    def bone_static(self, b: int) -> bool:
        return bool(self.static[b + 1])


@dataclass
class SimplifiedModel:
    skeleton: Skeleton
    weights: np.ndarray  # (N, C) normalized; C = new bones + optional root column
    has_root_column: bool
    bone_remap: np.ndarray  # (B_old,) old bone -> weight column index
    kept_joints: np.ndarray  # old joint index per new joint
    bone_source: np.ndarray  # (B_new,) old bone index each new bone derives from


def validate_tree(parents: np.ndarray) -> None:
    parents = np.asarray(parents)
    roots = np.flatnonzero(parents < 0)
    if len(roots) != 1 or roots[0] != 0:
        raise DataError(f"skeleton must have exactly one root at index 0, got roots {roots}")
    n = len(parents)
    for j in range(1, n):
        seen = set()
        k = j
        while k != 0:
            if k in seen or not (0 <= parents[k] < n):
                raise DataError(f"parent links contain a cycle or bad index at joint {j}")
            seen.add(k)
            k = int(parents[k])


# static neighborhood tables for the simple-point test (27-cell block,
# center at offset (1,1,1)); indices address the 26 non-center positions
_POS26 = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
_ADJ26 = [
    [j for j, q in enumerate(_POS26) if j != i and max(abs(q[0] - p[0]), abs(q[1] - p[1]), abs(q[2] - p[2])) <= 1]
    for i, p in enumerate(_POS26)
]
_N18 = [i for i, p in enumerate(_POS26) if abs(p[0]) + abs(p[1]) + abs(p[2]) <= 2]
_ADJ6_N18 = {
    i: [j for j in _N18 if abs(_POS26[j][0] - _POS26[i][0]) + abs(_POS26[j][1] - _POS26[i][1]) + abs(_POS26[j][2] - _POS26[i][2]) == 1]
    for i in _N18
}
_FACE = [i for i, p in enumerate(_POS26) if abs(p[0]) + abs(p[1]) + abs(p[2]) == 1]


def _is_simple(pattern: int, cache: dict[int, bool]) -> bool:
    """True if deleting the center voxel preserves local topology.

    pattern: 26-bit occupancy of the neighborhood. Standard characterization:
    the object neighbors form one 26-connected component, and the background
    within the 18-neighborhood forms one 6-connected component touching a
    face neighbor.
    """
    hit = cache.get(pattern)
    if hit is not None:
        return hit
    obj = [i for i in range(26) if pattern >> i & 1]
    ok = False
    if obj:
        seen = {obj[0]}
        stack = [obj[0]]
        while stack:
            for j in _ADJ26[stack.pop()]:
                if pattern >> j & 1 and j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(seen) == len(obj):
            bg_faces = [i for i in _FACE if not pattern >> i & 1]
            if bg_faces:
                comp = {bg_faces[0]}
                stack = [bg_faces[0]]
                while stack:
                    for j in _ADJ6_N18[stack.pop()]:
                        if not pattern >> j & 1 and j not in comp:
                            comp.add(j)
                            stack.append(j)
                ok = all(f in comp for f in bg_faces)
    cache[pattern] = ok
    return ok


def _neighborhood_pattern(work: np.ndarray, x: int, y: int, z: int) -> int:
    pattern = 0
    for i, (dx, dy, dz) in enumerate(_POS26):
        if work[x + dx, y + dy, z + dz]:
            pattern |= 1 << i
    return pattern


def thin_volume(mask: np.ndarray) -> np.ndarray:
    """Sequential topology-preserving thinning.

    Deletes simple border voxels in increasing distance-transform order until
    stable. Ridge voxels of the distance transform (centers of maximal balls)
    are anchored: they pin the medial curve so it cannot retract from rounded
    tips, while unanchored spurs erode away. Every single deletion preserves
    connectivity and loop structure, so component and cycle counts survive.
    """
    from scipy.ndimage import maximum_filter

    work = np.pad(np.asarray(mask, dtype=bool), 1)
    edt0 = distance_transform_edt(work)
    anchors = work & (edt0 >= maximum_filter(edt0, size=3))
    cache: dict[int, bool] = {}
    while True:
        edt = distance_transform_edt(work)
        coords = np.argwhere(work & ~anchors)
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], edt[tuple(coords.T)]))
        changed = False
        for i in order:
            x, y, z = coords[i]
            pattern = _neighborhood_pattern(work, x, y, z)
            if pattern.bit_count() == 26:  # interior, never deletable
                continue
            if _is_simple(pattern, cache):
                work[x, y, z] = False
                changed = True
        if not changed:
            return work[1:-1, 1:-1, 1:-1]


def medial_axis_3d(volume: BinaryVolume) -> MedialGraph:
    """Topology-preserving 3D thinning of the occupancy mask.

    Iteratively removes simple border voxels until stable; the result is a
    thin connected subset preserving component and loop counts. A single
    occupied voxel is its own medial axis.
    """
    mask = volume.mask
    if not mask.any():
        raise DataError("cannot skeletonize an empty volume")
    thin = thin_volume(mask)
    ijk = np.argwhere(thin)
    index_of = {tuple(p): i for i, p in enumerate(ijk)}
    neighbors = []
    for p in ijk:
        nbr = []
        for off in _NEIGHBOR_OFFSETS:
            q = tuple(p + off)
            hit = index_of.get(q)
            if hit is not None:
                nbr.append(hit)
        neighbors.append(np.asarray(sorted(nbr), dtype=np.int64))
    return MedialGraph(points=volume.world_coords(ijk), ijk=ijk, neighbors=neighbors)


def select_root(graph: MedialGraph) -> int:
    """Medial point minimizing the summed Euclidean distance to all others."""
    if len(graph) == 0:
        raise DataError("empty medial graph")
    pts = graph.points
    totals = np.zeros(len(pts))
    for i in range(len(pts)):
        totals[i] = np.linalg.norm(pts - pts[i], axis=1).sum()
    return int(np.argmin(totals))  # argmin takes the lowest index on ties


def prune_disconnected(graph: MedialGraph, root: int) -> tuple[MedialGraph, int]:
    """Keep only medial points reachable from the root."""
    keep = _bfs_reachable(graph, root)
    if keep.all():
        return graph, root
    old_to_new = -np.ones(len(graph), dtype=np.int64)
    kept = np.flatnonzero(keep)
    old_to_new[kept] = np.arange(len(kept))
    neighbors = [old_to_new[graph.neighbors[i]][old_to_new[graph.neighbors[i]] >= 0] for i in kept]
    pruned = MedialGraph(points=graph.points[kept], ijk=graph.ijk[kept], neighbors=neighbors)
    return pruned, int(old_to_new[root])


def _bfs_reachable(graph: MedialGraph, root: int) -> np.ndarray:
    seen = np.zeros(len(graph), dtype=bool)
    seen[root] = True
    frontier = [root]
    while frontier:
        nxt = []
        for i in frontier:
            for j in graph.neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    nxt.append(int(j))
        frontier = nxt
    return seen


def extract_joints(graph: MedialGraph, root: int, bone_length: int = DEFAULT_BONE_LENGTH) -> Skeleton:
    """Breadth-first joint placement.

    A medial point becomes a joint once its geodesic distance (edge count)
    from the preceding joint on its BFS path exceeds bone_length; its parent
    is that preceding joint. A candidate 26-adjacent to a just-created joint
    adopts it instead of duplicating it (the medial axis may be two voxels
    wide, putting parallel strands at the same depth). Joints where BFS
    branches terminate are the skeleton's end effectors.
    """
    joint_positions = [graph.points[root]]
    joint_parent = [-1]
    # per medial point: (preceding joint id, edge count since that joint)
    state: dict[int, tuple[int, int]] = {root: (0, 0)}
    joint_at: dict[int, int] = {root: 0}  # medial point -> joint it hosts
    seen = np.zeros(len(graph), dtype=bool)
    seen[root] = True
    frontier = [root]
    while frontier:
        nxt = []
        for i in frontier:
            pj, dist = state[i]
            for j in graph.neighbors[i]:
                if seen[j]:
                    continue
                seen[j] = True
                d = dist + 1
                if d > bone_length:
                    adopted = next((joint_at[n] for n in graph.neighbors[j] if n in joint_at), None)
                    if adopted is not None:
                        state[int(j)] = (adopted, 1)
                    else:
                        jid = len(joint_positions)
                        joint_positions.append(graph.points[j])
                        joint_parent.append(pj)
                        joint_at[int(j)] = jid
                        state[int(j)] = (jid, 0)
                else:
                    state[int(j)] = (pj, d)
                nxt.append(int(j))
        frontier = nxt
    return Skeleton(np.asarray(joint_positions), np.asarray(joint_parent))


def detect_static_joints(
    skeleton: Skeleton,
    bone_angles: np.ndarray,
    root_angles: np.ndarray,
    threshold_deg: float = DEFAULT_STATIC_THRESHOLD_DEG,
) -> StaticityReport:
    """Flag joints whose bone angle exceeds the threshold in <= 5% of frames.

    bone_angles: (T, B) local bone rotation angles in radians over all
    training timestamps; root_angles: (T,) root rotation angles. The deviation
    measure is the local angle magnitude relative to the rest pose. A joint is
    moving only when it exceeds the threshold in strictly more than 5% of
    timestamps.
    """
    bone_angles = np.atleast_2d(np.asarray(bone_angles, dtype=np.float64))
    n_frames = bone_angles.shape[0]
    if bone_angles.shape[1] != skeleton.n_bones:
        raise DataError(
            f"angle table has {bone_angles.shape[1]} bones, skeleton has {skeleton.n_bones}"
        )
    deg = np.degrees(np.abs(np.column_stack([np.asarray(root_angles).reshape(n_frames), bone_angles])))
    exceed = (deg > threshold_deg).sum(axis=0)
    moving = exceed > STATIC_FRACTION * n_frames
    return StaticityReport(static=~moving, max_deviation_deg=deg.max(axis=0))


def simplify(skeleton: Skeleton, weights: np.ndarray, report: StaticityReport) -> SimplifiedModel:
    """Merge static bones' skinning mass upward and prune redundant joints.

    Weight columns of static bones move to their nearest moving ancestor bone,
    or to a dedicated root column when the whole chain up to the root is
    static. A joint survives when its own bone moves or it is the pivot of a
    moving child bone; the root always survives. Static end effectors and
    static pass-through joints are removed, collapsing chains into the longest
    possible bone. Per-point weight mass is conserved exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n_joints = skeleton.n_joints
    n_bones = skeleton.n_bones
    if weights.shape[1] != n_bones:
        raise DataError(f"weights have {weights.shape[1]} columns, skeleton has {n_bones} bones")
    if len(report.static) != n_joints:
        raise DataError("staticity report does not match skeleton")

    bone_moving = np.array([not report.bone_static(b) for b in range(n_bones)], dtype=bool)

    def governor(b: int) -> int:
        """First moving ancestor bone of b (b itself included); -1 = root."""
        j = b + 1
        while j != 0:
            bb = j - 1
            if bone_moving[bb]:
                return bb
            j = int(skeleton.parents[j])
        return -1

    gov = np.array([governor(b) for b in range(n_bones)], dtype=np.int64)
    has_root_column = bool(np.any(gov < 0))

    # joints kept: root; any joint whose bone moves; any pivot of a moving child bone
    keep = np.zeros(n_joints, dtype=bool)
    keep[0] = True
    for b in range(n_bones):
        if bone_moving[b]:
            keep[b + 1] = True
            keep[skeleton.parents[b + 1]] = True
    kept_joints = np.flatnonzero(keep)
    old_to_new = -np.ones(n_joints, dtype=np.int64)
    old_to_new[kept_joints] = np.arange(len(kept_joints))

    new_parents = np.empty(len(kept_joints), dtype=np.int64)
    new_parents[0] = -1
    for new_j, old_j in enumerate(kept_joints[1:], start=1):
        anc = int(skeleton.parents[old_j])
        while not keep[anc]:
            anc = int(skeleton.parents[anc])
        new_parents[new_j] = old_to_new[anc]
    new_skeleton = Skeleton(skeleton.joints[kept_joints], new_parents)

    n_new_bones = new_skeleton.n_bones
    offset = 1 if has_root_column else 0
    bone_source = kept_joints[1:] - 1  # old bone feeding each new bone
    old_to_column = -np.ones(n_bones, dtype=np.int64)
    for new_b, old_b in enumerate(bone_source):
        old_to_column[old_b] = new_b + offset

    merged = np.zeros((weights.shape[0], n_new_bones + offset))
    remap = np.empty(n_bones, dtype=np.int64)
    for b in range(n_bones):
        col = 0 if gov[b] < 0 else int(old_to_column[gov[b]])
        remap[b] = col
        merged[:, col] += weights[:, b]

    return SimplifiedModel(
        skeleton=new_skeleton,
        weights=merged,
        has_root_column=has_root_column,
        bone_remap=remap,
        kept_joints=kept_joints,
        bone_source=bone_source,
    )


def remap_report(report: StaticityReport, kept_joints: np.ndarray) -> StaticityReport:
    """Restrict a staticity report to the surviving joints of a simplification."""
    return StaticityReport(
        static=report.static[kept_joints].copy(),
        max_deviation_deg=report.max_deviation_deg[kept_joints].copy(),
    )
