"""Affine progressive meshes: decimate, stylize coarse, reinflate.

Decimation runs quadric-error-ordered edge collapses under the link
condition; each collapse inserts a fresh vertex and records the rest
displacements to the removed pair together with an affine-fit matrix
A = (Q Q^T)^-1 Q over the post-collapse one-ring (Tikhonov-regularized when
near singular).  Replaying the splits on the deformed coarse mesh places
each removed vertex through the best-fit affine map of its ring, which
recovers global affine transformations losslessly and smooth deformations
approximately.  The collapse log serializes to a versioned binary container
so pre-processing is cacheable across runs.
"""
from __future__ import annotations

import heapq
import struct
import time
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, TriangleMesh, face_areas_normals, validate
from .solver import (
    AdmmState, Constraints, StylizeParams, StylizeResult, stylize,
)
from .style import StyleControls

MAGIC = b"CUBILOG\0"
VERSION = 1

TIKHONOV_REL = 1e-8       # epsilon = TIKHONOV_REL * trace(Q Q^T)
SINGULAR_REL = 1e-10      # regularize when lambda_min < SINGULAR_REL * trace


@dataclass
class CollapseRecord:
    inserted: int              # id of the vertex created by the collapse
    removed_j: int
    removed_k: int
    disp_j: np.ndarray         # rest displacement p_j - p_i (3,)
    disp_k: np.ndarray
    neighbors: np.ndarray      # post-collapse one-ring ids, sorted (nn,)
    affine: np.ndarray         # (3, nn)
    tikhonov: bool
    face_patch: list           # (face_id, (a, b, c), died) triples


@dataclass
class CollapseLog:
    records: list
    coarse_mesh: TriangleMesh
    coarse_vertex_ids: np.ndarray   # expanded id of each coarse vertex
    alive_face_ids: np.ndarray      # original face slots still alive
    n_vertices_orig: int
    n_faces_orig: int
    target_faces: int
    fingerprint: str

    @property
    def n_expanded(self) -> int:
        return self.n_vertices_orig + len(self.records)

    def vertex_map_to_coarse(self) -> dict[int, int]:
        """Original vertex id -> coarse contiguous id via the collapse chain."""
        parent: dict[int, int] = {}
        for rec in self.records:
            parent[rec.removed_j] = rec.inserted
            parent[rec.removed_k] = rec.inserted
        coarse_index = {int(e): c for c, e in enumerate(self.coarse_vertex_ids)}
        out: dict[int, int] = {}
        for v in range(self.n_vertices_orig):
            w = v
            while w in parent:
                w = parent[w]
            out[v] = coarse_index[w]
        return out


def affine_fit(Q: np.ndarray, return_flag: bool = False):
    """A = (Q Q^T)^-1 Q with scale-aware Tikhonov regularization.

    Q is 3-by-n (ring displacement columns).  Regularization activates when
    the smallest eigenvalue of Q Q^T falls below 1e-10 of its trace, e.g. in
    planar regions.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != 3 or Q.shape[1] < 1:
        raise ValueError("Q must be 3-by-n with n >= 1")
    G = Q @ Q.T
    tr = float(np.trace(G))
    if tr <= 0.0:
        A = np.zeros_like(Q)
        return (A, True) if return_flag else A
    lam_min = float(np.linalg.eigvalsh(G)[0])
    tik = lam_min < SINGULAR_REL * tr
    if tik:
        G = G + (TIKHONOV_REL * tr) * np.eye(3)
    A = np.linalg.solve(G, Q)
    return (A, tik) if return_flag else A


# ---------------------------------------------------------------------------
# Decimation
# ---------------------------------------------------------------------------

def _face_quadric(p0, p1, p2):
    nrm = np.cross(p1 - p0, p2 - p0)
    area = 0.5 * np.linalg.norm(nrm)
    if area <= 0:
        return np.zeros((4, 4))
    n = nrm / (2.0 * area)
    d = -float(n @ p0)
    plane = np.array([n[0], n[1], n[2], d])
    return area * np.outer(plane, plane)


def _optimal_point(K, pu, pv):
    A = K[:3, :3]
    b = K[:3, 3]
    scale = float(np.abs(A).max())
    if scale > 0 and abs(np.linalg.det(A)) > 1e-10 * scale ** 3:
        p = np.linalg.solve(A, -b)
    else:
        p = 0.5 * (pu + pv)
    cost = float(p @ A @ p + 2.0 * b @ p + K[3, 3])
    return p, max(cost, 0.0)


class _DecimationMesh:
    """Mutable connectivity scratchpad with expanded vertex ids."""

    def __init__(self, mesh: TriangleMesh):
        self.positions: list[np.ndarray] = [p.copy() for p in mesh.positions]
        self.faces = mesh.faces.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.vertex_alive = [True] * len(self.positions)
        self.incident: list[set[int]] = [set() for _ in range(len(self.positions))]
        for fi, f in enumerate(self.faces):
            for v in f:
                self.incident[v].add(fi)
        areas, _ = face_areas_normals(mesh.positions, mesh.faces)
        self.quadrics: list[np.ndarray] = [np.zeros((4, 4)) for _ in range(len(self.positions))]
        for fi, (a, b, c) in enumerate(mesh.faces):
            K = _face_quadric(mesh.positions[a], mesh.positions[b], mesh.positions[c])
            for v in (a, b, c):
                self.quadrics[v] = self.quadrics[v] + K
        self.n_alive_faces = len(self.faces)

    def neighbors(self, v: int) -> set[int]:
        out: set[int] = set()
        for fi in self.incident[v]:
            for w in self.faces[fi]:
                if w != v:
                    out.add(int(w))
        return out

    def shared_faces(self, u: int, v: int) -> list[int]:
        return sorted(self.incident[u] & self.incident[v])

    def is_boundary_vertex(self, v: int) -> bool:
        counts: dict[tuple[int, int], int] = {}
        for fi in self.incident[v]:
            a, b, c = self.faces[fi]
            for x, y in ((a, b), (b, c), (c, a)):
                if x == v or y == v:
                    key = (x, y) if x < y else (y, x)
                    counts[key] = counts.get(key, 0) + 1
        return any(c == 1 for c in counts.values())

    def link_condition(self, u: int, v: int) -> bool:
        shared = self.shared_faces(u, v)
        if not shared:
            return False
        opposite = set()
        for fi in shared:
            for w in self.faces[fi]:
                if w != u and w != v:
                    opposite.add(int(w))
        common = self.neighbors(u) & self.neighbors(v)
        if common != opposite:
            return False
        # interior edge between two boundary vertices would pinch the surface
        if len(shared) == 2 and self.is_boundary_vertex(u) and self.is_boundary_vertex(v):
            return False
        # do not collapse a component down to a degenerate pocket
        if len(self.incident[u] | self.incident[v]) <= len(shared) + 1:
            return False
        return True

    def geometric_guard(self, u: int, v: int, p_new: np.ndarray, area_floor: float) -> bool:
        dying = set(self.shared_faces(u, v))
        for fi in (self.incident[u] | self.incident[v]) - dying:
            a, b, c = (int(x) for x in self.faces[fi])
            old = [np.asarray(self.positions[x]) for x in (a, b, c)]
            new = [p_new if x in (u, v) else np.asarray(self.positions[x]) for x in (a, b, c)]
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            n_new = np.cross(new[1] - new[0], new[2] - new[0])
            a_new = 0.5 * np.linalg.norm(n_new)
            if a_new <= area_floor:
                return False
            if float(n_old @ n_new) < 0.0:
                return False
        return True

    def collapse(self, u: int, v: int, p_new: np.ndarray):
        t = len(self.positions)
        self.positions.append(np.asarray(p_new, dtype=np.float64))
        self.vertex_alive.append(True)
        self.quadrics.append(self.quadrics[u] + self.quadrics[v])
        self.incident.append(set())

        patch = []
        died = 0
        for fi in sorted(self.incident[u] | self.incident[v]):
            face = self.faces[fi]
            old = (int(face[0]), int(face[1]), int(face[2]))
            has_u = u in old
            has_v = v in old
            if has_u and has_v:
                patch.append((fi, old, True))
                self.face_alive[fi] = False
                died += 1
                for w in old:
                    self.incident[w].discard(fi)
            else:
                patch.append((fi, old, False))
                self.faces[fi] = [t if x in (u, v) else x for x in old]
                for w in old:
                    if w in (u, v):
                        self.incident[w].discard(fi)
                self.incident[t].add(fi)
        self.vertex_alive[u] = False
        self.vertex_alive[v] = False
        self.n_alive_faces -= died
        return t, patch


def decimate(mesh: TriangleMesh, target_faces: int, *, floor: int = 500,
             audit_manifold: bool = False):
    """Quadric-error edge collapses down to (at most) ``target_faces``.

    Returns ``(coarse_mesh, log)``.  Raises when the target is not below the
    current face count or sits under the safety floor; stops early (and says
    so in the log) if no further collapse preserves manifoldness.
    """
    if target_faces >= mesh.n_faces:
        raise ValueError(f"target {target_faces} must be below face count {mesh.n_faces}")
    if target_faces < floor:
        raise ValueError(f"target {target_faces} is below the floor {floor}; "
                         "pass floor= explicitly for very coarse meshes")

    dm = _DecimationMesh(mesh)
    area_floor = 1e-14 * mesh.bbox_diagonal ** 2

    heap: list[tuple[float, tuple[int, int]]] = []
    edges = set()
    for f in mesh.faces:
        a, b, c = (int(x) for x in f)
        for x, y in ((a, b), (b, c), (c, a)):
            key = (x, y) if x < y else (y, x)
            edges.add(key)
    for (x, y) in sorted(edges):
        K = dm.quadrics[x] + dm.quadrics[y]
        _, cost = _optimal_point(K, np.asarray(dm.positions[x]), np.asarray(dm.positions[y]))
        heapq.heappush(heap, (cost, (x, y)))

    records: list[CollapseRecord] = []
    while dm.n_alive_faces > target_faces and heap:
        cost, (u, v) = heapq.heappop(heap)
        if not (dm.vertex_alive[u] and dm.vertex_alive[v]):
            continue
        if not dm.shared_faces(u, v):
            continue
        if not dm.link_condition(u, v):
            continue
        K = dm.quadrics[u] + dm.quadrics[v]
        pu, pv = np.asarray(dm.positions[u]), np.asarray(dm.positions[v])
        p_new, _ = _optimal_point(K, pu, pv)
        if not dm.geometric_guard(u, v, p_new, area_floor):
            continue

        t, patch = dm.collapse(u, v, p_new)
        ring = sorted(dm.neighbors(t))
        Q = np.stack([np.asarray(dm.positions[w]) - p_new for w in ring], axis=1)
        A, tik = affine_fit(Q, return_flag=True)
        records.append(CollapseRecord(
            inserted=t, removed_j=u, removed_k=v,
            disp_j=pu - p_new, disp_k=pv - p_new,
            neighbors=np.array(ring, dtype=np.int64),
            affine=A, tikhonov=tik, face_patch=patch,
        ))
        for w in ring:
            K2 = dm.quadrics[t] + dm.quadrics[w]
            key = (t, w) if t < w else (w, t)
            _, cost2 = _optimal_point(K2, np.asarray(dm.positions[t]), np.asarray(dm.positions[w]))
            heapq.heappush(heap, (cost2, key))
        if audit_manifold:
            _audit_manifold(dm)

    alive_v = np.array([i for i, a in enumerate(dm.vertex_alive) if a], dtype=np.int64)
    remap = {int(e): c for c, e in enumerate(alive_v)}
    alive_f = np.nonzero(dm.face_alive)[0].astype(np.int64)
    coarse_faces = np.array(
        [[remap[int(x)] for x in dm.faces[fi]] for fi in alive_f], dtype=np.int64)
    coarse_positions = np.array([dm.positions[int(e)] for e in alive_v])
    coarse = TriangleMesh(coarse_positions, coarse_faces)
    log = CollapseLog(
        records=records, coarse_mesh=coarse, coarse_vertex_ids=alive_v,
        alive_face_ids=alive_f, n_vertices_orig=mesh.n_vertices,
        n_faces_orig=mesh.n_faces, target_faces=target_faces,
        fingerprint=mesh.fingerprint(),
    )
    return coarse, log


def _audit_manifold(dm: _DecimationMesh):
    alive_f = np.nonzero(dm.face_alive)[0]
    counts: dict[tuple[int, int], int] = {}
    for fi in alive_f:
        a, b, c = (int(x) for x in dm.faces[fi])
        for x, y in ((a, b), (b, c), (c, a)):
            key = (x, y) if x < y else (y, x)
            counts[key] = counts.get(key, 0) + 1
    bad = [k for k, c in counts.items() if c > 2]
    if bad:
        raise AssertionError(f"collapse produced non-manifold edges: {bad[:5]}")


# ---------------------------------------------------------------------------
# Reinflation
# ---------------------------------------------------------------------------

def reinflate(deformed_coarse: np.ndarray, log: CollapseLog,
              return_faces: bool = False):
    """Replay vertex splits in reverse on deformed coarse positions.

    Each split places the removed pair through the stored affine fit of the
    current (deformed) one-ring.  Returns full-resolution positions indexed
    like the original mesh, so original faces/uvs re-attach unchanged.
    """
    deformed_coarse = np.asarray(deformed_coarse, dtype=np.float64)
    if deformed_coarse.shape != (len(log.coarse_vertex_ids), 3):
        raise ValueError(
            f"expected {len(log.coarse_vertex_ids)} coarse positions, "
            f"got {deformed_coarse.shape}")
    pos = np.zeros((log.n_expanded, 3))
    pos[log.coarse_vertex_ids] = deformed_coarse

    faces = None
    if return_faces:
        faces = np.full((log.n_faces_orig, 3), -1, dtype=np.int64)
        faces[log.alive_face_ids] = log.coarse_vertex_ids[log.coarse_mesh.faces]

    for rec in reversed(log.records):
        center = pos[rec.inserted]
        ring = pos[rec.neighbors] - center
        T = ring.T @ rec.affine.T   # 3x3 best-fit linear map, (Q~ A^T)
        pos[rec.removed_j] = center + T @ rec.disp_j
        pos[rec.removed_k] = center + T @ rec.disp_k
        if faces is not None:
            for fid, old, _died in rec.face_patch:
                faces[fid] = old
    out = pos[: log.n_vertices_orig]
    if return_faces:
        return out, faces
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_collapse_log(log: CollapseLog, path: str):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack(
            "<QQQQQQ", log.n_vertices_orig, log.n_faces_orig, len(log.records),
            len(log.coarse_vertex_ids), len(log.coarse_mesh.faces),
            log.target_faces))
        fh.write(bytes.fromhex(log.fingerprint))
        fh.write(np.ascontiguousarray(log.coarse_mesh.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(log.coarse_mesh.faces, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(log.coarse_vertex_ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(log.alive_face_ids, dtype="<u8").tobytes())
        for rec in log.records:
            nn = len(rec.neighbors)
            fh.write(struct.pack("<QQQ", rec.inserted, rec.removed_j, rec.removed_k))
            fh.write(np.asarray(rec.disp_j, dtype="<f8").tobytes())
            fh.write(np.asarray(rec.disp_k, dtype="<f8").tobytes())
            fh.write(struct.pack("<B", 1 if rec.tikhonov else 0))
            fh.write(struct.pack("<Q", nn))
            fh.write(np.ascontiguousarray(rec.neighbors, dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(rec.affine, dtype="<f8").tobytes())
            fh.write(struct.pack("<Q", len(rec.face_patch)))
            for fid, old, died in rec.face_patch:
                fh.write(struct.pack("<QQQQB", fid, old[0], old[1], old[2],
                                     1 if died else 0))


def load_collapse_log(path: str, expect_fingerprint: str | None = None) -> CollapseLog:
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n):
        nonlocal off
        chunk = data[off:off + n]
        if len(chunk) != n:
            raise MeshError("truncated collapse log")
        off += n
        return chunk

    if take(8) != MAGIC:
        raise MeshError("not a collapse log (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise MeshError(f"unsupported collapse log version {version}")
    nv, nf, nrec, ncv, ncf, target = struct.unpack("<QQQQQQ", take(48))
    fingerprint = take(32).hex()
    if expect_fingerprint is not None and fingerprint != expect_fingerprint:
        raise MeshError("collapse log does not match this mesh")
    cpos = np.frombuffer(take(ncv * 24), dtype="<f8").reshape(ncv, 3).copy()
    cfaces = np.frombuffer(take(ncf * 24), dtype="<u8").reshape(ncf, 3).astype(np.int64)
    cvids = np.frombuffer(take(ncv * 8), dtype="<u8").astype(np.int64)
    afids = np.frombuffer(take(ncf * 8), dtype="<u8").astype(np.int64)
    records = []
    for _ in range(nrec):
        ins, rj, rk = struct.unpack("<QQQ", take(24))
        dj = np.frombuffer(take(24), dtype="<f8").copy()
        dk = np.frombuffer(take(24), dtype="<f8").copy()
        (tik,) = struct.unpack("<B", take(1))
        (nn,) = struct.unpack("<Q", take(8))
        neigh = np.frombuffer(take(nn * 8), dtype="<u8").astype(np.int64)
        A = np.frombuffer(take(3 * nn * 8), dtype="<f8").reshape(3, nn).copy()
        (npatch,) = struct.unpack("<Q", take(8))
        patch = []
        for _p in range(npatch):
            fid, a, b, c, died = struct.unpack("<QQQQB", take(33))
            patch.append((int(fid), (int(a), int(b), int(c)), bool(died)))
        records.append(CollapseRecord(
            inserted=int(ins), removed_j=int(rj), removed_k=int(rk),
            disp_j=dj, disp_k=dk, neighbors=neigh, affine=A,
            tikhonov=bool(tik), face_patch=patch,
        ))
    coarse = TriangleMesh(cpos, cfaces)
    return CollapseLog(
        records=records, coarse_mesh=coarse, coarse_vertex_ids=cvids,
        alive_face_ids=afids, n_vertices_orig=int(nv), n_faces_orig=int(nf),
        target_faces=int(target), fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# Fast stylization (decimate, solve coarse, reinflate)
# ---------------------------------------------------------------------------

@dataclass
class FastStylizeResult:
    positions: np.ndarray        # full resolution
    coarse: StylizeResult
    log: CollapseLog
    pre_seconds: float
    online_seconds: float
    from_cache: bool


def map_constraints_to_coarse(constraints: Constraints | None,
                              log: CollapseLog) -> Constraints | None:
    """Carry constraints through the collapse chain; first writer wins when
    several constrained vertices merge into one coarse vertex."""
    if constraints is None or constraints.empty:
        return constraints
    cmap = log.vertex_map_to_coarse()
    out = Constraints()
    seen_fixed = set()
    for idx in sorted(constraints.fixed):
        c = cmap[idx]
        if c not in seen_fixed:
            seen_fixed.add(c)
            out.fixed.append(c)
    for idx in sorted(constraints.points):
        c = cmap[idx]
        if c not in out.points:
            out.points[c] = constraints.points[idx]
    seen_planes = set()
    for idx, ax, val in sorted(constraints.planes):
        c = cmap[idx]
        if (c, ax) not in seen_planes:
            seen_planes.add((c, ax))
            out.planes.append((c, ax, val))
    return out


def fast_stylize(mesh: TriangleMesh, params: StylizeParams | None = None,
                 constraints: Constraints | None = None,
                 controls: StyleControls | None = None,
                 target_faces: int = 20000, *,
                 cache_path: str | None = None, floor: int = 500,
                 warm_state: AdmmState | None = None,
                 initial_coarse_positions: np.ndarray | None = None,
                 max_outer: int | None = None,
                 callback=None) -> FastStylizeResult:
    """Decimate (cacheable), stylize the coarse mesh, reinflate the details."""
    if mesh.n_faces <= target_faces:
        raise ValueError(f"mesh has {mesh.n_faces} faces, not above target {target_faces}")

    t0 = time.perf_counter()
    log = None
    from_cache = False
    if cache_path is not None:
        try:
            log = load_collapse_log(cache_path, expect_fingerprint=mesh.fingerprint())
            if log.target_faces == target_faces:
                from_cache = True
            else:
                log = None
        except (OSError, MeshError):
            log = None
    if log is None:
        _, log = decimate(mesh, target_faces, floor=floor)
        if cache_path is not None:
            save_collapse_log(log, cache_path)
    pre_seconds = time.perf_counter() - t0

    # the style controls index vertices of the ORIGINAL mesh only when they
    # are scalar-per-vertex; carry the painted field through the chain
    coarse_controls = controls
    if controls is not None and controls.lambda_field is not None:
        cmap = log.vertex_map_to_coarse()
        field = np.zeros(log.coarse_mesh.n_vertices)
        count = np.zeros(log.coarse_mesh.n_vertices)
        for v in range(log.n_vertices_orig):
            field[cmap[v]] += controls.lambda_field[v]
            count[cmap[v]] += 1
        field /= np.maximum(count, 1)
        coarse_controls = StyleControls(
            base_lambda=controls.base_lambda, lambda_field=field,
            axis_lambda=controls.axis_lambda, b_matrix=controls.b_matrix,
            gauss_direction=controls.gauss_direction,
            gauss_lo=controls.gauss_lo, gauss_hi=controls.gauss_hi,
        )
    if controls is not None and controls.frames is not None:
        raise ValueError("per-vertex frames are not supported on the coarse path")

    t1 = time.perf_counter()
    coarse_result = stylize(
        log.coarse_mesh, params,
        map_constraints_to_coarse(constraints, log),
        coarse_controls, warm_state=warm_state,
        initial_positions=initial_coarse_positions,
        max_outer=max_outer, callback=callback,
    )
    full = reinflate(coarse_result.positions, log)
    online_seconds = time.perf_counter() - t1
    return FastStylizeResult(
        positions=full, coarse=coarse_result, log=log,
        pre_seconds=pre_seconds, online_seconds=online_seconds,
        from_cache=from_cache,
    )
