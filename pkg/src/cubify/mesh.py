"""Triangle mesh container, OBJ I/O, validation, and discrete differential quantities.

Everything downstream (the stylizer, the progressive-mesh machinery, the CLI
and the service) consumes the products of this module: cotangent-weighted
spokes-and-rims neighborhoods, barycentric vertex areas, area-weighted unit
vertex normals, and an axis-alignment score used for reporting.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Individual cotangent values are clamped to this range before averaging so a
# single sliver triangle cannot poison the global system.
COT_CLAMP = 1.0e4

# A face is degenerate when its area falls below this fraction of the squared
# bounding-box diagonal.
DEGENERATE_AREA_REL = 1.0e-14


class MeshError(ValueError):
    """Raised for malformed OBJ input or inconsistent mesh construction."""


@dataclass
class TriangleMesh:
    """Vertex positions and triangle indices, plus retained OBJ records.

    ``positions`` is (n, 3) float64 and ``faces`` is (m, 3) int64.  When the
    mesh came from an OBJ file the original lines are retained verbatim so
    that saving reproduces every non-position record (uvs, normals, material
    references, comments) byte for byte.
    """

    positions: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray | None = None
    uv_faces: np.ndarray | None = None
    raw_lines: list[str] | None = None
    v_line_map: np.ndarray | None = None  # raw_lines index of each `v` record

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise MeshError("positions must be (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must be (m, 3)")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def with_positions(self, positions: np.ndarray) -> "TriangleMesh":
        """Copy of this mesh with replaced vertex positions."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise MeshError(
                f"positions override has shape {positions.shape}, "
                f"expected {self.positions.shape}"
            )
        return TriangleMesh(
            positions.copy(), self.faces, self.uvs, self.uv_faces,
            self.raw_lines, self.v_line_map,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.positions.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# OBJ I/O
# ---------------------------------------------------------------------------

def _parse_corner(token: str, ln: int, nv: int, nvt: int):
    parts = token.split("/")
    try:
        vi = int(parts[0])
    except ValueError:
        raise MeshError(f"line {ln}: bad face corner {token!r}")
    if vi < 0:
        vi = nv + vi + 1
    if not (1 <= vi <= nv):
        raise MeshError(f"line {ln}: vertex index {parts[0]} out of range (have {nv})")
    ti = -1
    if len(parts) > 1 and parts[1]:
        ti = int(parts[1])
        if ti < 0:
            ti = nvt + ti + 1
        if not (1 <= ti <= nvt):
            raise MeshError(f"line {ln}: uv index {parts[1]} out of range (have {nvt})")
    return vi - 1, ti - 1


def load_obj(data: bytes | str) -> TriangleMesh:
    """Parse ASCII Wavefront OBJ text into a :class:`TriangleMesh`.

    Convex polygonal faces are fan-triangulated.  `vt`/`vn` and unknown
    records are retained verbatim so a later save round-trips them.
    Raises :class:`MeshError` with the offending line number on bad input.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MeshError(f"OBJ is not valid UTF-8: {e}") from e
    else:
        text = data

    positions: list[tuple[float, float, float]] = []
    uvs: list[tuple[float, float]] = []
    faces: list[tuple[int, int, int]] = []
    uv_faces: list[tuple[int, int, int]] = []
    raw_lines = text.splitlines()
    v_line_map: list[int] = []
    any_uv_face = False

    for ln, line in enumerate(raw_lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        key = tokens[0]
        if key == "v":
            if len(tokens) < 4:
                raise MeshError(f"line {ln}: `v` record needs 3 coordinates")
            try:
                xyz = tuple(float(t) for t in tokens[1:4])
            except ValueError:
                raise MeshError(f"line {ln}: bad vertex coordinate")
            positions.append(xyz)
            v_line_map.append(ln - 1)
        elif key == "vt":
            if len(tokens) < 3:
                raise MeshError(f"line {ln}: `vt` record needs 2 coordinates")
            uvs.append((float(tokens[1]), float(tokens[2])))
        elif key == "f":
            corner_tokens = tokens[1:]
            if len(corner_tokens) < 3:
                raise MeshError(f"line {ln}: face needs at least 3 corners")
            corners = [
                _parse_corner(t, ln, len(positions), len(uvs))
                for t in corner_tokens
            ]
            if len({c[0] for c in corners}) != len(corners):
                raise MeshError(f"line {ln}: face repeats a vertex")
            for a in range(1, len(corners) - 1):
                faces.append((corners[0][0], corners[a][0], corners[a + 1][0]))
                uv_faces.append((corners[0][1], corners[a][1], corners[a + 1][1]))
                if corners[0][1] >= 0:
                    any_uv_face = True
        # vn, mtllib, usemtl, o, g, s, ... are retained via raw_lines only

    if not positions:
        raise MeshError("empty mesh: no vertices")
    if not faces:
        raise MeshError("empty mesh: no faces")

    return TriangleMesh(
        positions=np.array(positions, dtype=np.float64),
        faces=np.array(faces, dtype=np.int64),
        uvs=np.array(uvs, dtype=np.float64) if uvs else None,
        uv_faces=np.array(uv_faces, dtype=np.int64) if any_uv_face else None,
        raw_lines=raw_lines,
        v_line_map=np.array(v_line_map, dtype=np.int64),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def save_obj(mesh: TriangleMesh, positions_override: np.ndarray | None = None) -> bytes:
    """Serialize a mesh to OBJ, optionally substituting vertex positions.

    When the mesh retains its source lines, every record except the `v`
    coordinates is emitted unchanged, so uv/normal index streams survive
    byte for byte.  Meshes built programmatically get a plain v/vt/f dump.
    """
    pos = mesh.positions
    if positions_override is not None:
        positions_override = np.asarray(positions_override, dtype=np.float64)
        if positions_override.shape != pos.shape:
            raise MeshError(
                f"positions override has shape {positions_override.shape}, "
                f"expected {pos.shape}"
            )
        pos = positions_override

    out: list[str] = []
    if mesh.raw_lines is not None and mesh.v_line_map is not None:
        sub = {int(i): k for k, i in enumerate(mesh.v_line_map)}
        for idx, line in enumerate(mesh.raw_lines):
            k = sub.get(idx)
            if k is None:
                out.append(line)
            else:
                p = pos[k]
                tokens = line.strip().split()
                extra = tokens[4:]  # e.g. vertex colors appended after xyz
                rec = f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}"
                if extra:
                    rec += " " + " ".join(extra)
                out.append(rec)
    else:
        for p in pos:
            out.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
        if mesh.uvs is not None:
            for t in mesh.uvs:
                out.append(f"vt {_fmt(t[0])} {_fmt(t[1])}")
        for fi, f in enumerate(mesh.faces):
            if mesh.uv_faces is not None and mesh.uv_faces[fi][0] >= 0:
                t = mesh.uv_faces[fi]
                out.append(
                    f"f {f[0]+1}/{t[0]+1} {f[1]+1}/{t[1]+1} {f[2]+1}/{t[2]+1}"
                )
            else:
                out.append(f"f {f[0]+1} {f[1]+1} {f[2]+1}")
    return ("\n".join(out) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    n_vertices: int
    n_faces: int
    nonmanifold_edges: list = field(default_factory=list)
    nonmanifold_vertices: list = field(default_factory=list)
    degenerate_faces: list = field(default_factory=list)
    duplicate_vertex_faces: list = field(default_factory=list)
    out_of_range_faces: list = field(default_factory=list)
    unreferenced_vertices: list = field(default_factory=list)
    n_components: int = 0
    orientable: bool = True
    boundary_loops: int = 0

    @property
    def ok(self) -> bool:
        """Acceptable as solver input (non-orientable and boundaries allowed)."""
        return not (
            self.nonmanifold_edges
            or self.nonmanifold_vertices
            or self.degenerate_faces
            or self.duplicate_vertex_faces
            or self.out_of_range_faces
        )

    def to_dict(self) -> dict:
        return {
            "n_vertices": self.n_vertices,
            "n_faces": self.n_faces,
            "ok": self.ok,
            "nonmanifold_edges": [list(map(int, e)) for e in self.nonmanifold_edges[:100]],
            "nonmanifold_vertices": list(map(int, self.nonmanifold_vertices[:100])),
            "degenerate_faces": list(map(int, self.degenerate_faces[:100])),
            "duplicate_vertex_faces": list(map(int, self.duplicate_vertex_faces[:100])),
            "out_of_range_faces": list(map(int, self.out_of_range_faces[:100])),
            "n_components": self.n_components,
            "orientable": self.orientable,
            "boundary_loops": self.boundary_loops,
        }


def _edge_face_table(faces: np.ndarray) -> dict[tuple[int, int], list[int]]:
    table: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            table.setdefault(key, []).append(fi)
    return table


def face_areas_normals(positions: np.ndarray, faces: np.ndarray):
    """Per-face area and unit normal (zero-area faces get a zero normal)."""
    p0 = positions[faces[:, 0]]
    e1 = positions[faces[:, 1]] - p0
    e2 = positions[faces[:, 2]] - p0
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norms
    normals = np.zeros_like(cross)
    nz = norms > 0
    normals[nz] = cross[nz] / norms[nz, None]
    return areas, normals


def vertex_components(mesh: TriangleMesh) -> np.ndarray:
    """Connected-component label per vertex (edges of faces as the graph)."""
    n = mesh.n_vertices
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Check manifoldness, orientability, degeneracy, and count boundary loops.

    Findings are reported, not raised; callers decide what is fatal.
    Boundaries and non-orientable connectivity are acceptable solver input.
    """
    report = ValidationReport(mesh.n_vertices, mesh.n_faces)
    faces = mesh.faces
    n = mesh.n_vertices

    bad = (faces < 0) | (faces >= n)
    report.out_of_range_faces = list(np.nonzero(bad.any(axis=1))[0])
    dup = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    report.duplicate_vertex_faces = list(np.nonzero(dup)[0])
    if report.out_of_range_faces:
        return report

    areas, _ = face_areas_normals(mesh.positions, faces)
    thresh = DEGENERATE_AREA_REL * mesh.bbox_diagonal ** 2
    report.degenerate_faces = list(np.nonzero(areas <= thresh)[0])

    edge_faces = _edge_face_table(faces)
    report.nonmanifold_edges = sorted(k for k, fs in edge_faces.items() if len(fs) > 2)

    referenced = np.zeros(n, dtype=bool)
    referenced[faces.ravel()] = True
    report.unreferenced_vertices = list(np.nonzero(~referenced)[0])

    # Vertex manifoldness: the incident faces must form a single fan whose
    # boundary (edges seen once at the vertex) has zero or two edges.
    incident: list[list[int]] = [[] for _ in range(n)]
    for fi, f in enumerate(faces):
        for v in f:
            incident[v].append(fi)
    nm_edges = set(map(tuple, report.nonmanifold_edges))
    for v in range(n):
        fs = incident[v]
        if not fs:
            continue
        local_edges: dict[tuple[int, int], list[int]] = {}
        for fi in fs:
            a, b, c = faces[fi]
            others = [x for x in (a, b, c) if x != v]
            for o in others:
                key = (v, o) if v < o else (o, v)
                local_edges.setdefault(key, []).append(fi)
        if any(k in nm_edges for k in local_edges):
            report.nonmanifold_vertices.append(v)
            continue
        boundary_at_v = sum(1 for fl in local_edges.values() if len(fl) == 1)
        if boundary_at_v not in (0, 2):
            report.nonmanifold_vertices.append(v)
            continue
        # connectivity of incident faces through local edges
        idx = {fi: k for k, fi in enumerate(fs)}
        parent = list(range(len(fs)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for fl in local_edges.values():
            if len(fl) == 2:
                ra, rb = find(idx[fl[0]]), find(idx[fl[1]])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        if len({find(k) for k in range(len(fs))}) > 1:
            report.nonmanifold_vertices.append(v)

    report.n_components = int(vertex_components(mesh).max()) + 1 if n else 0

    # Orientability: propagate a consistent co-orientation over face adjacency.
    manifold_pairs = [fs for fs in edge_faces.values() if len(fs) == 2]
    adj: list[list[tuple[int, bool]]] = [[] for _ in range(len(faces))]
    for key, fs in edge_faces.items():
        if len(fs) != 2:
            continue
        f0, f1 = fs
        # same traversal direction on the shared edge means inconsistent
        def direction(fi):
            a, b, c = faces[fi]
            loops = ((a, b), (b, c), (c, a))
            u, v = key
            if (u, v) in loops:
                return True
            return False
        same = direction(f0) == direction(f1)
        adj[f0].append((f1, same))
        adj[f1].append((f0, same))
    sign = np.zeros(len(faces), dtype=np.int8)
    orientable = True
    for seed in range(len(faces)):
        if sign[seed] != 0:
            continue
        sign[seed] = 1
        stack = [seed]
        while stack:
            fi = stack.pop()
            for fj, same in adj[fi]:
                want = -sign[fi] if same else sign[fi]
                if sign[fj] == 0:
                    sign[fj] = want
                    stack.append(fj)
                elif sign[fj] != want:
                    orientable = False
    report.orientable = orientable

    # Boundary loops: walk edges that belong to exactly one face.
    boundary = [k for k, fs in edge_faces.items() if len(fs) == 1]
    if boundary and not report.nonmanifold_vertices:
        succ: dict[int, list[int]] = {}
        for u, v in boundary:
            succ.setdefault(u, []).append(v)
            succ.setdefault(v, []).append(u)
        seen: set[tuple[int, int]] = set()
        loops = 0
        for u, v in boundary:
            if (u, v) in seen:
                continue
            loops += 1
            prev, cur = u, v
            seen.add((u, v))
            while cur != u:
                nxts = [w for w in succ[cur] if w != prev]
                if not nxts:
                    break
                prev, cur = cur, nxts[0]
                seen.add((prev, cur) if prev < cur else (cur, prev))
        report.boundary_loops = loops
    elif boundary:
        report.boundary_loops = -1  # not well defined on non-manifold input
    return report


# ---------------------------------------------------------------------------
# Spokes-and-rims neighborhoods with cotangent weights
# ---------------------------------------------------------------------------

@dataclass
class SpokesRims:
    """Flattened per-vertex spokes-and-rims edge lists.

    For vertex ``i`` the directed edges (j, k) occupy
    ``app_j[offsets[i]:offsets[i+1]]`` / ``app_k[...]`` with cotangent weight
    ``app_w[...]``.  Every triangle incident to ``i`` contributes its three
    directed edges, so the slot count is three per incident triangle.
    """

    offsets: np.ndarray   # (n+1,) int64
    app_j: np.ndarray     # (E,) int64
    app_k: np.ndarray     # (E,) int64
    app_w: np.ndarray     # (E,) float64
    owners: np.ndarray    # (E,) int64, = repeat(arange(n), counts)

    @property
    def n_vertices(self) -> int:
        return len(self.offsets) - 1

    def vertex_edges(self, i: int):
        s, e = self.offsets[i], self.offsets[i + 1]
        return self.app_j[s:e], self.app_k[s:e], self.app_w[s:e]


def cotangent_edge_weights(mesh: TriangleMesh) -> dict[tuple[int, int], float]:
    """Cotangent weight per undirected edge: half the sum of the opposite
    cotangents (one term on a boundary edge), each cot clamped to ±1e4."""
    pos = mesh.positions
    weights: dict[tuple[int, int], float] = {}
    for a, b, c in mesh.faces:
        pa, pb, pc = pos[a], pos[b], pos[c]
        for (u, v, o, po, pu, pv) in (
            (b, c, a, pa, pb, pc),
            (c, a, b, pb, pc, pa),
            (a, b, c, pc, pa, pb),
        ):
            e1 = pu - po
            e2 = pv - po
            cross = np.linalg.norm(np.cross(e1, e2))
            if cross <= 0.0:
                raise MeshError(f"degenerate triangle at vertices ({a},{b},{c})")
            cot = float(np.dot(e1, e2) / cross)
            cot = min(max(cot, -COT_CLAMP), COT_CLAMP)
            key = (u, v) if u < v else (v, u)
            weights[key] = weights.get(key, 0.0) + 0.5 * cot
    return weights


def build_neighborhoods(mesh: TriangleMesh) -> SpokesRims:
    """Assemble the spokes-and-rims edge set of every vertex.

    Each triangle incident to vertex ``i`` contributes all three of its
    directed edges, weighted by the (full, both-sided) cotangent weight of
    the undirected edge.  Per-vertex lists are sorted by (j, k) so traversal
    order is deterministic.
    """
    weights = cotangent_edge_weights(mesh)
    n = mesh.n_vertices
    per_vertex: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for a, b, c in mesh.faces:
        edges = ((a, b), (b, c), (c, a))
        for v in (a, b, c):
            per_vertex[v].extend(edges)

    counts = np.array([len(lst) for lst in per_vertex], dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    E = int(offsets[-1])
    app_j = np.empty(E, dtype=np.int64)
    app_k = np.empty(E, dtype=np.int64)
    app_w = np.empty(E, dtype=np.float64)
    for i, lst in enumerate(per_vertex):
        lst.sort()
        s = offsets[i]
        for t, (j, k) in enumerate(lst):
            app_j[s + t] = j
            app_k[s + t] = k
            key = (j, k) if j < k else (k, j)
            app_w[s + t] = weights[key]
    owners = np.repeat(np.arange(n, dtype=np.int64), counts)
    return SpokesRims(offsets, app_j, app_k, app_w, owners)


# ---------------------------------------------------------------------------
# Vertex areas / normals and the cubeness score
# ---------------------------------------------------------------------------

def vertex_areas(mesh: TriangleMesh) -> np.ndarray:
    """Barycentric vertex areas: one third of each incident triangle."""
    areas, _ = face_areas_normals(mesh.positions, mesh.faces)
    out = np.zeros(mesh.n_vertices)
    third = areas / 3.0
    for col in range(3):
        np.add.at(out, mesh.faces[:, col], third)
    return out


def vertex_normals(mesh: TriangleMesh, return_fallback: bool = False):
    """Unit area-weighted vertex normals.

    Incident faces are co-oriented per vertex by propagation over shared
    edges before averaging, so non-orientable meshes get a usable normal
    whose global sign is arbitrary (harmless: the l1 term is even).
    A vertex whose weighted sum cancels exactly falls back to its first
    incident face normal and is reported when ``return_fallback`` is set.
    """
    areas, fnormals = face_areas_normals(mesh.positions, mesh.faces)
    n = mesh.n_vertices
    faces = mesh.faces
    incident: list[list[int]] = [[] for _ in range(n)]
    for fi, f in enumerate(faces):
        for v in f:
            incident[v].append(fi)

    normals = np.zeros((n, 3))
    fallback: list[int] = []
    for v in range(n):
        fs = incident[v]
        if not fs:
            continue
        # local co-orientation by BFS from the lowest-index incident face
        sign = {fs[0]: 1}
        local_edges: dict[tuple[int, int], list[int]] = {}
        directions: dict[tuple[int, tuple[int, int]], bool] = {}
        for fi in fs:
            a, b, c = faces[fi]
            loops = ((a, b), (b, c), (c, a))
            for u, w in loops:
                if u == v or w == v:
                    key = (u, w) if u < w else (w, u)
                    local_edges.setdefault(key, []).append(fi)
                    directions[(fi, key)] = (u, w) == key
        queue = [fs[0]]
        while queue:
            fi = queue.pop()
            for key, fl in local_edges.items():
                if fi not in fl or len(fl) != 2:
                    continue
                fj = fl[0] if fl[1] == fi else fl[1]
                if fj in sign:
                    continue
                same = directions[(fi, key)] == directions[(fj, key)]
                sign[fj] = -sign[fi] if same else sign[fi]
                queue.append(fj)
        total = np.zeros(3)
        for fi in fs:
            total += sign.get(fi, 1) * areas[fi] * fnormals[fi]
        norm = np.linalg.norm(total)
        if norm > 1e-300 and norm > 1e-12 * max(areas[fi] for fi in fs):
            normals[v] = total / norm
        else:
            normals[v] = fnormals[fs[0]]
            fallback.append(v)
    if return_fallback:
        return normals, fallback
    return normals


def cubeness_score(mesh: TriangleMesh, positions: np.ndarray | None = None) -> float:
    """Area-weighted mean l1 norm of unit face normals.

    Equals 1 exactly when every face is axis-aligned and is bounded above
    by sqrt(3) (attained by diagonal normals), so lower is "more cubic".
    """
    pos = mesh.positions if positions is None else np.asarray(positions, dtype=np.float64)
    areas, normals = face_areas_normals(pos, mesh.faces)
    total = areas.sum()
    if total <= 0:
        return 0.0
    return float((areas * np.abs(normals).sum(axis=1)).sum() / total)
