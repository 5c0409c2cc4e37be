"""The local-global cubic stylization optimizer.

Minimizes, over deformed positions and per-vertex rotations,

    sum_i sum_{(j,k) in N(i)} (w_jk / 2) |R_i d_jk - d~_jk|^2
        + a_i |W_i R_i n_i|_1

where N(i) is the spokes-and-rims edge set, n_i the unit area-weighted rest
normal, a_i the barycentric area, and W_i the resolved style operator
(lambda * I in the plain cubic case).  The ARAP sum is normalized by the
spokes-and-rims edge multiplicity so its stiffness matches the classical
per-edge cotangent Laplacian; see ARAP_EDGE_MULTIPLICITY below.  Rotations
are fit per vertex with a warm-started scaled-form ADMM (Procrustes step,
shrinkage or small-QP step, dual update, adaptive penalty); positions solve
one prefactorized sparse system per axis with constraints eliminated.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .mesh import (
    MeshError, SpokesRims, TriangleMesh, build_neighborhoods, cubeness_score,
    validate, vertex_areas, vertex_components, vertex_normals,
)
from .style import (
    DIAGONAL, GENERAL, ROTATED_DIAGONAL, StyleControls, StyleOperator,
    build_style_operator, qp_z_step,
)

SQRT3 = np.sqrt(3.0)

# Each undirected interior edge belongs to the spokes-and-rims sets of four
# distinct vertices (its two endpoints plus the vertex opposite it in each
# incident triangle).  The solver divides the ARAP sum by this multiplicity
# so per-edge stiffness stays at the scale of the classical cotangent
# Laplacian (the system of Sorkine's Equation 9 that the global step solves)
# and the published cubeness range keeps its meaning.
ARAP_EDGE_MULTIPLICITY = 4.0


@dataclass
class StylizeParams:
    """Solver parameters; defaults follow the reference configuration."""

    lam: float = 0.2                 # default cubeness weight (dimensionless)
    rho0: float = 1e-4               # initial ADMM penalty
    eps_abs: float = 1e-5            # raise for extremely large lambda
    eps_rel: float = 1e-3
    mu: float = 10.0                 # residual-balance ratio
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    stop_tol: float = 3e-3           # outer stop: relative per-vertex displacement
    max_outer: int = 1000
    max_inner: int = 100             # safety cap for a full local fit
    admm_steps: int | None = 1       # ADMM steps per outer iteration; None = to tolerance
    stall_tol: float = 0.05         # outer stop also needs max |R n - z| below this
    adapt_rho: bool = True
    threads: int = 0                 # 0 = numba default

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        for name in ("rho0", "eps_abs", "eps_rel", "stop_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mu <= 1 or self.tau_incr <= 1 or self.tau_decr <= 1:
            raise ValueError("mu and tau must exceed 1")


@dataclass
class Constraints:
    """Positional constraints applied by elimination in the global step."""

    fixed: list[int] = field(default_factory=list)
    points: dict[int, np.ndarray] = field(default_factory=dict)
    planes: list[tuple[int, int, float]] = field(default_factory=list)  # (idx, axis, value)

    AXES = {"x": 0, "y": 1, "z": 2}

    @classmethod
    def from_dict(cls, data: dict) -> "Constraints":
        """Parse {"fixed": [...], "points": [{"idx", "target"}], "planes":
        [{"idx", "axis", "value"}]}."""
        c = cls()
        c.fixed = [int(i) for i in data.get("fixed", [])]
        for p in data.get("points", []):
            c.points[int(p["idx"])] = np.asarray(p["target"], dtype=np.float64)
        for p in data.get("planes", []):
            axis = p["axis"]
            if isinstance(axis, str):
                axis = cls.AXES[axis.lower()]
            c.planes.append((int(p["idx"]), int(axis), float(p["value"])))
        return c

    @property
    def empty(self) -> bool:
        return not (self.fixed or self.points or self.planes)

    def signature(self) -> tuple:
        return (
            tuple(sorted(self.fixed)),
            tuple(sorted((i, tuple(t)) for i, t in self.points.items())),
            tuple(sorted(self.planes)),
        )


@dataclass
class AdmmState:
    """Per-vertex ADMM variables, warm-started across iterations and edits."""

    R: np.ndarray     # (nv, 3, 3)
    z: np.ndarray     # (nv, 3)
    u: np.ndarray     # (nv, 3)
    rho: np.ndarray   # (nv,)

    @classmethod
    def fresh(cls, n_vertices: int, rho0: float) -> "AdmmState":
        return cls(
            R=np.broadcast_to(np.eye(3), (n_vertices, 3, 3)).copy(),
            z=np.zeros((n_vertices, 3)),
            u=np.zeros((n_vertices, 3)),
            rho=np.full(n_vertices, float(rho0)),
        )

    def copy(self) -> "AdmmState":
        return AdmmState(self.R.copy(), self.z.copy(), self.u.copy(), self.rho.copy())


class SolverContext:
    """Precomputed, lambda-independent solver data for one mesh + constraints.

    Holds the spokes-and-rims arrays, rest quantities, the assembled global
    quadratic form with constrained rows eliminated, and its factorization.
    Safe for shared concurrent reads; rebuild when constraints change.
    """

    def __init__(self, mesh: TriangleMesh, constraints: Constraints | None = None,
                 check: bool = True):
        if check:
            report = validate(mesh)
            if not report.ok:
                raise MeshError(
                    "mesh failed validation: "
                    f"{len(report.nonmanifold_edges)} non-manifold edges, "
                    f"{len(report.nonmanifold_vertices)} non-manifold vertices, "
                    f"{len(report.degenerate_faces)} degenerate faces"
                )
        self.mesh = mesh
        self.constraints = constraints or Constraints()
        self.sr: SpokesRims = build_neighborhoods(mesh)
        self.areas = vertex_areas(mesh)
        self.normals = vertex_normals(mesh)
        self.bbox_diag = mesh.bbox_diagonal
        self.components = vertex_components(mesh)

        self.w_solver = self.sr.app_w / ARAP_EDGE_MULTIPLICITY
        self.d_rest = (mesh.positions[self.sr.app_k] - mesh.positions[self.sr.app_j])
        self.wd_rest = self.w_solver[:, None] * self.d_rest

        # stopping-criterion normalizer: mean incident rest edge length, so
        # "relative per vertex displacement" is resolution independent
        lengths = np.linalg.norm(self.d_rest, axis=1)
        sums = np.zeros(mesh.n_vertices)
        counts = np.zeros(mesh.n_vertices)
        np.add.at(sums, self.sr.owners, lengths)
        np.add.at(counts, self.sr.owners, 1.0)
        self.vertex_edge_scale = sums / np.maximum(counts, 1.0)

        self._assemble_system()

    # -- global system ------------------------------------------------------

    def _pinned_by_axis(self) -> list[dict[int, float]]:
        n = self.mesh.n_vertices
        cons = self.constraints
        pinned: list[dict[int, float]] = [{}, {}, {}]

        def check_range(idx: int):
            if not (0 <= idx < n):
                raise ValueError(f"constraint references vertex {idx}, mesh has {n}")

        for idx in list(cons.fixed) + list(cons.points) + [p[0] for p in cons.planes]:
            check_range(idx)

        def pin(idx: int, axis: int, value: float, kind: str):
            old = pinned[axis].get(idx)
            if old is not None and abs(old - value) > 1e-12 * max(1.0, abs(old)):
                raise ValueError(
                    f"conflicting constraints on vertex {idx} axis {axis}: "
                    f"{old} vs {value} ({kind})"
                )
            pinned[axis][idx] = value

        for idx in cons.fixed:
            for ax in range(3):
                pin(idx, ax, float(self.mesh.positions[idx, ax]), "fixed")
        for idx, target in cons.points.items():
            for ax in range(3):
                pin(idx, ax, float(target[ax]), "point")
        for idx, ax, val in cons.planes:
            pin(idx, ax, val, "plane")

        # gauge: per component and axis lacking any pin, fix the coordinate of
        # the component's centroid-nearest vertex at its rest value
        self.gauge_vertices: list[int] = []
        n_comp = int(self.components.max()) + 1
        for comp in range(n_comp):
            members = np.nonzero(self.components == comp)[0]
            centroid = self.mesh.positions[members].mean(axis=0)
            d2 = ((self.mesh.positions[members] - centroid) ** 2).sum(axis=1)
            # tolerance tie-break keeps the choice translation invariant on
            # symmetric meshes where every vertex ties for the minimum
            near = d2 <= d2.min() + 1e-9 * max(float(d2.max()), 1e-300)
            gauge = int(members[np.nonzero(near)[0][0]])
            used = False
            member_set = set(members.tolist())
            for ax in range(3):
                if not any(i in member_set for i in pinned[ax]):
                    pin(gauge, ax, float(self.mesh.positions[gauge, ax]), "gauge")
                    used = True
            if used:
                self.gauge_vertices.append(gauge)
        return pinned

    def _assemble_system(self):
        n = self.mesh.n_vertices
        j, k, w = self.sr.app_j, self.sr.app_k, self.w_solver
        rows = np.concatenate([j, k, j, k])
        cols = np.concatenate([j, k, k, j])
        vals = np.concatenate([w, w, -w, -w])
        L = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        self.L = L

        pinned = self._pinned_by_axis()
        self.pinned_idx: list[np.ndarray] = []
        self.pinned_val: list[np.ndarray] = []
        for ax in range(3):
            idx = np.array(sorted(pinned[ax]), dtype=np.int64)
            self.pinned_idx.append(idx)
            self.pinned_val.append(np.array([pinned[ax][i] for i in idx]))

        same = all(np.array_equal(self.pinned_idx[0], self.pinned_idx[ax]) for ax in (1, 2))
        self.shared_elimination = same
        self.free_idx: list[np.ndarray] = []
        self.lu = []
        self.L_fc = []
        axes = (0,) if same else (0, 1, 2)
        for ax in axes:
            free = np.setdiff1d(np.arange(n), self.pinned_idx[ax], assume_unique=False)
            self.free_idx.append(free)
            Lff = L[free][:, free].tocsc()
            try:
                self.lu.append(spla.splu(Lff))
            except RuntimeError as e:
                raise RuntimeError(
                    "global system factorization failed; is some component "
                    f"fully unconstrained? ({e})"
                ) from e
            self.L_fc.append(L[free][:, self.pinned_idx[ax]].tocsr())
        if same:
            self.free_idx *= 3
            self.lu *= 3
            self.L_fc *= 3

    # -- solve pieces --------------------------------------------------------

    def apply_constraints(self, positions: np.ndarray) -> np.ndarray:
        out = positions.copy()
        for ax in range(3):
            out[self.pinned_idx[ax], ax] = self.pinned_val[ax]
        return out

    def solve_positions(self, rhs: np.ndarray) -> np.ndarray:
        """Exact minimizer of the ARAP quadratic with eliminated constraints."""
        n = self.mesh.n_vertices
        out = np.empty((n, 3))
        for ax in range(3):
            free = self.free_idx[ax]
            b = rhs[free, ax] - self.L_fc[ax] @ self.pinned_val[ax]
            out[free, ax] = self.lu[ax].solve(b)
            out[self.pinned_idx[ax], ax] = self.pinned_val[ax]
        return out

    def arap_energy(self, positions: np.ndarray, rotations: np.ndarray) -> float:
        per_vertex = np.empty(self.mesh.n_vertices)
        _kernels.arap_energy_per_vertex(
            rotations, self.sr.offsets, self.sr.app_j, self.sr.app_k,
            self.w_solver, self.d_rest, positions, per_vertex,
        )
        return float(per_vertex.sum())

    def rel_displacement(self, old: np.ndarray, new: np.ndarray) -> float:
        """Stopping quantity: largest per-vertex displacement relative to the
        vertex's mean incident rest edge length."""
        per_vertex = np.abs(new - old).max(axis=1)
        return float((per_vertex / self.vertex_edge_scale).max())


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def shrinkage(x: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Component-wise soft threshold (1 - kappa_j/|x_j|)_+ x_j.

    Exact minimizer of sum_j kappa_j |z_j| + 0.5 |x - z|^2 for kappa >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), x.shape)
    if (kappa < 0).any():
        raise ValueError("kappa must be nonnegative")
    out = np.zeros_like(x)
    mask = np.abs(x) > kappa
    out[mask] = (1.0 - kappa[mask] / np.abs(x[mask])) * x[mask]
    return out


def orthogonal_procrustes(M: np.ndarray) -> np.ndarray:
    """Rotation maximizing trace(R M) over SO(3).

    R = V U^T from the SVD M = U S V^T, negating the column of U belonging
    to the smallest singular value when needed so det(R) = +1.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.isfinite(M).all():
        raise ValueError("M must be finite")
    U, _, Vt = np.linalg.svd(M)
    R = (U @ Vt).T
    if np.linalg.det(R) < 0:
        U = U.copy()
        U[:, 2] *= -1.0
        R = (U @ Vt).T
    return R


def update_penalty(rho: float, u: np.ndarray, r_norm: float, s_norm: float,
                   mu: float = 10.0, tau_incr: float = 2.0, tau_decr: float = 2.0):
    """Residual-balancing penalty update; the scaled dual is rescaled so the
    unscaled dual rho*u is unchanged."""
    if r_norm > mu * s_norm:
        return rho * tau_incr, u / tau_incr
    if s_norm > mu * r_norm:
        return rho / tau_decr, u * tau_decr
    return rho, np.asarray(u)


def fit_rotation_l1(D: np.ndarray, W: np.ndarray, D_def: np.ndarray,
                    nhat: np.ndarray, area: float, lam: float,
                    state: tuple[np.ndarray, np.ndarray, float],
                    params: StylizeParams,
                    style: StyleOperator | None = None, vertex: int = 0):
    """Single-vertex ADMM rotation fit.

    D and D_def are 3-by-k rest/deformed spokes-and-rims edge matrices, W the
    k cotangent weights, state the carried (z, u, rho).  Returns
    (R, new_state, info) where info reports inner iterations and convergence.
    The batched solver path runs the identical updates in a jitted kernel.
    """
    z, u, rho = state
    z = np.asarray(z, dtype=np.float64).copy()
    u = np.asarray(u, dtype=np.float64).copy()
    rho = float(rho)
    M0 = (D * W[None, :]) @ D_def.T

    if style is None:
        tag = DIAGONAL
        kappa_num = lam * area * np.ones(3)
        F = None
        B = None
    else:
        tag = style.tag
        kappa_num = style.lam[vertex] * area * style.diag
        combined = style.combined_frames()
        F = combined[vertex] if combined is not None else None
        B = style.b_matrix
        if tag == GENERAL:
            weight = style.lam[vertex] * area
            if style.frames is not None:
                B = B @ style.frames[vertex]

    R = np.eye(3)
    it_count = 0
    ok = False
    for it in range(params.max_inner):
        it_count = it + 1
        M = M0 + rho * np.outer(nhat, z - u)
        R = _kernels._procrustes3(M)
        Rn = R @ nhat
        v = Rn + u
        if tag == GENERAL:
            z_new = qp_z_step(v, rho, weight, B)
        elif F is not None:
            z_new = F.T @ shrinkage(F @ v, kappa_num / rho)
        else:
            z_new = shrinkage(v, kappa_num / rho)
        r_vec = Rn - z_new
        u = u + r_vec
        r_norm = float(np.linalg.norm(r_vec))
        s_norm = rho * float(np.linalg.norm(z_new - z))
        z = z_new
        eps_pri = SQRT3 * params.eps_abs + params.eps_rel * max(
            np.linalg.norm(Rn), np.linalg.norm(z))
        eps_dua = SQRT3 * params.eps_abs + params.eps_rel * rho * np.linalg.norm(u)
        if r_norm < eps_pri and s_norm < eps_dua:
            ok = True
            break
        if params.adapt_rho:
            rho, u = update_penalty(rho, u, r_norm, s_norm, params.mu,
                                    params.tau_incr, params.tau_decr)
    info = {"iterations": it_count, "converged": ok}
    return R, (z, u, rho), info


# ---------------------------------------------------------------------------
# Local / global steps and the outer loop
# ---------------------------------------------------------------------------

def _set_threads(threads: int):
    if threads and threads > 0:
        import numba
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def local_step(context: SolverContext, state: AdmmState, positions: np.ndarray,
               operator: StyleOperator, kappa3: np.ndarray,
               params: StylizeParams, inner_cap: int | None = None) -> dict:
    """Fit every vertex rotation independently; updates state in place.

    ``inner_cap`` bounds the ADMM steps taken this call (the outer loop
    passes its per-iteration schedule); the Boyd stopping test can end a fit
    earlier.  Per-vertex results do not depend on execution order or thread
    count.
    """
    nv = context.mesh.n_vertices
    M0 = np.empty((nv, 3, 3))
    _kernels.accumulate_procrustes(
        context.sr.offsets, context.sr.app_j, context.sr.app_k,
        context.wd_rest, positions, M0,
    )
    inner_iters = np.zeros(nv, dtype=np.int64)
    converged = np.zeros(nv, dtype=np.bool_)
    cap = params.max_inner if inner_cap is None else min(inner_cap, params.max_inner)

    if operator.tag == GENERAL:
        weight = operator.lam * context.areas
        B0 = operator.b_matrix
        for i in range(nv):
            z, u, rho = state.z[i], state.u[i], float(state.rho[i])
            Bi = B0 @ operator.frames[i] if operator.frames is not None else B0
            R = np.eye(3)
            ok = False
            it_count = 0
            for it in range(cap):
                it_count = it + 1
                M = M0[i] + rho * np.outer(context.normals[i], z - u)
                R = _kernels._procrustes3(M)
                Rn = R @ context.normals[i]
                z_new = qp_z_step(Rn + u, rho, float(weight[i]), Bi)
                r_vec = Rn - z_new
                u = u + r_vec
                r_norm = float(np.linalg.norm(r_vec))
                s_norm = rho * float(np.linalg.norm(z_new - z))
                z = z_new
                eps_pri = SQRT3 * params.eps_abs + params.eps_rel * max(
                    np.linalg.norm(Rn), np.linalg.norm(z))
                eps_dua = SQRT3 * params.eps_abs + params.eps_rel * rho * np.linalg.norm(u)
                if r_norm < eps_pri and s_norm < eps_dua:
                    ok = True
                    break
                if params.adapt_rho:
                    rho, u = update_penalty(rho, u, r_norm, s_norm, params.mu,
                                            params.tau_incr, params.tau_decr)
            state.z[i] = z
            state.u[i] = u
            state.rho[i] = rho
            state.R[i] = R
            inner_iters[i] = it_count
            converged[i] = ok
    else:
        frames = operator.combined_frames()
        use_frames = frames is not None
        if not use_frames:
            frames = _IDENTITY_FRAMES_CACHE.get(nv)
            if frames is None:
                frames = np.broadcast_to(np.eye(3), (nv, 3, 3)).copy()
                _IDENTITY_FRAMES_CACHE[nv] = frames
        _set_threads(params.threads)
        _kernels.admm_local(
            M0, context.normals, kappa3, frames, use_frames,
            state.z, state.u, state.rho,
            params.eps_abs, params.eps_rel, params.mu,
            params.tau_incr, params.tau_decr, cap,
            params.adapt_rho, state.R, inner_iters, converged,
        )
    return {
        "inner_iterations_mean": float(inner_iters.mean()),
        "inner_iterations_max": int(inner_iters.max()),
        "nonconverged_fits": int((~converged).sum()),
    }


_IDENTITY_FRAMES_CACHE: dict[int, np.ndarray] = {}


def global_step(context: SolverContext, rotations: np.ndarray) -> np.ndarray:
    """Exact constrained minimizer of the ARAP term with rotations fixed."""
    rhs = np.empty((context.mesh.n_vertices, 3))
    _kernels.global_rhs(
        np.ascontiguousarray(rotations), context.sr.offsets,
        context.sr.app_j, context.sr.app_k, context.wd_rest, rhs,
    )
    return context.solve_positions(rhs)


def total_energy(context: SolverContext, positions: np.ndarray,
                 rotations: np.ndarray, operator: StyleOperator) -> float:
    """ARAP term plus the l1 style term at the given configuration."""
    arap = context.arap_energy(positions, rotations)
    rn = np.einsum("nij,nj->ni", rotations, context.normals)
    return arap + operator.l1_energy(rn, context.areas)


@dataclass
class StylizeResult:
    positions: np.ndarray
    iterations: int
    converged: bool
    final_rel_displacement: float
    energy: float
    trace: list[dict]
    state: AdmmState
    diagnostics: dict = field(default_factory=dict)


class CubicStylizer:
    """Stepping engine around the local-global loop; supports warm starts,
    preemption at iteration boundaries, and per-iteration progress records."""

    def __init__(self, mesh: TriangleMesh, params: StylizeParams | None = None,
                 constraints: Constraints | None = None,
                 controls: StyleControls | None = None,
                 context: SolverContext | None = None,
                 warm_state: AdmmState | None = None,
                 initial_positions: np.ndarray | None = None,
                 check: bool = True):
        self.params = params or StylizeParams()
        if context is not None:
            if context.mesh is not mesh:
                raise ValueError("context was built for a different mesh")
            self.context = context
        else:
            self.context = SolverContext(mesh, constraints, check=check)
        self.mesh = mesh
        self.operator = build_style_operator(
            controls, self.context.normals, mesh.n_vertices, self.params.lam)
        self.kappa3 = self.operator.kappa3(self.context.areas)
        if self.operator.tag != GENERAL and self.kappa3.shape[1] != 3:
            raise ValueError("diagonal style operators need 3 weights")
        self.state = warm_state.copy() if warm_state is not None \
            else AdmmState.fresh(mesh.n_vertices, self.params.rho0)
        pos0 = mesh.positions if initial_positions is None else np.asarray(
            initial_positions, dtype=np.float64)
        if pos0.shape != mesh.positions.shape:
            raise ValueError("initial positions have the wrong shape")
        # make the start feasible so the global-step audit holds from step one
        self.positions = self.context.apply_constraints(pos0)
        self.iteration = 0
        self.trace: list[dict] = []
        self.last_local_stats: dict = {}

    def step(self) -> dict:
        """One outer iteration: local rotation fits, then the global solve."""
        t0 = time.perf_counter()
        ctx = self.context
        stats = local_step(ctx, self.state, self.positions, self.operator,
                           self.kappa3, self.params,
                           inner_cap=self.params.admm_steps)
        self.last_local_stats = stats
        arap_before = ctx.arap_energy(self.positions, self.state.R)
        new_positions = global_step(ctx, self.state.R)
        arap_after = ctx.arap_energy(new_positions, self.state.R)
        rel = ctx.rel_displacement(self.positions, new_positions)
        rel_bbox = float(np.abs(new_positions - self.positions).max() / ctx.bbox_diag)
        self.positions = new_positions
        self.iteration += 1
        rn = np.einsum("nij,nj->ni", self.state.R, ctx.normals)
        l1_term = self.operator.l1_energy(rn, ctx.areas)
        # largest constraint violation of the z = R n splitting; the outer
        # loop refuses to stop while the proxies still lag the rotations
        primal = float(np.linalg.norm(rn - self.state.z, axis=1).max())
        record = {
            "iter": self.iteration,
            "rel_displacement": rel,
            "rel_displacement_bbox": rel_bbox,
            "energy": arap_after + l1_term,
            "arap_before_global": arap_before,
            "arap_after_global": arap_after,
            "primal_residual": primal,
            "cubeness": cubeness_score(self.mesh, self.positions),
            "millis": (time.perf_counter() - t0) * 1e3,
            "inner_iterations_mean": stats["inner_iterations_mean"],
            "nonconverged_fits": stats["nonconverged_fits"],
        }
        self.trace.append(record)
        return record

    def run(self, max_outer: int | None = None, stop_tol: float | None = None,
            callback=None) -> StylizeResult:
        cap = self.params.max_outer if max_outer is None else max_outer
        tol = self.params.stop_tol if stop_tol is None else stop_tol
        converged = False
        rel = np.inf
        steps = 0
        while steps < cap:
            record = self.step()
            steps += 1
            rel = record["rel_displacement"]
            if callback is not None:
                callback(record)
            if rel < tol and record["primal_residual"] < self.params.stall_tol:
                converged = True
                break
        return StylizeResult(
            positions=self.positions.copy(),
            iterations=steps,
            converged=converged,
            final_rel_displacement=float(rel),
            energy=self.trace[-1]["energy"] if self.trace else 0.0,
            trace=list(self.trace),
            state=self.state.copy(),
            diagnostics=dict(self.last_local_stats),
        )


def init(mesh: TriangleMesh, params: StylizeParams | None = None,
         constraints: Constraints | None = None,
         controls: StyleControls | None = None):
    """Build the factorized solver context and a fresh ADMM state."""
    params = params or StylizeParams()
    context = SolverContext(mesh, constraints)
    return context, AdmmState.fresh(mesh.n_vertices, params.rho0)


def stylize(mesh: TriangleMesh, params: StylizeParams | None = None,
            constraints: Constraints | None = None,
            controls: StyleControls | None = None,
            warm_state: AdmmState | None = None,
            initial_positions: np.ndarray | None = None,
            max_outer: int | None = None,
            stop_tol: float | None = None,
            context: SolverContext | None = None,
            callback=None) -> StylizeResult:
    """Run the full stylization loop until the bbox-relative displacement
    drops below the stopping tolerance or the iteration cap is reached."""
    engine = CubicStylizer(mesh, params, constraints, controls,
                           context=context, warm_state=warm_state,
                           initial_positions=initial_positions)
    return engine.run(max_outer=max_outer, stop_tol=stop_tol, callback=callback)


def apply_orientation(mesh: TriangleMesh, rotation: np.ndarray) -> TriangleMesh:
    """Pre-rotate rest positions so the l1 axes cut the shape differently.

    Rejects matrices that are not rotations.  Apply the transpose to the
    stylized output to return to the original pose.
    """
    Q = np.asarray(rotation, dtype=np.float64)
    if Q.shape != (3, 3) or np.abs(Q.T @ Q - np.eye(3)).max() > 1e-8 \
            or np.linalg.det(Q) <= 0:
        raise ValueError("orientation must be a rotation matrix")
    return mesh.with_positions(mesh.positions @ Q.T)


def rotation_about_axis(axis, angle_degrees: float) -> np.ndarray:
    """Rodrigues rotation; axis may be 'x'/'y'/'z' or a 3-vector."""
    if isinstance(axis, str):
        axis = {"x": [1, 0, 0], "y": [0, 1, 0], "z": [0, 0, 1]}[axis.lower()]
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("axis must be nonzero")
    a = a / n
    th = np.deg2rad(angle_degrees)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)
