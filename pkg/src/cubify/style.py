"""Generalized l1 style terms: per-vertex weights, axis bias, local frames,
and polyhedral coordinate transforms with their small-QP proximal step.

The l1 penalty on a rotated normal is a_i * ||W_i R_i n_i||_1 where the
per-vertex operator W_i composes the cubeness weight lambda_i, optional
per-axis weights, an optional local frame, and an optional m-by-3 matrix B
whose rows act as the face normals of a target polyhedron.  Diagonal and
rotated-diagonal operators keep the closed-form shrinkage; anything else
runs an epigraph QP per z-step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIAGONAL = "DIAGONAL"
ROTATED_DIAGONAL = "ROTATED_DIAGONAL"
GENERAL = "GENERAL"

# Shipped B presets; rows are representative normals, one per antipodal pair.
_TET = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
]) / np.sqrt(3.0)

def _icosahedron_half_normals() -> np.ndarray:
    # face normals of a regular icosahedron = dodecahedron vertex directions;
    # one representative per antipodal pair gives 10 rows
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    inv = 1.0 / phi
    B = np.array([
        (1.0, 1.0, 1.0), (1.0, 1.0, -1.0), (1.0, -1.0, 1.0), (1.0, -1.0, -1.0),
        (0.0, inv, phi), (0.0, inv, -phi),
        (inv, phi, 0.0), (-inv, phi, 0.0),
        (phi, 0.0, inv), (phi, 0.0, -inv),
    ])
    return B / np.linalg.norm(B, axis=1)[:, None]


def preset_b_matrix(name: str) -> np.ndarray:
    """Named polyhedral transforms: 'tetrahedron', 'octahedron', 'icosahedron'."""
    if name == "tetrahedron":
        return _TET.copy()
    if name == "octahedron":
        # cube dual: axis directions, i.e. a scaled identity
        return np.eye(3)
    if name == "icosahedron":
        return _icosahedron_half_normals()
    raise ValueError(f"unknown B preset {name!r}")


@dataclass
class StyleControls:
    """User-facing style specification; see `build_style_operator`."""

    base_lambda: float | None = None
    lambda_field: np.ndarray | None = None        # (nv,)
    axis_lambda: np.ndarray | None = None         # (3,)
    frames: np.ndarray | None = None              # (nv, 3, 3) rotations
    b_matrix: np.ndarray | None = None            # (m, 3)
    gauss_direction: np.ndarray | None = None     # (3,) unit
    gauss_lo: float = 0.0
    gauss_hi: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "StyleControls":
        """Parse the JSON sidecar format.

        Keys: "lambda", "lambda_field", "axis_lambda", "frames" (per-vertex
        [w,x,y,z] quaternions), "B" (row-major m-by-3 or a preset name),
        "gauss_ramp" {"dir": [3], "lo": float, "hi": float}.
        """
        kwargs: dict = {}
        if "lambda" in data:
            kwargs["base_lambda"] = float(data["lambda"])
        if "lambda_field" in data:
            kwargs["lambda_field"] = np.asarray(data["lambda_field"], dtype=np.float64)
        if "axis_lambda" in data:
            ax = np.asarray(data["axis_lambda"], dtype=np.float64)
            if ax.shape != (3,):
                raise ValueError("axis_lambda must have 3 entries")
            kwargs["axis_lambda"] = ax
        if "frames" in data:
            quats = np.asarray(data["frames"], dtype=np.float64)
            if quats.ndim != 2 or quats.shape[1] != 4:
                raise ValueError("frames must be per-vertex [w,x,y,z] quaternions")
            kwargs["frames"] = quaternions_to_matrices(quats)
        if "B" in data:
            b = data["B"]
            if isinstance(b, str):
                kwargs["b_matrix"] = preset_b_matrix(b)
            else:
                bm = np.asarray(b, dtype=np.float64)
                if bm.ndim != 2 or bm.shape[1] != 3:
                    raise ValueError("B must be m-by-3")
                kwargs["b_matrix"] = bm
        if "gauss_ramp" in data:
            g = data["gauss_ramp"]
            d = np.asarray(g["dir"], dtype=np.float64)
            n = np.linalg.norm(d)
            if n == 0:
                raise ValueError("gauss_ramp dir must be nonzero")
            kwargs["gauss_direction"] = d / n
            kwargs["gauss_lo"] = float(g["lo"])
            kwargs["gauss_hi"] = float(g["hi"])
        return cls(**kwargs)


def quaternions_to_matrices(quats: np.ndarray) -> np.ndarray:
    q = quats / np.linalg.norm(quats, axis=1)[:, None]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((len(q), 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


@dataclass
class StyleOperator:
    """Resolved per-vertex l1 operators with a fast-path tag.

    tag DIAGONAL:         threshold vector shrinkage (axis weights only)
    tag ROTATED_DIAGONAL: rotate, shrink, rotate back
    tag GENERAL:          per-vertex epigraph QP
    """

    tag: str
    lam: np.ndarray                       # (nv,) per-vertex lambda
    diag: np.ndarray                      # (3,) or (m,) row magnitudes
    frames: np.ndarray | None = None      # (nv, 3, 3)
    b_matrix: np.ndarray | None = None    # (m, 3) for GENERAL
    rot_part: np.ndarray | None = None    # (3, 3) orthonormal factor of B

    def matrix(self, i: int) -> np.ndarray:
        """Explicit W_i (m-by-3), composing every control."""
        F = self.frames[i] if self.frames is not None else np.eye(3)
        if self.tag == GENERAL:
            return self.lam[i] * (self.b_matrix @ F)
        core = np.diag(self.diag)
        if self.rot_part is not None:
            core = core @ self.rot_part
        return self.lam[i] * (core @ F)

    def kappa3(self, areas: np.ndarray) -> np.ndarray:
        """Shrinkage threshold numerators lambda_i * a_i * diag (nv, 3)."""
        return (self.lam * areas)[:, None] * self.diag[None, :]

    def combined_frames(self) -> np.ndarray | None:
        """Total rotation applied inside the shrink, or None for identity."""
        if self.tag == DIAGONAL:
            return None
        if self.rot_part is None:
            return self.frames
        if self.frames is None:
            return np.broadcast_to(self.rot_part, (len(self.lam), 3, 3)).copy()
        return np.einsum("rc,ncd->nrd", self.rot_part, self.frames)

    def l1_energy(self, rotated_normals: np.ndarray, areas: np.ndarray) -> float:
        """sum_i a_i ||W_i R_i n_i||_1 given the rotated normals (nv, 3)."""
        if self.tag == GENERAL:
            if self.frames is not None:
                v = np.einsum("nrc,nc->nr", self.frames, rotated_normals)
            else:
                v = rotated_normals
            bv = v @ self.b_matrix.T
            per = np.abs(bv).sum(axis=1)
        else:
            F = self.combined_frames()
            v = rotated_normals if F is None else np.einsum("nrc,nc->nr", F, rotated_normals)
            per = (np.abs(v) * self.diag[None, :]).sum(axis=1)
        return float((areas * self.lam * per).sum())


def _rows_orthogonal(B: np.ndarray) -> bool:
    if B.shape[0] != 3:
        return False
    G = B @ B.T
    off = np.abs(G - np.diag(np.diag(G))).max()
    return off <= 1e-12 * max(np.abs(np.diag(G)).max(), 1e-300)


def build_style_operator(controls: StyleControls | None, rest_normals: np.ndarray,
                         n_vertices: int, default_lambda: float = 0.0) -> StyleOperator:
    """Resolve controls into per-vertex operators and pick the z-step path.

    Per-vertex lambda comes from, in priority order: the painted field, the
    normal-driven ramp lo + (hi-lo)*(1 + dir.n)/2, or the base value.
    """
    if controls is None:
        controls = StyleControls()
    if controls.lambda_field is not None:
        lam = np.asarray(controls.lambda_field, dtype=np.float64)
        if lam.shape != (n_vertices,):
            raise ValueError(f"lambda_field must have {n_vertices} entries")
    elif controls.gauss_direction is not None:
        align = rest_normals @ controls.gauss_direction
        lam = controls.gauss_lo + (controls.gauss_hi - controls.gauss_lo) * (1.0 + align) / 2.0
    else:
        base = controls.base_lambda if controls.base_lambda is not None else default_lambda
        lam = np.full(n_vertices, float(base))
    if (lam < 0).any():
        raise ValueError("lambda must be nonnegative")

    frames = controls.frames
    if frames is not None:
        frames = np.ascontiguousarray(frames, dtype=np.float64)
        if frames.shape != (n_vertices, 3, 3):
            raise ValueError(f"frames must be ({n_vertices}, 3, 3)")
        err = np.abs(np.einsum("nij,nkj->nik", frames, frames) - np.eye(3)).max()
        if err > 1e-8 or (np.linalg.det(frames) <= 0).any():
            raise ValueError("frames must be rotations")

    B = controls.b_matrix
    if B is not None:
        B = np.ascontiguousarray(B, dtype=np.float64)
        if B.ndim != 2 or B.shape[1] != 3:
            raise ValueError("B must be m-by-3")
        if (np.linalg.norm(B, axis=1) == 0).any():
            raise ValueError("B has a zero row")
        if not np.isfinite(B).all():
            raise ValueError("B has non-finite entries")
        if controls.axis_lambda is not None:
            raise ValueError("per-axis weights cannot be combined with B; "
                             "premultiply them into B instead")

    axis = np.ones(3) if controls.axis_lambda is None else np.asarray(controls.axis_lambda, dtype=np.float64)
    if (axis < 0).any():
        raise ValueError("axis weights must be nonnegative")

    if B is None:
        if frames is None:
            return StyleOperator(DIAGONAL, lam, axis)
        return StyleOperator(ROTATED_DIAGONAL, lam, axis, frames=frames)

    # B with mutually orthogonal nonzero rows is diag(row norms) @ rotation,
    # which keeps the closed-form shrinkage.
    if _rows_orthogonal(B):
        norms = np.linalg.norm(B, axis=1)
        Q = B / norms[:, None]
        if frames is None:
            if np.abs(Q - np.eye(3)).max() == 0.0:
                return StyleOperator(DIAGONAL, lam, norms)
            return StyleOperator(ROTATED_DIAGONAL, lam, norms, rot_part=Q)
        return StyleOperator(ROTATED_DIAGONAL, lam, norms, frames=frames, rot_part=Q)
    return StyleOperator(GENERAL, lam, np.linalg.norm(B, axis=1), frames=frames, b_matrix=B)


# ---------------------------------------------------------------------------
# Dense active-set QP
# ---------------------------------------------------------------------------

class QpCapWarning(RuntimeWarning):
    pass


def _null_space(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int((s > 1e-11 * max(s[0], 1e-300)).sum()) if len(s) else 0
    return Vt[rank:].T


def solve_small_qp(H: np.ndarray, f: np.ndarray, A_ineq: np.ndarray | None,
                   b_ineq: np.ndarray | None, x0: np.ndarray | None = None,
                   max_iter: int = 200, return_info: bool = False):
    """Minimize 0.5 x'Hx + f'x subject to A_ineq x <= b_ineq.

    Dense primal active-set method sized for a handful of variables.  H must
    be symmetric PSD (it may be singular: descent rays along the null space
    are followed until a constraint blocks).  Pivoting is deterministic with
    lowest-index tie-breaking.  Returns x, or (x, info) with keys
    "converged", "iterations", "active".
    """
    H = np.asarray(H, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    if A_ineq is None or len(A_ineq) == 0:
        x, *_ = np.linalg.lstsq(H, -f, rcond=None)
        info = {"converged": True, "iterations": 0, "active": []}
        return (x, info) if return_info else x
    A = np.asarray(A_ineq, dtype=np.float64)
    b = np.asarray(b_ineq, dtype=np.float64)
    p = len(b)

    scale = max(np.abs(A).max(), 1.0)
    feas_tol = 1e-9 * scale

    if x0 is None:
        x = np.zeros(n)
        if (A @ x - b > feas_tol).any():
            from scipy.optimize import linprog
            res = linprog(
                c=np.r_[np.zeros(n), 1.0],
                A_ub=np.c_[A, -np.ones(p)],
                b_ub=b,
                bounds=[(None, None)] * n + [(0, None)],
                method="highs",
            )
            if not res.success or res.x[-1] > 1e-7:
                raise ValueError("no feasible point found")
            x = res.x[:n]
    else:
        x = np.asarray(x0, dtype=np.float64).copy()
        if (A @ x - b > feas_tol).any():
            raise ValueError("x0 is infeasible")

    working = [i for i in range(p) if A[i] @ x - b[i] > -feas_tol]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = H @ x + f
        Aw = A[working] if working else np.zeros((0, n))
        Z = _null_space(Aw, n)
        ray = None
        step = None
        if Z.shape[1] > 0:
            Hr = Z.T @ H @ Z
            gr = Z.T @ g
            lam_r, Q = np.linalg.eigh(Hr)
            lam_max = max(lam_r[-1], 0.0)
            pos = lam_r > 1e-12 * max(lam_max, 1.0)
            gq = Q.T @ gr
            # component of the gradient along zero-curvature directions
            null_part = gq.copy()
            null_part[pos] = 0.0
            if np.linalg.norm(null_part) > 1e-10 * max(1.0, np.linalg.norm(gq)):
                ray = -Z @ (Q @ null_part)
                ray /= np.linalg.norm(ray)
            else:
                q = np.zeros_like(gq)
                q[pos] = -gq[pos] / lam_r[pos]
                step = Z @ (Q @ q)
        if ray is not None:
            alpha, blocker = _max_step(A, b, x, ray, working, feas_tol)
            if blocker is None:
                raise ValueError("QP is unbounded below")
            x = x + alpha * ray
            working.append(blocker)
            working.sort()
            continue
        if step is None or np.linalg.norm(step) <= 1e-11 * max(1.0, np.linalg.norm(x)):
            # KKT multipliers for the working set
            if working:
                mul, *_ = np.linalg.lstsq(Aw.T, -g, rcond=None)
                neg = np.nonzero(mul < -1e-9)[0]
                if len(neg) == 0:
                    converged = True
                    break
                worst = neg[np.argmin(mul[neg])]
                working.pop(int(worst))
            else:
                converged = True
                break
        else:
            alpha, blocker = _max_step(A, b, x, step, working, feas_tol)
            if alpha >= 1.0:
                x = x + step
            else:
                x = x + alpha * step
                if blocker is not None:
                    working.append(blocker)
                    working.sort()
    info = {"converged": converged, "iterations": it, "active": list(working)}
    return (x, info) if return_info else x


def _max_step(A, b, x, d, working, tol):
    """Largest alpha <= 1 keeping A(x + alpha d) <= b; None if unblocked."""
    alpha = 1.0
    blocker = None
    Ad = A @ d
    Ax = A @ x
    in_working = np.zeros(len(b), dtype=bool)
    in_working[working] = True
    for i in range(len(b)):
        if in_working[i] or Ad[i] <= tol:
            continue
        a = (b[i] - Ax[i]) / Ad[i]
        if a < alpha - 1e-15:
            alpha = max(a, 0.0)
            blocker = i
    return alpha, blocker


def qp_z_step(v: np.ndarray, rho: float, weight: float, B: np.ndarray) -> np.ndarray:
    """Proximal step min_z weight*||Bz||_1 + (rho/2)||v - z||^2.

    Solved as the standard epigraph program over (z, t) with t >= |Bz| row
    wise, i.e. constraints [B -I; -B -I][z; t] <= 0.  Returns the z block.
    """
    v = np.asarray(v, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m = B.shape[0]
    if weight == 0.0:
        return v.copy()
    if rho <= 0:
        raise ValueError("rho must be positive")
    n = 3 + m
    H = np.zeros((n, n))
    H[:3, :3] = rho * np.eye(3)
    f = np.r_[-rho * v, weight * np.ones(m)]
    A = np.zeros((2 * m, n))
    A[:m, :3] = B
    A[m:, :3] = -B
    A[:m, 3:] = -np.eye(m)
    A[m:, 3:] = -np.eye(m)
    b = np.zeros(2 * m)
    bv = B @ v
    x0 = np.r_[v, np.abs(bv)]
    x = solve_small_qp(H, f, A, b, x0=x0)
    return x[:3]
