"""Jitted per-vertex kernels for the local-global solver hot path.

Every kernel is either embarrassingly parallel over vertices (no shared
writes, no cross-vertex reductions) or strictly serial, so results are
bitwise identical for any thread count.  The 3x3 Procrustes here uses a
Jacobi eigendecomposition of M^T M; the public `orthogonal_procrustes`
operation keeps the LAPACK route and the two agree to ~1e-10.
"""
from __future__ import annotations

import warnings

import numpy as np

# older TBB builds trigger a harmless warning when the parallel runtime
# starts; numba falls back to its workqueue layer, which is fine here
warnings.filterwarnings("ignore", message=".*TBB.*")

from numba import njit, prange

SQRT3 = np.sqrt(3.0)


@njit(cache=True, fastmath=False)
def _procrustes3(M):
    """Rotation R with det +1 maximizing trace(R @ M)."""
    # S = M^T M, symmetric PSD
    S = M.T.copy() @ M
    V = np.eye(3)
    scale = abs(S[0, 0]) + abs(S[1, 1]) + abs(S[2, 2])
    if scale == 0.0:
        return np.eye(3)
    for _ in range(30):
        off = abs(S[0, 1]) + abs(S[0, 2]) + abs(S[1, 2])
        if off <= 1e-15 * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                if abs(S[p, q]) <= 1e-30 * scale:
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * S[p, q])
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(3):
                    skp = S[k, p]
                    skq = S[k, q]
                    S[k, p] = c * skp - s * skq
                    S[k, q] = s * skp + c * skq
                for k in range(3):
                    spk = S[p, k]
                    sqk = S[q, k]
                    S[p, k] = c * spk - s * sqk
                    S[q, k] = s * spk + c * sqk
                for k in range(3):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    # sort eigenvalues descending (stable)
    eigs = np.array([S[0, 0], S[1, 1], S[2, 2]])
    order = np.array([0, 1, 2])
    for a in range(3):
        best = a
        for b in range(a + 1, 3):
            if eigs[order[b]] > eigs[order[best]]:
                best = b
        tmp = order[a]
        order[a] = order[best]
        order[best] = tmp
    Vs = np.empty((3, 3))
    for col in range(3):
        for row in range(3):
            Vs[row, col] = V[row, order[col]]
    # right-handed V (eigenvector signs are free)
    Vs[0, 2] = Vs[1, 0] * Vs[2, 1] - Vs[2, 0] * Vs[1, 1]
    Vs[1, 2] = Vs[2, 0] * Vs[0, 1] - Vs[0, 0] * Vs[2, 1]
    Vs[2, 2] = Vs[0, 0] * Vs[1, 1] - Vs[1, 0] * Vs[0, 1]

    B = M @ Vs
    sig0 = np.sqrt(B[0, 0] ** 2 + B[1, 0] ** 2 + B[2, 0] ** 2)
    sig1 = np.sqrt(B[0, 1] ** 2 + B[1, 1] ** 2 + B[2, 1] ** 2)
    U = np.empty((3, 3))
    if sig0 <= 1e-150:
        return np.eye(3)
    for r in range(3):
        U[r, 0] = B[r, 0] / sig0
    if sig1 > 1e-12 * sig0:
        d = B[0, 1] * U[0, 0] + B[1, 1] * U[1, 0] + B[2, 1] * U[2, 0]
        n1 = 0.0
        for r in range(3):
            U[r, 1] = B[r, 1] - d * U[r, 0]
            n1 += U[r, 1] ** 2
        n1 = np.sqrt(n1)
        for r in range(3):
            U[r, 1] /= n1
    else:
        # pick the axis least aligned with u0 and orthogonalize
        m = 0
        if abs(U[1, 0]) < abs(U[m, 0]):
            m = 1
        if abs(U[2, 0]) < abs(U[m, 0]):
            m = 2
        n1 = 0.0
        for r in range(3):
            U[r, 1] = (1.0 if r == m else 0.0) - U[m, 0] * U[r, 0]
            n1 += U[r, 1] ** 2
        n1 = np.sqrt(n1)
        for r in range(3):
            U[r, 1] /= n1
    U[0, 2] = U[1, 0] * U[2, 1] - U[2, 0] * U[1, 1]
    U[1, 2] = U[2, 0] * U[0, 1] - U[0, 0] * U[2, 1]
    U[2, 2] = U[0, 0] * U[1, 1] - U[1, 0] * U[0, 1]
    return Vs @ U.T


@njit(cache=True, fastmath=False)
def _shrink(v, kappa, out):
    for c in range(3):
        x = v[c]
        k = kappa[c]
        ax = abs(x)
        if ax <= k:
            out[c] = 0.0
        else:
            out[c] = (1.0 - k / ax) * x


@njit(parallel=True, cache=True, fastmath=False)
def admm_local(M0, nhat, kappa3, frames, use_frames, z, u, rho,
               eps_abs, eps_rel, mu, tau_inc, tau_dec, max_inner, adapt,
               R_out, inner_iters, converged):
    """Warm-started scaled-form ADMM rotation fit, one vertex per lane.

    z, u, rho are updated in place and carried to the next outer iteration.
    kappa3 holds the per-vertex l1 threshold numerators (lambda_i * a_i per
    axis); the shrink threshold is kappa3 / rho.
    """
    nv = M0.shape[0]
    for i in prange(nv):
        zi = z[i].copy()
        ui = u[i].copy()
        ri = rho[i]
        ni = nhat[i]
        Rn = np.empty(3)
        v = np.empty(3)
        znew = np.empty(3)
        tmp = np.empty(3)
        M = np.empty((3, 3))
        R = np.eye(3)
        it_count = 0
        ok = False
        for it in range(max_inner):
            it_count = it + 1
            for r in range(3):
                for c in range(3):
                    M[r, c] = M0[i, r, c] + ri * ni[r] * (zi[c] - ui[c])
            R = _procrustes3(M)
            for r in range(3):
                Rn[r] = R[r, 0] * ni[0] + R[r, 1] * ni[1] + R[r, 2] * ni[2]
            for r in range(3):
                v[r] = Rn[r] + ui[r]
            if use_frames:
                F = frames[i]
                for r in range(3):
                    tmp[r] = F[r, 0] * v[0] + F[r, 1] * v[1] + F[r, 2] * v[2]
                kap = kappa3[i] / ri
                _shrink(tmp, kap, znew)
                for r in range(3):
                    v[r] = F[0, r] * znew[0] + F[1, r] * znew[1] + F[2, r] * znew[2]
                for r in range(3):
                    znew[r] = v[r]
            else:
                kap = kappa3[i] / ri
                for r in range(3):
                    v[r] = Rn[r] + ui[r]
                _shrink(v, kap, znew)
            r_norm = 0.0
            s_norm = 0.0
            for r in range(3):
                pr = Rn[r] - znew[r]
                ui[r] += pr
                r_norm += pr * pr
                ds = znew[r] - zi[r]
                s_norm += ds * ds
                zi[r] = znew[r]
            r_norm = np.sqrt(r_norm)
            s_norm = ri * np.sqrt(s_norm)
            rn_norm = np.sqrt(Rn[0] ** 2 + Rn[1] ** 2 + Rn[2] ** 2)
            z_norm = np.sqrt(zi[0] ** 2 + zi[1] ** 2 + zi[2] ** 2)
            big = rn_norm if rn_norm > z_norm else z_norm
            u_norm = ri * np.sqrt(ui[0] ** 2 + ui[1] ** 2 + ui[2] ** 2)
            eps_pri = SQRT3 * eps_abs + eps_rel * big
            eps_dua = SQRT3 * eps_abs + eps_rel * u_norm
            if r_norm < eps_pri and s_norm < eps_dua:
                ok = True
                break
            if adapt:
                if r_norm > mu * s_norm:
                    ri *= tau_inc
                    for r in range(3):
                        ui[r] /= tau_inc
                elif s_norm > mu * r_norm:
                    ri /= tau_dec
                    for r in range(3):
                        ui[r] *= tau_dec
        z[i] = zi
        u[i] = ui
        rho[i] = ri
        R_out[i] = R
        inner_iters[i] = it_count
        converged[i] = ok


@njit(parallel=True, cache=True, fastmath=False)
def accumulate_procrustes(offsets, app_j, app_k, wd_rest, pos_def, M0_out):
    """M0[i] = sum over spokes-rims edges of (w * d_rest) outer d_deformed."""
    nv = offsets.shape[0] - 1
    for i in prange(nv):
        acc = np.zeros((3, 3))
        for e in range(offsets[i], offsets[i + 1]):
            j = app_j[e]
            k = app_k[e]
            for r in range(3):
                dr = wd_rest[e, r]
                acc[r, 0] += dr * (pos_def[k, 0] - pos_def[j, 0])
                acc[r, 1] += dr * (pos_def[k, 1] - pos_def[j, 1])
                acc[r, 2] += dr * (pos_def[k, 2] - pos_def[j, 2])
        M0_out[i] = acc


@njit(cache=True, fastmath=False)
def global_rhs(R, offsets, app_j, app_k, wd_rest, rhs_out):
    """Accumulate the ARAP right-hand side sum of rotated weighted rest edges."""
    nv = offsets.shape[0] - 1
    rhs_out[:] = 0.0
    for i in range(nv):
        Ri = R[i]
        for e in range(offsets[i], offsets[i + 1]):
            j = app_j[e]
            k = app_k[e]
            for r in range(3):
                val = (Ri[r, 0] * wd_rest[e, 0]
                       + Ri[r, 1] * wd_rest[e, 1]
                       + Ri[r, 2] * wd_rest[e, 2])
                rhs_out[k, r] += val
                rhs_out[j, r] -= val


@njit(parallel=True, cache=True, fastmath=False)
def arap_energy_per_vertex(R, offsets, app_j, app_k, app_w, d_rest, pos_def, out):
    """out[i] = sum over i's spokes-rims edges of (w/2) |R_i d - d_tilde|^2."""
    nv = offsets.shape[0] - 1
    for i in prange(nv):
        Ri = R[i]
        acc = 0.0
        for e in range(offsets[i], offsets[i + 1]):
            j = app_j[e]
            k = app_k[e]
            s = 0.0
            for r in range(3):
                rd = (Ri[r, 0] * d_rest[e, 0]
                      + Ri[r, 1] * d_rest[e, 1]
                      + Ri[r, 2] * d_rest[e, 2])
                diff = rd - (pos_def[k, r] - pos_def[j, r])
                s += diff * diff
            acc += 0.5 * app_w[e] * s
        out[i] = acc


def warmup():
    """Compile (or load from disk cache) every kernel on a tiny instance."""
    offsets = np.array([0, 3], dtype=np.int64)
    app_j = np.array([0, 0, 0], dtype=np.int64)
    app_k = np.array([0, 0, 0], dtype=np.int64)
    wd = np.zeros((3, 3))
    pos = np.zeros((1, 3))
    M0 = np.zeros((1, 3, 3))
    accumulate_procrustes(offsets, app_j, app_k, wd, pos, M0)
    rhs = np.zeros((1, 3))
    global_rhs(np.eye(3)[None], offsets, app_j, app_k, wd, rhs)
    out = np.zeros(1)
    arap_energy_per_vertex(np.eye(3)[None], offsets, app_j, app_k,
                           np.zeros(3), wd, pos, out)
    z = np.zeros((1, 3))
    u = np.zeros((1, 3))
    rho = np.full(1, 1e-4)
    R_out = np.zeros((1, 3, 3))
    iters = np.zeros(1, dtype=np.int64)
    conv = np.zeros(1, dtype=np.bool_)
    admm_local(M0 + np.eye(3), np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)),
               np.eye(3)[None], False, z, u, rho,
               1e-5, 1e-3, 10.0, 2.0, 2.0, 5, True, R_out, iters, conv)
