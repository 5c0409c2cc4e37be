"""poly-style: style operators, the small QP, and the generalized z-step."""
import numpy as np
import pytest

from cubify.mesh import vertex_normals
from cubify.primitives import icosphere
from cubify.solver import StylizeParams, shrinkage, stylize
from cubify.style import (
    DIAGONAL, GENERAL, ROTATED_DIAGONAL, StyleControls, build_style_operator,
    preset_b_matrix, qp_z_step, solve_small_qp,
)

from conftest import random_rotations

TET = preset_b_matrix("tetrahedron")


# ---------------------------------------------------------------------------
# style operator construction
# ---------------------------------------------------------------------------

class TestBuildStyleOperator:
    def test_plain_cubic_is_scaled_identity_diagonal(self):
        n = 10
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        op = build_style_operator(StyleControls(base_lambda=0.2), normals, n)
        assert op.tag == DIAGONAL
        assert np.allclose(op.matrix(0), 0.2 * np.eye(3))

    def test_per_axis_weights_penalize_selected_axis(self):
        n = 4
        normals = np.tile([1.0, 0.0, 0.0], (n, 1))
        op = build_style_operator(
            StyleControls(base_lambda=1.0, axis_lambda=np.array([1.0, 0.0, 0.0])),
            normals, n)
        assert op.tag == DIAGONAL
        W = op.matrix(0)
        assert np.allclose(W, np.diag([1.0, 0.0, 0.0]))
        # the shrink threshold vector lives on x only
        kappa = op.kappa3(np.ones(n))
        assert np.allclose(kappa[:, 0], 1.0)
        assert np.allclose(kappa[:, 1:], 0.0)

    def test_gauss_ramp_weights_by_rest_normal(self):
        m = icosphere(2)
        normals = vertex_normals(m)
        controls = StyleControls(gauss_direction=np.array([-1.0, 0.0, 0.0]),
                                 gauss_lo=0.1, gauss_hi=0.9)
        op = build_style_operator(controls, normals, m.n_vertices)
        left = np.argmin(normals[:, 0])   # normal closest to (-1, 0, 0)
        right = np.argmax(normals[:, 0])  # closest to (+1, 0, 0)
        assert op.lam[left] == pytest.approx(0.9, abs=0.02)
        assert op.lam[right] == pytest.approx(0.1, abs=0.02)
        assert (op.lam >= 0.1 - 1e-12).all() and (op.lam <= 0.9 + 1e-12).all()

    def test_painted_field_wins(self):
        n = 5
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        field = np.linspace(0, 1, n)
        op = build_style_operator(StyleControls(base_lambda=9.0, lambda_field=field),
                                  normals, n)
        assert np.array_equal(op.lam, field)

    def test_b_matrix_goes_general(self):
        n = 3
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        op = build_style_operator(StyleControls(base_lambda=0.5, b_matrix=TET),
                                  normals, n)
        assert op.tag == GENERAL
        assert np.allclose(op.matrix(1), 0.5 * TET)

    def test_orthogonal_b_keeps_shrinkage_path(self):
        n = 2
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        rng = np.random.default_rng(0)
        Q = random_rotations(1, rng)[0]
        B = np.diag([2.0, 0.5, 1.0]) @ Q
        op = build_style_operator(StyleControls(base_lambda=1.0, b_matrix=B),
                                  normals, n)
        assert op.tag == ROTATED_DIAGONAL

    def test_frames_give_rotated_diagonal(self):
        n = 4
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        rng = np.random.default_rng(1)
        frames = random_rotations(n, rng)
        op = build_style_operator(StyleControls(base_lambda=0.3, frames=frames),
                                  normals, n)
        assert op.tag == ROTATED_DIAGONAL

    def test_zero_row_b_rejected(self):
        normals = np.tile([0.0, 0.0, 1.0], (2, 1))
        B = np.array([[1.0, 0, 0], [0, 0, 0]])
        with pytest.raises(ValueError, match="zero row"):
            build_style_operator(StyleControls(base_lambda=1.0, b_matrix=B), normals, 2)

    def test_axis_lambda_with_b_rejected(self):
        normals = np.tile([0.0, 0.0, 1.0], (2, 1))
        with pytest.raises(ValueError, match="premultiply"):
            build_style_operator(
                StyleControls(base_lambda=1.0, b_matrix=TET,
                              axis_lambda=np.array([1.0, 2.0, 3.0])), normals, 2)

    def test_sidecar_parsing(self):
        data = {
            "lambda": 0.4,
            "axis_lambda": [1.0, 2.0, 0.5],
            "gauss_ramp": {"dir": [0, 0, 2.0], "lo": 0.1, "hi": 0.5},
        }
        c = StyleControls.from_dict(data)
        assert c.base_lambda == 0.4
        assert np.allclose(c.gauss_direction, [0, 0, 1.0])
        c2 = StyleControls.from_dict({"B": "tetrahedron"})
        assert c2.b_matrix.shape == (4, 3)


# ---------------------------------------------------------------------------
# small dense QP
# ---------------------------------------------------------------------------

def cvxpy_qp_oracle(H, f, A, b):
    import cvxpy as cp
    x = cp.Variable(len(f))
    objective = cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + f @ x)
    constraints = [A @ x <= b] if A is not None and len(A) else []
    prob = cp.Problem(objective, constraints)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        prob.solve(solver=cp.SCS)
    return prob.value, x.value


class TestSolveSmallQp:
    def test_unconstrained_zero(self):
        x = solve_small_qp(np.eye(2), np.zeros(2), None, None)
        assert np.allclose(x, 0.0)

    def test_clipped_optimum(self):
        x = solve_small_qp(np.eye(2), np.array([-2.0, 0.0]),
                           np.array([[1.0, 0.0]]), np.array([0.5]))
        assert np.allclose(x, [0.5, 0.0], atol=1e-10)

    def test_kkt_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n, p = 4, 6
            G = rng.normal(size=(n, n))
            H = G @ G.T + 0.5 * np.eye(n)
            f = rng.normal(size=n)
            A = rng.normal(size=(p, n))
            b = rng.uniform(0.1, 1.0, size=p)  # x=0 feasible
            x, info = solve_small_qp(H, f, A, b, return_info=True)
            assert info["converged"]
            assert (A @ x - b).max() < 1e-8
            mult = np.zeros(p)
            if info["active"]:
                act = np.array(info["active"])
                m, *_ = np.linalg.lstsq(A[act].T, -(H @ x + f), rcond=None)
                mult[act] = m
            assert np.abs(H @ x + f + A.T @ mult).max() < 1e-7
            assert (mult > -1e-7).all()

    def test_random_instances_match_interior_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(40):
            n = int(rng.integers(2, 8))
            p = int(rng.integers(1, 9))
            G = rng.normal(size=(n, n))
            H = G @ G.T
            if trial % 2 == 0:
                # rank-deficient PSD block, as in the epigraph program
                H[-1, :] = 0.0
                H[:, -1] = 0.0
            f = rng.normal(size=n)
            if trial % 2 == 0:
                f[-1] = abs(f[-1]) + 0.1  # keep the problem bounded
                A = np.vstack([rng.normal(size=(p, n)),
                               np.r_[np.zeros(n - 1), -1.0]])
                b = np.r_[rng.uniform(0.1, 1.0, size=p), 0.5]
            else:
                A = rng.normal(size=(p, n))
                b = rng.uniform(0.1, 1.0, size=p)
            x = solve_small_qp(H, f, A, b)
            obj_mine = 0.5 * x @ H @ x + f @ x
            obj_oracle, _ = cvxpy_qp_oracle(H, f, A, b)
            assert (A @ x - b).max() < 1e-8
            assert obj_mine <= obj_oracle + 1e-5


class TestQpZStep:
    def test_identity_b_equals_shrinkage(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            v = rng.normal(size=3) * rng.choice([0.05, 1.0, 20.0])
            rho = 10 ** rng.uniform(-4, 2)
            weight = 10 ** rng.uniform(-4, 1)
            z_qp = qp_z_step(v, rho, weight, np.eye(3))
            z_sh = shrinkage(v, np.full(3, weight / rho))
            worst = max(worst, np.abs(z_qp - z_sh).max())
        assert worst < 1e-6

    def test_zero_weight_returns_input(self):
        v = np.array([0.3, -0.7, 2.0])
        assert np.array_equal(qp_z_step(v, 1.0, 0.0, TET), v)

    def test_tetrahedral_b_never_worsens_regularizer(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            v = rng.normal(size=3)
            rho = 10 ** rng.uniform(-2, 2)
            weight = 10 ** rng.uniform(-3, 0)
            z = qp_z_step(v, rho, weight, TET)
            assert np.abs(TET @ z).sum() <= np.abs(TET @ v).sum() + 1e-10

    def test_perturbation_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            v = rng.normal(size=3)
            rho, weight = 1.3, 0.4
            z = qp_z_step(v, rho, weight, TET)

            def obj(zz):
                return weight * np.abs(TET @ zz).sum() + 0.5 * rho * ((v - zz) ** 2).sum()

            base = obj(z)
            deltas = rng.normal(size=(10_000, 3))
            deltas *= 0.1 / np.linalg.norm(deltas, axis=1)[:, None]
            probes = z[None] + deltas * rng.uniform(0, 1, size=(10_000, 1))
            vals = (weight * np.abs(probes @ TET.T).sum(axis=1)
                    + 0.5 * rho * ((v[None] - probes) ** 2).sum(axis=1))
            assert base <= vals.min() + 1e-9

    def test_sign_symmetry(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            v = rng.normal(size=3)
            z1 = qp_z_step(v, 2.0, 0.3, TET)
            z2 = qp_z_step(-v, 2.0, 0.3, TET)
            assert np.allclose(z1, -z2, atol=1e-9)

    def test_rotated_diagonal_fast_path_equals_general_qp(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            F = random_rotations(1, rng)[0]
            kappa = np.abs(rng.normal(size=3)) + 0.01
            rho = 10 ** rng.uniform(-1, 1)
            weight = 10 ** rng.uniform(-2, 0)
            v = rng.normal(size=3)
            # B chosen so weight * |B z|_1 == sum kappa_j rho |(F z)_j|
            B = np.diag(kappa * rho / weight) @ F
            z_fast = F.T @ shrinkage(F @ v, kappa)
            z_qp = qp_z_step(v, rho, weight, B)
            assert np.abs(z_fast - z_qp).max() < 1e-6

    def test_icosahedral_preset_shape(self):
        B = preset_b_matrix("icosahedron")
        assert B.shape == (10, 3)
        assert np.allclose(np.linalg.norm(B, axis=1), 1.0)
        z = qp_z_step(np.array([0.3, -0.2, 0.9]), 1.0, 0.1, B)
        assert np.isfinite(z).all()


# ---------------------------------------------------------------------------
# stylizer integration with generalized operators
# ---------------------------------------------------------------------------

class TestStylizerIntegration:
    def test_diagonal_fast_path_bitwise_vs_explicit_identity_b(self):
        # B = I routes through the DIAGONAL tag and must match plain cubic
        m = icosphere(1)
        r_plain = stylize(m, StylizeParams(lam=0.3), max_outer=10, stop_tol=0)
        r_b = stylize(m, StylizeParams(lam=0.3),
                      controls=StyleControls(base_lambda=0.3, b_matrix=np.eye(3)),
                      max_outer=10, stop_tol=0)
        assert np.array_equal(r_plain.positions, r_b.positions)

    def test_general_qp_path_runs_and_matches_rotated_fast_path(self):
        # a non-axis-aligned orthogonal B exercises ROTATED_DIAGONAL; the
        # same B with a tiny perturbation goes GENERAL and must agree closely
        m = icosphere(1)
        rng = np.random.default_rng(10)
        Q = random_rotations(1, rng)[0]
        fast = stylize(m, StylizeParams(lam=0.3),
                       controls=StyleControls(base_lambda=0.3, b_matrix=Q),
                       max_outer=8, stop_tol=0)
        qcontrols = StyleControls(base_lambda=0.3, b_matrix=Q + 1e-12)
        op = build_style_operator(qcontrols, vertex_normals(m), m.n_vertices)
        assert op.tag == GENERAL
        slow = stylize(m, StylizeParams(lam=0.3), controls=qcontrols,
                       max_outer=8, stop_tol=0)
        assert np.abs(fast.positions - slow.positions).max() < 1e-5

    def test_per_axis_lambda_biases_one_axis(self):
        # penalizing only z flattens normals toward the xy plane:
        # the z component of face normals shrinks on average
        m = icosphere(2)
        controls = StyleControls(base_lambda=0.6,
                                 axis_lambda=np.array([0.0, 0.0, 1.0]))
        res = stylize(m, StylizeParams(lam=0.6), controls=controls)
        from cubify.mesh import face_areas_normals
        a0, n0 = face_areas_normals(m.positions, m.faces)
        a1, n1 = face_areas_normals(res.positions, m.faces)
        before = (a0 * np.abs(n0[:, 2])).sum() / a0.sum()
        after = (a1 * np.abs(n1[:, 2])).sum() / a1.sum()
        assert after < 0.7 * before

    def test_tetrahedral_style_reduces_b_alignment_score(self):
        m = icosphere(2)
        res = stylize(m, StylizeParams(lam=0.4),
                      controls=StyleControls(base_lambda=0.4, b_matrix=TET),
                      max_outer=120)
        from cubify.mesh import face_areas_normals
        a0, n0 = face_areas_normals(m.positions, m.faces)
        a1, n1 = face_areas_normals(res.positions, m.faces)
        s0 = (a0 * np.abs(n0 @ TET.T).sum(axis=1)).sum() / a0.sum()
        s1 = (a1 * np.abs(n1 @ TET.T).sum(axis=1)).sum() / a1.sum()
        assert s1 < s0 - 0.05
