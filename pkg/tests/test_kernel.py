import itertools

import numpy as np
import pytest

from decoyqkd.kernel import ConicProblem, solve, solve_lp, solve_sdp


def lp_vertex_oracle(c, a_eq, b_eq, a_le, b_le, upper):
    """Brute-force LP minimum by enumerating basic feasible points.

    Only for tiny instances: tries every choice of active constraints
    (equalities always active; inequalities, lower and upper bounds
    optionally active) that yields a square solvable system.
    """
    n = len(c)
    rows = [(np.asarray(r), float(v)) for r, v in zip(a_eq, b_eq)]
    cands = []
    for r, v in zip(a_le, b_le):
        cands.append((np.asarray(r), float(v)))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cands.append((e, 0.0))
        if upper[j] is not None:
            cands.append((e, float(upper[j])))
    best = np.inf
    need = n - len(rows)
    for combo in itertools.combinations(range(len(cands)), max(0, need)):
        mat = np.array([r for r, _ in rows] + [cands[i][0] for i in combo])
        rhs = np.array([v for _, v in rows] + [cands[i][1] for i in combo])
        if mat.shape[0] != n or np.linalg.matrix_rank(mat) < n:
            continue
        try:
            x = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError:
            continue
        if (x < -1e-9).any():
            continue
        if any(u is not None and x[j] > u + 1e-9 for j, u in enumerate(upper)):
            continue
        if a_eq and not np.allclose(np.array(a_eq) @ x, b_eq, atol=1e-9):
            continue
        if a_le and (np.array(a_le) @ x > np.array(b_le) + 1e-9).any():
            continue
        best = min(best, float(np.dot(c, x)))
    return best


class TestLP:
    def test_min_box(self):
        p = ConicProblem()
        x = p.add_scalars(1, upper=1.0)
        p.set_objective({x[0]: 1.0})
        sol = solve_lp(p)
        assert sol.certificate.status == "optimal"
        assert sol.certificate.primal == pytest.approx(0.0, abs=1e-9)
        assert sol.certificate.dual <= sol.certificate.primal + 1e-12

    def test_degenerate_equality_pinned_point(self):
        p = ConicProblem()
        xy = p.add_scalars(2, upper=1.0)
        p.add_eq("sum", [(xy[0], 1.0), (xy[1], 1.0)], rhs=1.0)
        p.add_eq("diff", [(xy[0], 1.0), (xy[1], -1.0)], rhs=-0.5)
        p.set_objective({xy[0]: 3.0, xy[1]: -1.0})
        sol = solve_lp(p)
        assert sol.certificate.status == "optimal"
        np.testing.assert_allclose(sol.scalars, [0.25, 0.75], atol=1e-8)

    def test_unbounded(self):
        p = ConicProblem()
        x = p.add_scalars(1)
        p.set_objective({x[0]: -1.0})
        assert solve_lp(p).certificate.status == "unbounded"

    def test_infeasible(self):
        p = ConicProblem()
        x = p.add_scalars(1)
        p.add_le("neg", [(x[0], 1.0)], rhs=-1.0)
        p.set_objective({x[0]: 1.0})
        assert solve_lp(p).certificate.status == "infeasible"

    @pytest.mark.parametrize("seed", range(12))
    def test_random_lps_match_vertex_enumeration(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n = rng.integers(2, 6)
        c = rng.normal(size=n)
        n_le = rng.integers(1, 4)
        a_le = rng.normal(size=(n_le, n))
        x_feas = rng.uniform(0.1, 0.9, size=n)
        b_le = a_le @ x_feas + rng.uniform(0.05, 1.0, size=n_le)
        upper = [1.0] * n
        oracle = lp_vertex_oracle(c, [], [], a_le.tolist(), b_le.tolist(), upper)

        p = ConicProblem()
        x = p.add_scalars(n, upper=1.0)
        for i in range(n_le):
            p.add_le(f"r{i}", [(x[j], a_le[i, j]) for j in range(n)], rhs=b_le[i])
        p.set_objective({x[j]: c[j] for j in range(n)})
        sol = solve_lp(p)
        assert sol.certificate.status == "optimal"
        assert sol.certificate.primal == pytest.approx(oracle, abs=1e-8)
        assert sol.certificate.dual <= oracle + 1e-8

    def test_certified_bound_side(self):
        # dual is a valid lower bound even at loose tolerance
        rng = np.random.default_rng(7)
        p = ConicProblem()
        x = p.add_scalars(4, upper=1.0)
        a = rng.normal(size=4)
        p.add_le("r", [(x[j], a[j]) for j in range(4)], rhs=1.0)
        p.set_objective({x[j]: rng.normal() for j in range(4)})
        tight = solve_lp(p, tol_gap=1e-12)
        loose = solve_lp(p, tol_gap=1e-3, max_iter=6)
        assert loose.certificate.dual <= tight.certificate.primal + 1e-10


class TestSDP:
    def test_maxcut_style_identity(self):
        d = 4
        p = ConicProblem()
        X = p.add_psd_block(d, trace_bound=float(d))
        for i in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, i] = 1.0
            p.add_eq(f"diag{i}", psd_terms=[(X, e)], rhs=1.0)
        p.set_objective(psd_costs={X: np.eye(d)})
        sol = solve_sdp(p)
        assert sol.certificate.status == "optimal"
        assert sol.certificate.primal == pytest.approx(d, abs=1e-7)

    @pytest.mark.parametrize("seed", range(6))
    def test_min_eigenvalue(self, seed):
        rng = np.random.default_rng(2000 + seed)
        d = int(rng.integers(2, 7))
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        cmat = 0.5 * (a + a.conj().T)
        p = ConicProblem()
        X = p.add_psd_block(d, trace_bound=1.0)
        p.add_eq("tr", psd_terms=[(X, np.eye(d))], rhs=1.0)
        p.set_objective(psd_costs={X: cmat})
        sol = solve_sdp(p)
        lmin = np.linalg.eigvalsh(cmat).min()
        assert sol.certificate.status == "optimal"
        assert sol.certificate.primal == pytest.approx(lmin, abs=1e-7)
        assert sol.certificate.dual <= lmin + 1e-9

    @pytest.mark.parametrize("seed", range(6))
    def test_two_constraint_qubit_grid_oracle(self, seed):
        # dim-2 Hermitian X >= 0, Tr X = 1, plus one linear constraint:
        # parametrize X = (I + r.sigma)/2 over the Bloch ball and grid-search
        rng = np.random.default_rng(3000 + seed)
        pauli = [
            np.array([[0, 1], [1, 0]], dtype=complex),
            np.array([[0, -1j], [1j, 0]], dtype=complex),
            np.array([[1, 0], [0, -1]], dtype=complex),
        ]
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        cmat = 0.5 * (a + a.conj().T)
        avec = rng.normal(size=3)
        avec /= np.linalg.norm(avec)
        rhs = 0.3

        def bloch(r):
            return 0.5 * (np.eye(2) + sum(r[i] * pauli[i] for i in range(3)))

        # grid two coordinates, solve the plane constraint exactly for the
        # third (largest |a| component), keep points inside the ball
        k = int(np.argmax(np.abs(avec)))
        rest = [i for i in range(3) if i != k]
        best = np.inf
        grid = np.linspace(-1, 1, 241)
        for g0 in grid:
            for g1 in grid:
                r = np.zeros(3)
                r[rest[0]], r[rest[1]] = g0, g1
                r[k] = (rhs - avec[rest[0]] * g0 - avec[rest[1]] * g1) / avec[k]
                if r @ r > 1.0:
                    continue
                best = min(best, float(np.trace(cmat @ bloch(r)).real))

        p = ConicProblem()
        X = p.add_psd_block(2, trace_bound=1.0)
        p.add_eq("tr", psd_terms=[(X, np.eye(2))], rhs=1.0)
        amat = 0.5 * sum(avec[i] * pauli[i] for i in range(3))
        p.add_eq("plane", psd_terms=[(X, amat)], rhs=rhs / 2.0)
        p.set_objective(psd_costs={X: cmat})
        sol = solve_sdp(p)
        assert sol.certificate.status == "optimal"
        # the grid slab tolerance dominates the comparison accuracy
        assert sol.certificate.primal <= best + 1e-7
        assert sol.certificate.primal == pytest.approx(best, abs=2e-2)

    def test_mixed_scalar_psd(self):
        # min t s.t. X <= t I (as t I - X psd... encoded directly),
        # X fixed by equality rows: recovers max eigenvalue
        rng = np.random.default_rng(5)
        d = 3
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        cmat = 0.5 * (a + a.conj().T)
        cmat += 2 * abs(np.linalg.eigvalsh(cmat)).max() * np.eye(d)  # make PSD
        p = ConicProblem()
        t = p.add_scalars(1, upper=100.0)
        Y = p.add_psd_block(d, trace_bound=None)  # Y = tI - C >= 0
        basis = []
        for i in range(d):
            for j in range(i, d):
                e = np.zeros((d, d), dtype=complex)
                if i == j:
                    e[i, i] = 1.0
                else:
                    e[i, j] = e[j, i] = 0.5
                basis.append((e, cmat[i, j].real if i == j else cmat[i, j]))
        # rows: <E, Y> = t <E, I> - <E, C>
        for k, (e, _) in enumerate(basis):
            tr_e = np.trace(e).real
            val = np.trace(e @ cmat).real
            p.add_eq(f"b{k}", [(t[0], -tr_e)], psd_terms=[(Y, e)], rhs=-val)
            if not np.allclose(e, e.T):  # also pin imaginary parts
                pass
        for i in range(d):
            for j in range(i + 1, d):
                e = np.zeros((d, d), dtype=complex)
                e[i, j] = 0.5j
                e[j, i] = -0.5j
                val = np.trace(e @ cmat).real
                p.add_eq(f"im{i}{j}", psd_terms=[(Y, e)], rhs=-val)
        p.set_objective({t[0]: 1.0})
        sol = solve_sdp(p)
        lmax = np.linalg.eigvalsh(cmat).max()
        assert sol.certificate.primal == pytest.approx(lmax, abs=1e-6)

    def test_determinism(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        cmat = 0.5 * (a + a.conj().T)

        def run():
            p = ConicProblem()
            X = p.add_psd_block(4, trace_bound=1.0)
            p.add_eq("tr", psd_terms=[(X, np.eye(4))], rhs=1.0)
            p.set_objective(psd_costs={X: cmat})
            return solve_sdp(p)

        s1, s2 = run(), run()
        assert s1.certificate.iterations == s2.certificate.iterations
        assert s1.certificate.primal == s2.certificate.primal
        assert abs(s1.certificate.dual - s2.certificate.dual) < 1e-12
