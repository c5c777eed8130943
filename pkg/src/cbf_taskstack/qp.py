"""Small dense strictly convex QPs: ``min 1/2 z'Hz + f'z  s.t.  Az >= b``.

``solve_qp`` is a dual active-set method (Goldfarb-Idnani). It starts at the
unconstrained minimizer and adds violated constraints one at a time, so it
needs no feasible starting point and certifies infeasibility on its own.
``solve_qp_oracle`` enumerates active sets and is only meant for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from numba import njit

from .errors import (
    DimensionMismatch,
    Infeasible,
    IterationLimit,
    NotPositiveDefinite,
    TooManyConstraints,
)

TOL = 1e-9
ORACLE_MAX_CONSTRAINTS = 20


@dataclass(frozen=True, eq=False)
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise DimensionMismatch(f"H must be square, got {H.shape}")
        f = np.zeros(d) if self.f is None else np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape != (d,):
            raise DimensionMismatch(f"f has length {f.size}, expected {d}")
        A = np.zeros((0, d)) if self.A is None else np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, d)
        if A.ndim != 2 or A.shape[1] != d:
            raise DimensionMismatch(f"A has shape {A.shape}, expected (m, {d})")
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape != (A.shape[0],):
            raise DimensionMismatch(f"b has length {b.size}, A has {A.shape[0]} rows")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def validate(self):
        """Full invariant check (symmetry, positive definiteness, finiteness)."""
        for name in ("H", "f", "A", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise NotPositiveDefinite("H is not symmetric")
        if np.linalg.eigvalsh(self.H)[0] <= 0.0:
            raise NotPositiveDefinite("H has a non-positive eigenvalue")


@dataclass(frozen=True, eq=False)
class QPSolution:
    z_star: np.ndarray
    active_set: tuple
    multipliers: np.ndarray
    objective: float
    iterations: int = 0
    warm_started: bool = False


@dataclass(frozen=True)
class KKTReport:
    stationarity_residual: float
    primal_violation: float
    complementarity_residual: float
    dual_violation: float
    tol: float = 1e-8
    scale: float = 1.0

    @property
    def ok(self) -> bool:
        bound = self.tol * self.scale
        return max(
            self.stationarity_residual,
            self.primal_violation,
            self.complementarity_residual,
            self.dual_violation,
        ) <= bound


def _violation_tol(b):
    return TOL * (1.0 + np.abs(b))


_OK, _INFEASIBLE, _ITER_LIMIT, _NOT_PD, _ASYMMETRIC = 0, 1, 2, 3, 4


@njit(cache=True)
def _cholesky(G, k):
    """In-place lower Cholesky of the leading k x k block; False if not PD."""
    for j in range(k):
        s = G[j, j]
        for p in range(j):
            s -= G[j, p] * G[j, p]
        if s <= 0.0 or not np.isfinite(s):
            return False
        G[j, j] = np.sqrt(s)
        for i in range(j + 1, k):
            s = G[i, j]
            for p in range(j):
                s -= G[i, p] * G[j, p]
            G[i, j] = s / G[j, j]
    return True


@njit(cache=True)
def _chol_solve(L, k, x):
    for i in range(k):
        s = x[i]
        for p in range(i):
            s -= L[i, p] * x[p]
        x[i] = s / L[i, i]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for p in range(i + 1, k):
            s -= L[p, i] * x[p]
        x[i] = s / L[i, i]


@njit(cache=True)
def _gram_solve(W, active, k, rhs, G, rel):
    """Solve (B'B) x = rhs in place for B = W[:, active[:k]]; False if B is rank deficient."""
    d = W.shape[0]
    for i in range(k):
        for j in range(i + 1):
            s = 0.0
            for r in range(d):
                s += W[r, active[i]] * W[r, active[j]]
            G[i, j] = s
    diag_max = 0.0
    for i in range(k):
        diag_max = max(diag_max, G[i, i])
    if not _cholesky(G, k):
        return False
    for i in range(k):
        if G[i, i] * G[i, i] <= rel * diag_max:
            return False
    _chol_solve(G, k, rhs)
    return True


@njit(cache=True)
def _equality_solve(W, c, b, active, k, y, lam, G):
    """y = argmin 1/2|y|^2 + c'y s.t. W[:, active]'y = b[active]; multipliers into lam."""
    d = W.shape[0]
    for i in range(k):
        s = b[active[i]]
        for r in range(d):
            s += W[r, active[i]] * c[r]
        lam[i] = s
    if not _gram_solve(W, active, k, lam, G, 1e-24):
        return False
    for r in range(d):
        s = -c[r]
        for i in range(k):
            s += W[r, active[i]] * lam[i]
        y[r] = s
    return True


@njit(cache=True)
def _solve_kernel(H, f, A, b, tol, max_iter, hint, n_hint):
    d = H.shape[0]
    m = A.shape[0]
    y = np.zeros(d)
    active = np.zeros(max(m, 1), dtype=np.int64)
    lam = np.zeros(max(m, 1) + 1)
    G = np.zeros((max(m, 1) + 1, max(m, 1) + 1))
    status = _OK

    scale = 1.0
    for i in range(d):
        for j in range(d):
            scale = max(scale, abs(H[i, j]))
    for i in range(d):
        for j in range(i):
            if abs(H[i, j] - H[j, i]) > 1e-10 * scale:
                return y, active, 0, lam, 0, _ASYMMETRIC, False
    L = H.copy()
    if not _cholesky(L, d):
        return y, active, 0, lam, 0, _NOT_PD, False
    # y = L'z turns the cost into 1/2|y|^2 + c'y and the constraints into W'y >= b
    c = f.copy()
    for i in range(d):
        s = c[i]
        for p in range(i):
            s -= L[i, p] * c[p]
        c[i] = s / L[i, i]
    W = np.empty((d, m))
    for j in range(m):
        for i in range(d):
            s = A[j, i]
            for p in range(i):
                s -= L[i, p] * W[p, j]
            W[i, j] = s / L[i, i]
    thresh = np.empty(m)
    for j in range(m):
        thresh[j] = tol * (1.0 + abs(b[j]))

    if n_hint > 0:
        for i in range(n_hint):
            active[i] = hint[i]
        if _equality_solve(W, c, b, active, n_hint, y, lam, G):
            ok = True
            for i in range(n_hint):
                if lam[i] < -tol:
                    ok = False
            if ok:
                for j in range(m):
                    s = -b[j]
                    for r in range(d):
                        s += W[r, j] * y[r]
                    if s < -thresh[j]:
                        ok = False
                        break
            if ok:
                return _back(L, y), active, n_hint, lam, 0, _OK, True

    for r in range(d):
        y[r] = -c[r]
    k = 0
    iterations = 0
    u = np.zeros(m + 1)
    rvec = np.zeros(m + 1)
    step = np.zeros(d)
    done = False
    while not done:
        k_add = -1
        for j in range(m):
            s = -b[j]
            for r in range(d):
                s += W[r, j] * y[r]
            if s < -thresh[j]:
                k_add = j
                break
        if k_add < 0:
            break
        ww = 0.0
        for r in range(d):
            ww += W[r, k_add] * W[r, k_add]
        u_add = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                return _back(L, y), active, k, u, iterations, _ITER_LIMIT, False
            for i in range(k):
                s = 0.0
                for r in range(d):
                    s += W[r, active[i]] * W[r, k_add]
                rvec[i] = s
            if k > 0 and not _gram_solve(W, active, k, rvec, G, 0.0):
                return _back(L, y), active, k, u, iterations, _INFEASIBLE, False
            for r in range(d):
                s = W[r, k_add]
                for i in range(k):
                    s -= W[r, active[i]] * rvec[i]
                step[r] = s
            curvature = 0.0
            s_add = -b[k_add]
            for r in range(d):
                curvature += step[r] * W[r, k_add]
                s_add += W[r, k_add] * y[r]
            t_full = np.inf
            if curvature > 1e-14 * max(1.0, ww):
                t_full = -s_add / curvature
            t_part = np.inf
            k_drop = -1
            for i in range(k):
                if rvec[i] > 1e-14:
                    ratio = u[i] / rvec[i]
                    if ratio < t_part:
                        t_part = ratio
                        k_drop = i
            if t_full == np.inf and t_part == np.inf:
                return _back(L, y), active, k, u, iterations, _INFEASIBLE, False
            if t_full <= t_part:
                for r in range(d):
                    y[r] += t_full * step[r]
                for i in range(k):
                    u[i] -= t_full * rvec[i]
                active[k] = k_add
                u[k] = u_add + t_full
                k += 1
                break
            if t_full != np.inf:
                for r in range(d):
                    y[r] += t_part * step[r]
            for i in range(k):
                u[i] -= t_part * rvec[i]
            u_add += t_part
            for i in range(k_drop, k - 1):
                active[i] = active[i + 1]
                u[i] = u[i + 1]
            k -= 1

    # re-solve on the final active set so warm and cold paths share one formula
    y_pol = np.empty(d)
    if _equality_solve(W, c, b, active, k, y_pol, lam, G):
        ok = True
        for i in range(k):
            if lam[i] < -tol:
                ok = False
        if ok:
            return _back(L, y_pol), active, k, lam, iterations, _OK, False
    return _back(L, y), active, k, u, iterations, _OK, False


@njit(cache=True)
def _back(L, y):
    """z = L^-T y."""
    d = y.shape[0]
    z = y.copy()
    for i in range(d - 1, -1, -1):
        s = z[i]
        for p in range(i + 1, d):
            s -= L[p, i] * z[p]
        z[i] = s / L[i, i]
    return z


def solve_qp(p: QPProblem, warm_start=None, max_iter=None) -> QPSolution:
    """Solve ``p`` exactly up to rounding.

    ``warm_start`` is a guess of the active set (e.g. the previous time step's).
    When the guess is optimal the solution is returned after a single
    equality-constrained solve; otherwise the cold dual iteration runs.
    Constraints are added lowest-index-first, so the path is deterministic.
    """
    m = p.m
    hint = np.zeros(0, dtype=np.int64)
    if warm_start:
        hint = np.array(sorted({int(i) for i in warm_start if 0 <= int(i) < m}), dtype=np.int64)
    if max_iter is None:
        max_iter = 50 * (p.d + m)
    z, active, k, lam, iterations, status, warm = _solve_kernel(
        p.H, p.f, p.A, p.b, TOL, max_iter, hint, hint.size
    )
    if status == _ASYMMETRIC:
        raise NotPositiveDefinite("H is not symmetric")
    if status == _NOT_PD:
        raise NotPositiveDefinite("Cholesky factorization of H failed")
    if status == _INFEASIBLE:
        raise Infeasible("the constraints admit no feasible point")
    if status == _ITER_LIMIT:
        raise IterationLimit(f"no convergence after {max_iter} iterations")
    mult = np.zeros(m)
    idx = active[:k]
    order = np.argsort(idx, kind="stable")
    idx = idx[order]
    mult[idx] = lam[:k][order]
    return QPSolution(z, tuple(int(i) for i in idx), mult, p.objective(z), int(iterations), bool(warm))


def solve_qp_oracle(p: QPProblem) -> QPSolution:
    """Brute-force KKT enumeration over every active subset of size <= d."""
    if p.m > ORACLE_MAX_CONSTRAINTS:
        raise TooManyConstraints(f"{p.m} constraints exceed the oracle limit {ORACLE_MAX_CONSTRAINTS}")
    d, m = p.d, p.m
    tol = _violation_tol(p.b)
    best = None
    for k in range(min(d, m) + 1):
        for subset in combinations(range(m), k):
            idx = list(subset)
            As = p.A[idx]
            kkt = np.zeros((d + k, d + k))
            kkt[:d, :d] = p.H
            kkt[:d, d:] = -As.T
            kkt[d:, :d] = As
            rhs = np.concatenate([-p.f, p.b[idx]])
            try:
                if k and np.linalg.matrix_rank(As) < k:
                    continue
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, mu = sol[:d], sol[d:]
            if np.any(mu < -1e-9) or np.any(p.A @ z - p.b < -tol):
                continue
            obj = p.objective(z)
            if best is None or obj < best[0] - 1e-14:
                mult = np.zeros(m)
                mult[idx] = mu
                best = (obj, z, subset, mult)
    if best is None:
        raise Infeasible("no active subset yields a feasible KKT point")
    obj, z, subset, mult = best
    return QPSolution(z, tuple(subset), mult, obj)


def check_kkt(p: QPProblem, s: QPSolution, tol: float = 1e-8) -> KKTReport:
    z = np.asarray(s.z_star, dtype=float)
    mu = np.asarray(s.multipliers, dtype=float)
    if z.shape != (p.d,) or mu.shape != (p.m,):
        raise DimensionMismatch(f"solution dims z={z.shape}, mu={mu.shape} for d={p.d}, m={p.m}")
    gap = p.A @ z - p.b
    stat = np.abs(p.H @ z + p.f - p.A.T @ mu).max(initial=0.0)
    primal = np.maximum(0.0, -gap).max(initial=0.0)
    comp = abs(float(mu @ gap))
    dual = np.maximum(0.0, -mu).max(initial=0.0)
    scale = max(
        1.0,
        np.abs(p.H).max(initial=0.0) * np.abs(z).max(initial=0.0),
        np.abs(p.f).max(initial=0.0),
        np.abs(p.A).max(initial=0.0) * max(np.abs(mu).max(initial=0.0), np.abs(z).max(initial=0.0)),
        np.abs(p.b).max(initial=0.0),
    )
    return KKTReport(float(stat), float(primal), float(comp), float(dual), tol, float(scale))
