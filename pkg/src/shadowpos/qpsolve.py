"""Small dense convex QPs for the three control laws.

Problems are ``min 1/2 u'Hu + f'u  s.t.  W u <= w,  A u = b``. Equalities are
removed by null-space elimination; the remaining inequality problem is solved
with the Goldfarb-Idnani dual active-set method, which starts from the
unconstrained minimizer and therefore needs no feasible initial point. The
Hessian must be positive definite on the null space of ``A`` (the damping terms
guarantee this for every controller here).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

SYM_TOL = 1e-9


class QpError(RuntimeError):
    pass


class Infeasible(QpError):
    pass


class MaxIterations(QpError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    W: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        m = self.H.shape[0]
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        if self.H.shape != (m, m) or self.f.shape != (m,):
            raise ValueError("H must be m x m and f length m")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(self.H))):
            raise ValueError("H is not symmetric")
        self.W, self.w = self._pair(self.W, self.w, m, "inequality")
        self.A, self.b = self._pair(self.A, self.b, m, "equality")

    @staticmethod
    def _pair(M, v, m, what):
        if M is None:
            return np.zeros((0, m)), np.zeros(0)
        M = np.asarray(M, dtype=float).reshape(-1, m)
        v = np.asarray(v, dtype=float).reshape(-1)
        if M.shape[0] != v.shape[0]:
            raise ValueError(f"{what} rows and right-hand side differ in length")
        return M, v

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.f @ u)


def tracking_objective(J, err, eta: float, lam: float, weight: float = 1.0,
                       cols: Optional[slice] = None, m: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Hessian/gradient contribution of ``weight * (|J u_i + eta err|^2 + lam |u_i|^2)``.

    ``J`` acts on the joint block ``cols`` of an ``m``-vector (the whole vector
    when ``cols`` is None).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0 or not 0.0 <= weight <= 1.0:
        raise ValueError("need lam >= 0 and weight in [0, 1]")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    k = J.shape[1]
    m = k if m is None else m
    cols = slice(0, k) if cols is None else cols
    H = np.zeros((m, m))
    f = np.zeros(m)
    H[cols, cols] = weight * (2.0 * J.T @ J + 2.0 * lam * np.eye(k))
    f[cols] = weight * 2.0 * eta * (J.T @ np.asarray(err, dtype=float).reshape(-1))
    return H, f


def rate_objective(J_row, rate: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """``|J_row u - rate|^2 + lam |u|^2`` for a scalar task."""
    j = np.asarray(J_row, dtype=float).reshape(-1)
    m = j.shape[0]
    return 2.0 * np.outer(j, j) + 2.0 * lam * np.eye(m), -2.0 * rate * j


def _null_space(A, b, tol=1e-10):
    """Particular solution and orthonormal null-space basis of ``A u = b``."""
    m = A.shape[1]
    if A.shape[0] == 0:
        return np.zeros(m), np.eye(m)
    U, s, Vt = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * max(1.0, smax)))
    u_p = Vt[:rank].T @ ((U[:, :rank].T @ b) / s[:rank])
    resid = A @ u_p - b
    if np.max(np.abs(resid), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(b), initial=0.0)):
        raise Infeasible("equality constraints are inconsistent")
    return u_p, Vt[rank:].T


def _dual_active_set(G, a, C, s0, max_iter, tol):
    """Goldfarb-Idnani for ``min 1/2 x'Gx + a'x  s.t.  C x <= s0`` (rows of C unit or zero)."""
    n = G.shape[0]
    try:
        cf = cho_factor(G, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise QpError("Hessian is not positive definite") from exc
    x = -cho_solve(cf, a, check_finite=False)
    if C.shape[0] == 0:
        return x, np.zeros(0, dtype=int), np.zeros(0)
    Ginv_Ct = cho_solve(cf, C.T, check_finite=False)  # n x r
    active: list = []
    lam = np.zeros(0)
    it = 0
    while True:
        slack = s0 - C @ x
        p = int(np.argmin(slack))
        if slack[p] >= -tol:
            return x, np.array(active, dtype=int), lam
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise MaxIterations(f"no convergence after {max_iter} iterations")
            n_p = C[p]
            if active:
                N = C[active].T
                GiN = Ginv_Ct[:, active]
                M = N.T @ GiN
                r = np.linalg.solve(M, GiN.T @ n_p)
                z = Ginv_Ct[:, p] - GiN @ r
            else:
                r = np.zeros(0)
                z = Ginv_Ct[:, p]
            # partial (dual) step length
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-12:
                    tj = lam[j] / r[j]
                    if tj < t1:
                        t1, k = tj, j
            viol = float(n_p @ x - s0[p])
            zn = float(z @ n_p)
            t2 = np.inf if zn <= 1e-13 * Ginv_Ct[:, p] @ n_p else viol / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible(f"constraint {p} cannot be satisfied")
            if np.isfinite(t2):
                x = x - t * z
            lam = lam - t * r
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam = np.append(lam, lam_p)
                break
            del active[k]
            lam = np.delete(lam, k)


def solve(p: QpProblem, max_iter: Optional[int] = None, tol: float = 1e-11) -> np.ndarray:
    """Minimizer of ``p``; raises :class:`Infeasible` or :class:`MaxIterations`."""
    m = p.m
    u_p, Z = _null_space(p.A, p.b)
    if Z.shape[1] == 0:
        u = u_p
        if p.W.shape[0] and np.any(p.W @ u - p.w > 1e-8 * (1.0 + np.abs(p.w))):
            raise Infeasible("equality-determined point violates inequalities")
        return u
    G = Z.T @ p.H @ Z
    G = 0.5 * (G + G.T)
    a = Z.T @ (p.H @ u_p + p.f)
    W = p.W @ Z
    w = p.w - p.W @ u_p
    norms = np.linalg.norm(W, axis=1)
    live = norms > 1e-14 * max(1.0, np.max(np.abs(p.W), initial=0.0))
    if np.any(~live & (w < -1e-12 * (1.0 + np.abs(p.w)))):
        raise Infeasible("a constant row is violated")
    C = W[live] / norms[live, None]
    s0 = w[live] / norms[live]
    if max_iter is None:
        max_iter = 10 * (m + C.shape[0]) + 50
    x, _, _ = _dual_active_set(G, a, C, s0, max_iter, tol)
    return u_p + Z @ x


def kkt_residual(p: QpProblem, u, tol: float = 1e-9) -> float:
    """Largest scaled violation of primal feasibility / stationarity at ``u``.

    Multipliers are recovered by nonnegative least squares over the nearly
    active rows, so this is an independent check of a returned solution.
    """
    from scipy.optimize import nnls

    u = np.asarray(u, dtype=float)
    g = p.H @ u + p.f
    scale = max(1.0, np.linalg.norm(g), np.linalg.norm(p.f))
    res = 0.0
    if p.W.shape[0]:
        norms = np.maximum(np.linalg.norm(p.W, axis=1), 1e-300)
        slack = (p.w - p.W @ u) / norms
        res = max(res, float(np.max(-slack, initial=0.0)))
        act = np.where(slack <= 1e-7)[0]
    else:
        act = np.zeros(0, dtype=int)
    if p.A.shape[0]:
        res = max(res, float(np.max(np.abs(p.A @ u - p.b))) / max(1.0, np.max(np.abs(p.b))))
    # g + W_act' mu + A' nu = 0, mu >= 0: split nu into +/- parts for nnls
    cols = [p.W[act].T] if act.size else []
    if p.A.shape[0]:
        cols += [p.A.T, -p.A.T]
    if cols:
        M = np.hstack(cols)
        _, rnorm = nnls(M, -g, maxiter=50 * M.shape[1])
    else:
        rnorm = np.linalg.norm(g)
    return max(res, rnorm / scale)


def cascade(first: QpProblem, second: QpProblem, coupling) -> Tuple[np.ndarray, np.ndarray]:
    """Solve ``first``, then ``second`` with the extra equality
    ``coupling u = coupling u'``; returns ``(u, u')``."""
    u1 = solve(first)
    C = np.atleast_2d(np.asarray(coupling, dtype=float))
    A = np.vstack((second.A, C))
    b = np.concatenate((second.b, C @ u1))
    u = solve(QpProblem(second.H, second.f, second.W, second.w, A, b))
    return u, u1
