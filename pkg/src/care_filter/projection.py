"""Covariance-weighted projection onto linear inequality constraints.

Solves min (z - e)' W (z - e) subject to A z <= b with a primal-dual
active-set search: start at the unconstrained optimum, repeatedly pick the
most violated (row-normalized) constraint and drive it to equality, dropping
working rows whose multipliers would cross zero along the way. Partial dual
steps make the iteration finitely convergent for a positive definite weight,
and an unbounded dual step is a proof that the feasible set is empty. The
weight is the inverse of the estimation error covariance, so the projector
is oblique: gain = P A_bar' (A_bar P A_bar')^{-1} for active rows A_bar with
P = W^{-1}.

`qp_oracle` solves the same problem by brute-force enumeration of active
subsets through the KKT system; it exists so the fast path can be checked
against an independent route, not for production use.
"""

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "ActiveSetLimitError",
    "InfeasibleConstraintsError",
    "ProjectionResult",
    "project",
    "project_attack",
    "project_state",
    "qp_oracle",
]

_FEAS_REL = 1e-10
_DEP_REL = 1e-11
_COND_LIMIT = 1e12
_RANK_TOL = 1e-10
_RIDGE = 1e-10


class InfeasibleConstraintsError(ValueError):
    """The constraint rows admit no feasible point."""


class ActiveSetLimitError(RuntimeError):
    """Active-set search hit its iteration cap without converging.

    Carries the last iterate for diagnosis: estimate, active_set,
    multipliers, max_violation.
    """

    def __init__(self, message, estimate=None, active_set=None, multipliers=None, max_violation=None):
        super().__init__(message)
        self.estimate = estimate
        self.active_set = active_set
        self.multipliers = multipliers
        self.max_violation = max_violation


@dataclass(frozen=True, slots=True)
class ProjectionResult:
    """Outcome of one projection.

    estimate: the projected vector.
    active_set: constraint row indices tight at the optimum (sorted).
    multipliers: KKT multipliers aligned with active_set, all >= 0.
    gain: oblique projection gain, shape (n, len(active_set)).
    covariance: (I - gain A_bar) P (I - gain A_bar)' for P = W^{-1}.
    """

    estimate: np.ndarray
    active_set: tuple
    multipliers: np.ndarray
    gain: np.ndarray
    covariance: np.ndarray


def _as_rows(A, b, n):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("constraint matrix must have one column per estimate entry")
    if A.shape[0] != b.size:
        raise ValueError("constraint matrix and bound vector disagree on row count")
    return A, b


def _independent_rows(Ab, tol=_RANK_TOL):
    """Greedy rank-revealing selection of linearly independent rows.

    Modified Gram-Schmidt with pivoting: repeatedly take the row with the
    largest residual norm, orthogonalize the rest against it, stop when the
    best residual drops below tol relative to the largest original row norm.
    Returns positions into Ab, ascending.
    """
    R = Ab.astype(float, copy=True)
    scale = np.linalg.norm(R, axis=1).max(initial=0.0)
    if scale == 0.0:
        return []
    kept = []
    for _ in range(min(Ab.shape)):
        resid = np.linalg.norm(R, axis=1)
        if kept:
            resid[kept] = -1.0
        pick = int(np.argmax(resid))
        if resid[pick] <= tol * scale:
            break
        kept.append(pick)
        v = R[pick] / resid[pick]
        R -= np.outer(R @ v, v)
        R[pick] = 0.0
    return sorted(kept)


def _extreme_eigs(S):
    """(min, max) eigenvalue of a small symmetric matrix; closed form for
    sizes one and two, LAPACK beyond that."""
    n = S.shape[0]
    if n == 1:
        v = float(S[0, 0])
        return v, v
    if n == 2:
        a, c = float(S[0, 0]), float(S[1, 1])
        bb = 0.5 * float(S[0, 1] + S[1, 0])
        half_tr = 0.5 * (a + c)
        disc = math.hypot(0.5 * (a - c), bb)
        return half_tr - disc, half_tr + disc
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(eig[0]), float(eig[-1])


def _inv_small_sym(S):
    """Inverse of a small symmetric positive definite matrix; closed form
    for sizes one and two, LAPACK beyond that."""
    m = S.shape[0]
    if m == 1:
        return np.array([[1.0 / float(S[0, 0])]])
    if m == 2:
        a, c = float(S[0, 0]), float(S[1, 1])
        bb = 0.5 * float(S[0, 1] + S[1, 0])
        det = a * c - bb * bb
        return np.array([[c, -bb], [-bb, a]]) / det
    return np.linalg.inv(0.5 * (S + S.T))


def _drop_dependent(A, P, work, lam):
    """Safety net: shed rows that leave A_bar P A_bar' numerically singular.

    Returns the surviving rows and multipliers together with A_bar and
    A_bar P A_bar' so the caller does not rebuild them.
    """
    Ab = A[work]
    S = Ab @ P @ Ab.T
    lo, hi = _extreme_eigs(S)
    if lo > 0.0 and hi <= _COND_LIMIT * lo:
        return work, lam, Ab, S
    keep = _independent_rows(Ab)
    work = [work[i] for i in keep]
    lam = lam[keep]
    Ab = A[work]
    S = Ab @ P @ Ab.T
    return work, lam, Ab, S


def _project_core(e, P, A, b, max_iterations=None):
    """Dual active-set projection of e onto {z : A z <= b}, weighted by P^{-1}.

    P may be passed as a zero-argument callable; it is then only evaluated
    once a violated constraint forces actual work, which keeps the common
    nothing-to-do call cheap. In that case a no-op result carries
    covariance None and the caller owns the covariance assembly.
    """
    n = e.size
    A, b = _as_rows(A, b, n)
    q = A.shape[0]

    lazy = callable(P)

    def resolve():
        return P() if lazy else P

    def untouched():
        return ProjectionResult(e.copy(), (), np.empty(0), np.empty((n, 0)),
                                None if lazy else P.copy())

    if q == 0:
        return untouched()

    # cheapest possible exit: every constraint satisfied outright, no
    # tolerance or normalization needed
    if (A @ e - b).max() <= 0.0:
        return untouched()

    row_norms = np.linalg.norm(A, axis=1)
    zero_rows = row_norms == 0.0
    index_map = None
    if zero_rows.any():
        if (b[zero_rows] < 0.0).any():
            raise InfeasibleConstraintsError("zero constraint row with negative bound")
        keep = ~zero_rows
        A, b, row_norms = A[keep], b[keep], row_norms[keep]
        index_map = np.flatnonzero(keep)
        q = A.shape[0]
        if q == 0:
            return untouched()

    feas_tol = _FEAS_REL * (1.0 + float(np.linalg.norm(e)) + float(np.max(np.abs(b) / row_norms)))

    # nothing violated beyond tolerance, no work to do
    viol = (A @ e - b) / row_norms
    p = int(np.argmax(viol))
    if viol[p] <= feas_tol:
        return untouched()

    P = resolve()
    budget = 10 * (q + 1) if max_iterations is None else int(max_iterations)
    work = []               # working set, insertion order
    lam = np.empty(0)       # multipliers aligned with work
    x = e.copy()
    ops = 0

    def overrun(z_now, lam_now):
        return ActiveSetLimitError(
            "active-set projection exceeded its iteration cap",
            estimate=z_now,
            active_set=tuple(work),
            multipliers=lam_now,
            max_violation=float(np.max((A @ z_now - b) / row_norms)),
        )

    while True:
        a = A[p]
        Pa = P @ a
        aPa = float(a @ Pa)
        lam_p = 0.0
        while True:
            if work:
                work, lam, Ab, S = _drop_dependent(A, P, work, lam)
            if work:
                r = np.linalg.solve(0.5 * (S + S.T), Ab @ Pa)
                z = Pa - P @ (Ab.T @ r)
            else:
                r = np.empty(0)
                z = Pa
            az = float(a @ z)
            slack = float(a @ x - b[p])
            t_full = slack / az if az > _DEP_REL * aPa else np.inf

            t_block = np.inf
            blocker = -1
            for pos, rj in enumerate(r):
                if rj > 1e-14:
                    cand = lam[pos] / rj
                    if cand < t_block - 1e-15 or (
                        abs(cand - t_block) <= 1e-15 and (blocker < 0 or work[pos] < work[blocker])
                    ):
                        t_block = cand
                        blocker = pos
            t = min(t_full, t_block)
            if not np.isfinite(t):
                raise InfeasibleConstraintsError(
                    f"constraint row {p if index_map is None else int(index_map[p])} "
                    "cannot be satisfied: empty feasible set"
                )
            ops += 1
            if ops > budget:
                raise overrun(x, lam)
            if t > 0.0:
                x = x - t * z
                if lam.size:
                    lam = lam - t * r
                lam_p += t
            if t_full <= t_block:
                work.append(p)
                lam = np.append(lam, lam_p)
                break
            work.pop(blocker)
            lam = np.delete(lam, blocker)
        viol = (A @ x - b) / row_norms
        p = int(np.argmax(viol))
        if viol[p] <= feas_tol:
            break

    if not work:
        # can only happen if the initial violation evaporated numerically
        return untouched()

    order = np.argsort(work)
    rows_local = [work[i] for i in order]
    lam_sorted = np.maximum(lam[order], 0.0)
    Ab = A[rows_local]
    S = Ab @ P @ Ab.T
    gain = P @ Ab.T @ _inv_small_sym(S)
    shrink = np.eye(n) - gain @ Ab
    cov = shrink @ P @ shrink.T
    cov = 0.5 * (cov + cov.T)
    if index_map is not None:
        active_rows = tuple(int(index_map[w]) for w in rows_local)
    else:
        active_rows = tuple(int(w) for w in rows_local)
    return ProjectionResult(x, active_rows, lam_sorted, gain, cov)


def project(estimate, W, A, b, max_iterations=None) -> ProjectionResult:
    """Project `estimate` onto {z : A z <= b} in the metric of SPD weight W.

    max_iterations overrides the default add/drop budget of 10 * (rows + 1);
    it exists for diagnosis and tests, not for tuning.
    """
    e = np.asarray(estimate, dtype=float).ravel()
    W = np.asarray(W, dtype=float)
    if W.shape != (e.size, e.size):
        raise ValueError("weight matrix shape does not match the estimate")
    Wsym = 0.5 * (W + W.T)
    try:
        np.linalg.cholesky(Wsym)
    except np.linalg.LinAlgError:
        raise ValueError("weight matrix must be symmetric positive definite") from None
    P = np.linalg.inv(Wsym)
    P = 0.5 * (P + P.T)
    return _project_core(e, P, A, b, max_iterations=max_iterations)


def _regularized_cov(P):
    """P when comfortably positive definite, else (pinv(P) + ridge I)^{-1}.

    A Cholesky attempt settles the common well-conditioned case cheaply;
    only on failure does the eigenvalue test decide between passthrough
    and the ridge route.
    """
    Psym = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(Psym)
        return Psym
    except np.linalg.LinAlgError:
        pass
    eig = np.linalg.eigvalsh(Psym)
    n = Psym.shape[0]
    if eig[0] > n * max(eig[-1], 0.0) * 1e-12 and eig[0] > 0.0:
        return Psym
    W = np.linalg.pinv(Psym, hermitian=True) + _RIDGE * np.eye(n)
    Pr = np.linalg.inv(W)
    return 0.5 * (Pr + Pr.T)


def project_attack(atk, A, b):
    """Project an attack estimate onto its inequality set.

    `atk` carries d_hat and P_d (any object with those attributes works).
    The projected covariance is assembled in the symmetric factored form
    (I - gain A_bar) P (I - gain A_bar)' and checked against the short form
    (I - gain A_bar) P to 1e-8, a cheap health test of the active-set solve.
    Returns (d_hat, P_d, ProjectionResult).
    """
    e = np.asarray(atk.d_hat, dtype=float).ravel()
    P = np.asarray(atk.P_d, dtype=float)
    res = _project_core(e, lambda: _regularized_cov(P), A, b)
    if res.active_set:
        Ab = np.asarray(A, dtype=float)[list(res.active_set)]
        shrink = np.eye(e.size) - res.gain @ Ab
        cov = shrink @ P @ shrink.T
        cov = 0.5 * (cov + cov.T)
        short = shrink @ P
        if np.max(np.abs(cov - short)) > 1e-8 * (1.0 + float(np.max(np.abs(P)))):
            raise RuntimeError(
                "projected covariance forms disagree; active-set solve is unreliable"
            )
    else:
        cov = 0.5 * (P + P.T)
    res = ProjectionResult(res.estimate, res.active_set, res.multipliers, res.gain, cov)
    return res.estimate, cov, res


def project_state(upd, B, c):
    """Project a state estimate onto {x : B x <= c}.

    `upd` carries x_hat and P_x. Returns (x_hat, P_x, ProjectionResult).
    """
    e = np.asarray(upd.x_hat, dtype=float).ravel()
    P = np.asarray(upd.P_x, dtype=float)
    res = _project_core(e, lambda: _regularized_cov(P), B, c)
    if res.active_set:
        Bb = np.asarray(B, dtype=float)[list(res.active_set)]
        shrink = np.eye(e.size) - res.gain @ Bb
        cov = shrink @ P @ shrink.T
        cov = 0.5 * (cov + cov.T)
    else:
        cov = 0.5 * (P + P.T)
    res = ProjectionResult(res.estimate, res.active_set, res.multipliers, res.gain, cov)
    return res.estimate, cov, res


def qp_oracle(estimate, W, A, b):
    """Brute-force reference solution of the projection QP.

    Enumerates every subset of constraint rows as a candidate active set,
    solves the KKT system by least squares, and keeps the feasible candidate
    with nonnegative multipliers and the smallest objective. Exponential in
    the row count; intended for verification on small instances only.
    """
    e = np.asarray(estimate, dtype=float).ravel()
    n = e.size
    W = np.asarray(W, dtype=float)
    A, b = _as_rows(A, b, n)
    q = A.shape[0]
    if q > 20:
        raise ValueError("oracle enumeration is limited to 20 constraint rows")

    best_z = None
    best_obj = np.inf
    We = W @ e
    for mask in range(1 << q):
        rows = [i for i in range(q) if mask >> i & 1]
        k = len(rows)
        if k > n:
            continue
        if k == 0:
            z = e.copy()
        else:
            As = A[rows]
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = W
            kkt[:n, n:] = As.T
            kkt[n:, :n] = As
            rhs = np.concatenate([We, b[rows]])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            z, mult = sol[:n], sol[n:]
            if np.max(np.abs(As @ z - b[rows])) > 1e-9 * (1.0 + np.max(np.abs(b[rows]))):
                continue
            if mult.size and mult.min() < -1e-9:
                continue
        if q and np.max(A @ z - b) > 1e-9 * (1.0 + float(np.max(np.abs(b)))):
            continue
        obj = float((z - e) @ W @ (z - e))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_z = z
    if best_z is None:
        raise InfeasibleConstraintsError("no KKT candidate satisfies all constraints")
    return best_z
