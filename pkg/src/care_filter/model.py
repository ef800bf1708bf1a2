"""System descriptions consumed by the estimator and the harness.

Matrices are provided as pure functions of the time index k, so constant
systems and state-scheduled linearizations share one interface. Constraint
sets follow the same convention; an empty matrix (zero rows) means
unconstrained. `NoiseSpec` turns a seed into reproducible Gaussian noise
sequences, and `validate` walks a horizon checking every invariant the
filter relies on, returning a report instead of throwing.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .projection import ActiveSetLimitError, InfeasibleConstraintsError, project

__all__ = [
    "ConstraintSet",
    "NoiseSpec",
    "SystemModel",
    "ValidationReport",
    "validate",
]

MatrixProvider = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Linear time-varying system x_{k+1} = A_k x_k + B_k u_k + G_k d_k + w_k,
    y_k = C_k x_k + v_k, with w ~ N(0, Q_k) and v ~ N(0, R_k)."""

    state_dim: int
    input_dim: int
    attack_dim: int
    output_dim: int
    A: MatrixProvider
    B: MatrixProvider
    C: MatrixProvider
    G: MatrixProvider
    Q: MatrixProvider
    R: MatrixProvider

    @classmethod
    def constant(cls, A, B, C, G, Q, R) -> "SystemModel":
        """Wrap fixed arrays as constant-in-k providers."""
        A, B, C, G, Q, R = (np.array(M, dtype=float) for M in (A, B, C, G, Q, R))
        return cls(
            state_dim=A.shape[0],
            input_dim=B.shape[1],
            attack_dim=G.shape[1],
            output_dim=C.shape[0],
            A=lambda k: A,
            B=lambda k: B,
            C=lambda k: C,
            G=lambda k: G,
            Q=lambda k: Q,
            R=lambda k: R,
        )


@dataclass(frozen=True)
class ConstraintSet:
    """Inequality constraints on the attack input and on the state.

    input_matrix(k) z <= input_bound(k) constrains the attack estimate at
    step k; state_matrix(k) x <= state_bound(k) constrains the state
    estimate. Zero-row matrices mean unconstrained. Feasibility of constant
    sets is probed at construction; provider-based sets are checked per step
    by `validate` and, operationally, by the projection itself (which raises
    on an empty feasible set).
    """

    input_matrix: MatrixProvider
    input_bound: MatrixProvider
    state_matrix: MatrixProvider
    state_bound: MatrixProvider

    @classmethod
    def unconstrained(cls, attack_dim: int, state_dim: int) -> "ConstraintSet":
        Ad = np.zeros((0, attack_dim))
        bd = np.zeros(0)
        Bx = np.zeros((0, state_dim))
        cx = np.zeros(0)
        return cls(lambda k: Ad, lambda k: bd, lambda k: Bx, lambda k: cx)

    @classmethod
    def constant(cls, input_matrix=None, input_bound=None, state_matrix=None,
                 state_bound=None, attack_dim=None, state_dim=None) -> "ConstraintSet":
        """Fixed constraint arrays; pass None with the matching dim for an
        unconstrained block. Probes both feasible sets for emptiness."""
        if input_matrix is None:
            if attack_dim is None:
                raise ValueError("attack_dim required when input constraints are omitted")
            Ad, bd = np.zeros((0, attack_dim)), np.zeros(0)
        else:
            Ad = np.array(input_matrix, dtype=float)
            bd = np.array(input_bound, dtype=float).ravel()
        if state_matrix is None:
            if state_dim is None:
                raise ValueError("state_dim required when state constraints are omitted")
            Bx, cx = np.zeros((0, state_dim)), np.zeros(0)
        else:
            Bx = np.array(state_matrix, dtype=float)
            cx = np.array(state_bound, dtype=float).ravel()
        for name, Mrows, bound in (("input", Ad, bd), ("state", Bx, cx)):
            if Mrows.shape[0]:
                try:
                    project(np.zeros(Mrows.shape[1]), np.eye(Mrows.shape[1]), Mrows, bound)
                except (InfeasibleConstraintsError, ActiveSetLimitError) as err:
                    raise InfeasibleConstraintsError(
                        f"{name} constraint set is empty: {err}"
                    ) from None
        return cls(lambda k: Ad, lambda k: bd, lambda k: Bx, lambda k: cx)


def _psd_factor(M):
    """Cholesky factor of a PSD matrix; eigendecomposition fallback with
    negative eigenvalues clamped to zero (handles singular Q)."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded Gaussian noise source for simulation.

    `sample` draws the whole horizon at once: W[k] ~ N(0, Q(k)) is the
    process noise applied in the k -> k+1 transition, V[k] ~ N(0, R(k)) the
    measurement noise on y_k for k >= 1 (row 0 stays zero; y_0 is never
    consumed). Identical (seed, run_index) pairs reproduce identical arrays
    bit for bit on one platform, and a shorter horizon yields a prefix of a
    longer one.
    """

    seed: int
    run_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.run_index,))
        return np.random.default_rng(ss)

    def sample(self, model: SystemModel, horizon: int):
        m, n_y = model.state_dim, model.output_dim
        z = self.generator().standard_normal((horizon, m + n_y))
        W = np.empty((horizon, m))
        V = np.zeros((horizon + 1, n_y))
        q_prev = r_prev = None
        Lq = Lr = None
        for k in range(horizon):
            Qk = model.Q(k)
            if q_prev is None or Qk is not q_prev and not np.array_equal(Qk, q_prev):
                Lq = _psd_factor(np.asarray(Qk, dtype=float))
                q_prev = Qk
            Rk = model.R(k + 1)
            if r_prev is None or Rk is not r_prev and not np.array_equal(Rk, r_prev):
                Lr = _psd_factor(np.asarray(Rk, dtype=float))
                r_prev = Rk
            W[k] = Lq @ z[k, :m]
            V[k + 1] = Lr @ z[k, m:]
        return W, V


@dataclass
class ValidationReport:
    """Accumulated invariant violations; empty means everything checked out."""

    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, msg: str):
        self.issues.append(msg)

    def __str__(self):
        return "all checks passed" if self.ok else "\n".join(self.issues)


def _shape_of(provider, k, rows, cols, name, report):
    M = np.asarray(provider(k))
    if M.shape != (rows, cols):
        report.add(f"{name}({k}) has shape {M.shape}, expected {(rows, cols)}")
        return None
    return M.astype(float)


def validate(model: SystemModel, constraints: ConstraintSet, horizon: int) -> ValidationReport:
    """Walk the horizon and report every violated invariant with its k.

    Checks dimensions, Q PSD, R PD (by Cholesky), rank(C(k) G(k-1)) = n_d,
    rank of the state-constraint rows strictly below the state dimension,
    non-empty feasible sets, and provider determinism at spot-check indices.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rep = ValidationReport()
    m, n_u = model.state_dim, model.input_dim
    n_d, n_y = model.attack_dim, model.output_dim

    for k in range(horizon + 1):
        A = _shape_of(model.A, k, m, m, "A", rep)
        _shape_of(model.B, k, m, n_u, "B", rep)
        C = _shape_of(model.C, k, n_y, m, "C", rep)
        G = _shape_of(model.G, k, m, n_d, "G", rep)
        Q = _shape_of(model.Q, k, m, m, "Q", rep)
        R = _shape_of(model.R, k, n_y, n_y, "R", rep)

        if Q is not None:
            eig = np.linalg.eigvalsh(0.5 * (Q + Q.T))
            if eig[0] < -1e-10 * (1.0 + float(np.abs(eig).max())):
                rep.add(f"Q({k}) is not positive semidefinite (min eigenvalue {eig[0]:.3e})")
        if R is not None:
            try:
                np.linalg.cholesky(0.5 * (R + R.T))
            except np.linalg.LinAlgError:
                rep.add(f"R({k}) is not positive definite")
        if k >= 1 and C is not None:
            Gp = np.asarray(model.G(k - 1), dtype=float)
            if Gp.shape == (m, n_d) and np.linalg.matrix_rank(C @ Gp) < n_d:
                rep.add(f"rank(C({k}) G({k - 1})) is below the attack dimension")

        Ad = np.asarray(constraints.input_matrix(k), dtype=float)
        bd = np.asarray(constraints.input_bound(k), dtype=float).ravel()
        Bx = np.asarray(constraints.state_matrix(k), dtype=float)
        cx = np.asarray(constraints.state_bound(k), dtype=float).ravel()
        if Ad.shape[0] != bd.size:
            rep.add(f"input constraints at k={k} disagree on row count")
        if Bx.shape[0] != cx.size:
            rep.add(f"state constraints at k={k} disagree on row count")
        if Bx.shape[0] and np.linalg.matrix_rank(Bx) >= m:
            rep.add(f"state constraint rows at k={k} have rank >= state dimension")
        for name, Mrows, bound, dim in (("input", Ad, bd, n_d), ("state", Bx, cx, m)):
            if Mrows.shape[0] and Mrows.shape == (bound.size, dim):
                try:
                    project(np.zeros(dim), np.eye(dim), Mrows, bound)
                except (InfeasibleConstraintsError, ActiveSetLimitError):
                    rep.add(f"{name} constraint set at k={k} looks empty")

    for k in (0, max(horizon // 2, 1), horizon):
        for name, provider in (("A", model.A), ("B", model.B), ("C", model.C),
                               ("G", model.G), ("Q", model.Q), ("R", model.R)):
            first = np.asarray(provider(k))
            second = np.asarray(provider(k))
            if not np.array_equal(first, second):
                rep.add(f"provider {name} is not deterministic at k={k}")
    return rep
