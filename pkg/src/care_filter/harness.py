"""Closed-loop simulation of the vehicle scenario with paired filters.

`simulate` propagates the true vehicle under attack, then runs the
constrained filter and the unconstrained baseline on the identical noise
realization. Both filters schedule their matrices on their own previous
speed estimate; the plant uses the true speed. Per-step detector
statistics, CUSUM state and covariance traces are recorded alongside the
estimates, and windowed error metrics are reduced at the end.
"""

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .detector import DetectorConfig, DetectorState, cusum_update, detection_statistic, false_negative_rate
from .estimator import care_step, initial_state
from .model import NoiseSpec, SystemModel
from .vehicle import VehicleParams, attack_input, bicycle_matrices, slip_angle, vehicle_constraints, vehicle_model

__all__ = [
    "FilterRun",
    "RunMetrics",
    "SimulationResult",
    "monte_carlo",
    "simulate",
    "transformed_dynamics",
]


@dataclass(frozen=True)
class RunMetrics:
    """Windowed error/covariance sums plus detector summaries for one filter."""

    sum_sq_state_err: float
    sum_sq_attack_err: float
    sum_trace_px: float
    sum_trace_pd: float
    f_neg: float
    alarm_fraction: float
    sustained_alarm: bool
    max_mcg_dev: float
    max_trace_pxu: float

    def as_row(self):
        return [self.sum_sq_state_err, self.sum_sq_attack_err,
                self.sum_trace_px, self.sum_trace_pd, self.f_neg,
                self.alarm_fraction, float(self.sustained_alarm)]


@dataclass
class FilterRun:
    """Full per-step record for one filter over one realization."""

    name: str
    x_hat: np.ndarray        # (K+1, 4) final estimates, row 0 = initial
    x_hat_raw: np.ndarray    # (K+1, 4) unconstrained posteriors
    d_hat: np.ndarray        # (K, 2) final attack estimates, row k is d_k
    d_hat_raw: np.ndarray    # (K, 2) unconstrained attack estimates
    trace_px: np.ndarray     # (K+1,)
    trace_px_raw: np.ndarray
    trace_pd: np.ndarray     # (K,)
    trace_pd_raw: np.ndarray
    stats: np.ndarray        # (K+1,) detection statistic, row 0 = 0
    cusum: np.ndarray        # (K+1,)
    alarms: np.ndarray       # (K+1,) bool
    input_active: np.ndarray  # (K,) active input-constraint count
    state_active: np.ndarray  # (K,) active state-constraint count
    metrics: RunMetrics = None


@dataclass
class SimulationResult:
    config: ScenarioConfig
    x_true: np.ndarray       # (K+1, 4)
    d_true: np.ndarray       # (K, 2)
    filters: dict            # name -> FilterRun


def transformed_dynamics(A, C, G, M, gamma_bar):
    """Closed-loop error transition of the compensated filter.

    Returns (I - G M (C G M)^+ C) (I - G M C) A gamma_bar, or None when
    C G M is too ill conditioned to invert (condition number above 1e12),
    in which case the stability diagnostic is unavailable for that step.
    """
    CGM = C @ G @ M
    s = np.linalg.svd(CGM, compute_uv=False)
    if s[0] <= 0.0 or s[-1] <= 1e-12 * s[0]:
        return None
    inner = np.linalg.solve(CGM, C)
    A_bar = (np.eye(A.shape[0]) - G @ M @ C) @ A
    return (np.eye(A.shape[0]) - G @ M @ inner) @ A_bar @ gamma_bar


def _control_fn(config: ScenarioConfig):
    u = (config.control_delta, config.control_accel)
    return lambda k: u


def _truth_step(x, u_beta, d, w, params, clamp):
    A, B, G, _ = bicycle_matrices(x[3], params)
    nxt = A @ x + B @ u_beta + G @ d + w
    if clamp:
        nxt[0] = min(max(nxt[0], 0.0), params.x_max)
        nxt[1] = min(max(nxt[1], 0.0), params.y_max)
        nxt[3] = min(max(nxt[3], 0.0), params.v_max)
    return nxt


class _ScheduledModel:
    """Vehicle model reading speeds from a growing per-step list.

    The kinematic matrices for one k are built once and memoized (the
    estimator asks for A(k-1), B(k-1) and G(k-1) several times per step).
    """

    def __init__(self, params):
        self.params = params
        self.speeds = []
        self._cache_k = -1
        self._cache = None
        base = vehicle_model(lambda k: 0.0, params)
        self._model = SystemModel(
            state_dim=4, input_dim=2, attack_dim=2, output_dim=4,
            A=lambda k: self._mats(k)[0],
            B=lambda k: self._mats(k)[1],
            C=base.C, G=lambda k: self._mats(k)[2],
            Q=base.Q, R=base.R,
        )

    def _mats(self, k):
        if k != self._cache_k:
            self._cache = bicycle_matrices(self.speeds[k], self.params)
            self._cache_k = k
        return self._cache

    @property
    def model(self):
        return self._model


def simulate(config: ScenarioConfig, run_index: int = 0,
             filters=("care", "ise"), detector: bool = True) -> SimulationResult:
    """One closed-loop realization; all requested filters see identical y and u.

    `filters` selects which estimators to run ("care" is the constrained
    filter, "ise" the unconstrained baseline); `detector=False` skips the
    per-step test statistic and CUSUM bookkeeping, which matters on very
    long horizons.
    """
    params = VehicleParams(l_f=config.l_f, l_r=config.l_r, T_s=config.t_s)
    K = config.horizon
    x0 = np.array(config.x0, dtype=float)
    control = _control_fn(config)
    detector_cfg = DetectorConfig.from_parameters(config.alpha, df=2, phi=config.phi)

    noise_sched = _ScheduledModel(params)
    noise = NoiseSpec(config.seed, run_index)
    W, V = noise.sample(noise_sched.model, K)

    x_true = np.empty((K + 1, 4))
    x_true[0] = x0
    d_true = np.zeros((K, 2))
    if config.attack == "vehicle":
        for k in range(K):
            d_true[k] = attack_input(k, params)

    constraints = vehicle_constraints(control, params)
    runs = {}
    for name in filters:
        if name not in ("care", "ise"):
            raise ValueError(f"unknown filter {name!r}")
        runs[name] = _FilterLoop(name, _ScheduledModel(params), name == "ise",
                                 config, params, constraints, detector_cfg,
                                 K, x0, detector)

    for k in range(1, K + 1):
        u_raw = control(k - 1)
        u_beta = np.array([slip_angle(u_raw[0], params), u_raw[1]])
        x_true[k] = _truth_step(x_true[k - 1], u_beta, d_true[k - 1],
                                W[k - 1], params, config.clamp_truth)
        y = x_true[k] + V[k]
        for loop in runs.values():
            loop.step(u_beta, y)

    result = SimulationResult(config, x_true, d_true, {})
    for name, loop in runs.items():
        result.filters[name] = loop.finish(x_true, d_true, detector_cfg)
    return result


class _FilterLoop:
    """Stepping state plus per-step recording for one filter."""

    def __init__(self, name, sched, baseline, config, params, constraints,
                 detector_cfg, K, x0, detector=True):
        self.name = name
        self.sched = sched
        self.baseline = baseline
        self.constraints = constraints
        self.detector_cfg = detector_cfg
        self.detector = detector
        self.pd_window_start = config.pd_window_start
        self.alarm_window = (config.alarm_start, config.alarm_end)
        P0 = config.p0_scale * np.eye(4)
        self.state = initial_state(x0, P0)
        sched.speeds.append(float(x0[3]))
        self.det_state = DetectorState()
        self.K = K
        rec = FilterRun(
            name=name,
            x_hat=np.empty((K + 1, 4)), x_hat_raw=np.empty((K + 1, 4)),
            d_hat=np.empty((K, 2)), d_hat_raw=np.empty((K, 2)),
            trace_px=np.empty(K + 1), trace_px_raw=np.empty(K + 1),
            trace_pd=np.empty(K), trace_pd_raw=np.empty(K),
            stats=np.zeros(K + 1), cusum=np.zeros(K + 1),
            alarms=np.zeros(K + 1, dtype=bool),
            input_active=np.zeros(K, dtype=np.int64),
            state_active=np.zeros(K, dtype=np.int64),
        )
        rec.x_hat[0] = x0
        rec.x_hat_raw[0] = x0
        rec.trace_px[0] = np.trace(P0)
        rec.trace_px_raw[0] = np.trace(P0)
        self.rec = rec
        self.max_mcg_dev = 0.0
        self.max_trace_pxu = 0.0
        self._eye2 = np.eye(2)

    def step(self, u_beta, y):
        out = care_step(self.state, self.sched.model, self.constraints,
                        u_beta, y, unconstrained_baseline=self.baseline)
        self.state = out.state
        k = out.state.k
        self.sched.speeds.append(float(out.state.x_hat[3]))
        rec = self.rec
        rec.x_hat[k] = out.state.x_hat
        rec.x_hat_raw[k] = out.update.x_hat
        rec.d_hat[k - 1] = out.d_hat
        rec.d_hat_raw[k - 1] = out.attack.d_hat
        rec.trace_px[k] = out.state.P_x.trace()
        rec.trace_px_raw[k] = out.update.P_x.trace()
        rec.trace_pd[k - 1] = out.P_d.trace()
        rec.trace_pd_raw[k - 1] = out.attack.P_d.trace()
        if out.input_projection is not None:
            rec.input_active[k - 1] = len(out.input_projection.active_set)
            rec.state_active[k - 1] = len(out.state_projection.active_set)

        dev = np.abs(out.attack.M @ self.sched.model.C(k)
                     @ self.sched.model.G(k - 1) - self._eye2).max()
        if dev > self.max_mcg_dev:
            self.max_mcg_dev = dev
        tr = rec.trace_px_raw[k]
        if k > 100 and tr > self.max_trace_pxu:
            self.max_trace_pxu = tr

        if self.detector:
            stat = detection_statistic(out.d_hat, out.P_d)
            self.det_state, alarm = cusum_update(self.det_state, stat,
                                                 self.detector_cfg)
            rec.stats[k] = stat
            rec.cusum[k] = self.det_state.S
            rec.alarms[k] = alarm

    def finish(self, x_true, d_true, detector_cfg) -> FilterRun:
        rec = self.rec
        K = self.K
        cfg = detector_cfg
        x_err = rec.x_hat[1:] - x_true[1:]
        d_err = rec.d_hat - d_true
        attacked = np.any(d_true != 0.0, axis=1)
        if self.detector and attacked.any():
            f_neg = false_negative_rate(rec.stats[1:], cfg.quantile, attacked)
        else:
            f_neg = float("nan")
        w0 = self.pd_window_start
        a0, a1 = self.alarm_window
        a1 = min(a1, K)
        sustained = (bool(rec.alarms[a0:a1 + 1].all())
                     if self.detector and a0 <= K else False)
        rec.metrics = RunMetrics(
            sum_sq_state_err=float(np.sum(x_err ** 2)),
            sum_sq_attack_err=float(np.sum(d_err ** 2)),
            sum_trace_px=float(np.sum(rec.trace_px[1:])),
            sum_trace_pd=float(np.sum(rec.trace_pd[w0:])),
            f_neg=f_neg,
            alarm_fraction=float(np.mean(rec.alarms[1:])) if self.detector else float("nan"),
            sustained_alarm=sustained,
            max_mcg_dev=self.max_mcg_dev,
            max_trace_pxu=self.max_trace_pxu,
        )
        return rec


def monte_carlo(config: ScenarioConfig, runs: int = None, filters=("care", "ise")):
    """Sequential batch of independent realizations; run i uses run_index i.

    Returns the list of SimulationResults.
    """
    n = runs if runs is not None else config.runs
    return [simulate(config, run_index=i, filters=filters) for i in range(n)]
