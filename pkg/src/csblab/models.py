"""Dynamic models and their adaptive Runge-Kutta integration.

Every model is an autonomous-or-not ODE system ``dy/dt = rhs(t, y, p)`` whose
scalar observable is a fixed linear functional of the state. Factor vectors
(parameters followed by initial conditions, in declaration order) are turned
into an initial state and a parameter vector by the model's ``pack`` rule, so
the same compiled integrator serves the dengue model and the analytic test
models.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np

from .core import TimeGrid, Trajectory, as_factor_vector

# status codes returned by the batch kernel
OK = 0
MAX_STEPS = 1
NON_FINITE = 2


class IntegrationError(RuntimeError):
    """The integrator could not produce a finite trajectory."""

    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("integrator tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class ModelDefinition:
    """A named ODE model with a scalar observable.

    ``rhs`` is a numba-compiled ``f(t, y, p, out)`` writing dy/dt into ``out``.
    ``pack`` maps an (N, k) factor matrix to ``(Y0, P)``: initial states of shape
    (N, state_dim) and parameter rows of shape (N, n_params), which is where
    derived constants such as the total human population are computed.
    """

    name: str
    state_dim: int
    factor_names: tuple[str, ...]
    rhs: Callable
    pack: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    observable: np.ndarray
    state_names: tuple[str, ...] = ()
    constants: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.factor_names)


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between the 5th and embedded 4th order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)
# 4th-order continuous extension (Shampine 1986): row i gives the coefficients
# of s, s^2, s^3, s^4 multiplying stage i (stage 2 has none)
_DENSE = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@nb.njit(cache=True, error_model="numpy")
def _rms_norm(v, scale):
    acc = 0.0
    for j in range(v.shape[0]):
        r = v[j] / scale[j]
        acc += r * r
    return np.sqrt(acc / v.shape[0])


@nb.njit(cache=True, error_model="numpy")
def _dopri_single(rhs, y0, p, times, w, rtol, atol, max_steps, out):
    d = y0.shape[0]
    n_t = times.shape[0]
    t = times[0]
    t_end = times[n_t - 1]
    span = t_end - t
    y = y0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    k5 = np.empty(d)
    k6 = np.empty(d)
    k7 = np.empty(d)
    ytmp = np.empty(d)
    ynew = np.empty(d)
    err = np.empty(d)
    scale = np.empty(d)

    rhs(t, y, p, k1)
    for j in range(d):
        if not np.isfinite(k1[j]) or not np.isfinite(y[j]):
            return NON_FINITE
    obs = 0.0
    for j in range(d):
        obs += w[j] * y[j]
    out[0] = obs
    nxt = 1

    # starting step (Hairer, Norsett & Wanner, II.4)
    for j in range(d):
        scale[j] = atol + rtol * abs(y[j])
    d0 = _rms_norm(y, scale)
    d1 = _rms_norm(k1, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6 * span
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    for j in range(d):
        ytmp[j] = y[j] + h0 * k1[j]
    rhs(t + h0, ytmp, p, k2)
    for j in range(d):
        err[j] = k2[j] - k1[j]
    d2 = _rms_norm(err, scale) / h0
    dmax = max(d1, d2)
    if not np.isfinite(dmax):
        h1 = h0 * 1e-3
    elif dmax <= 1e-15:
        h1 = max(1e-6 * span, h0 * 1e-3)
    else:
        h1 = (0.01 / dmax) ** 0.2
    h = min(100.0 * h0, h1, span)
    h_min = 1e-14 * span

    steps = 0
    while nxt < n_t:
        if steps >= max_steps:
            return MAX_STEPS
        steps += 1
        last = False
        if t + h >= t_end or (t_end - (t + h)) < 1e-12 * span:
            h = t_end - t
            last = True

        for j in range(d):
            ytmp[j] = y[j] + h * _A21 * k1[j]
        rhs(t + _C2 * h, ytmp, p, k2)
        for j in range(d):
            ytmp[j] = y[j] + h * (_A31 * k1[j] + _A32 * k2[j])
        rhs(t + _C3 * h, ytmp, p, k3)
        for j in range(d):
            ytmp[j] = y[j] + h * (_A41 * k1[j] + _A42 * k2[j] + _A43 * k3[j])
        rhs(t + _C4 * h, ytmp, p, k4)
        for j in range(d):
            ytmp[j] = y[j] + h * (_A51 * k1[j] + _A52 * k2[j] + _A53 * k3[j] + _A54 * k4[j])
        rhs(t + _C5 * h, ytmp, p, k5)
        for j in range(d):
            ytmp[j] = y[j] + h * (_A61 * k1[j] + _A62 * k2[j] + _A63 * k3[j]
                                  + _A64 * k4[j] + _A65 * k5[j])
        rhs(t + h, ytmp, p, k6)
        for j in range(d):
            ynew[j] = y[j] + h * (_B1 * k1[j] + _B3 * k3[j] + _B4 * k4[j]
                                  + _B5 * k5[j] + _B6 * k6[j])
        t_new = t_end if last else t + h
        rhs(t_new, ynew, p, k7)
        for j in range(d):
            err[j] = h * (_E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j]
                          + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j])
            scale[j] = atol + rtol * max(abs(y[j]), abs(ynew[j]))
        enorm = _rms_norm(err, scale)

        if not np.isfinite(enorm):
            h *= 0.2
            if h < h_min:
                return NON_FINITE
            continue
        if enorm > 1.0:
            h *= max(0.2, 0.9 * enorm ** -0.2)
            if h < h_min:
                return NON_FINITE
            continue

        # accepted: emit grid points in (t, t_new] from the continuous extension
        o0 = 0.0
        o1 = 0.0
        for j in range(d):
            o0 += w[j] * y[j]
            o1 += w[j] * ynew[j]
        dt = t_new - t
        if nxt < n_t and times[nxt] < t_new:
            g1 = 0.0
            g3 = 0.0
            g4 = 0.0
            g5 = 0.0
            g6 = 0.0
            g7 = 0.0
            for j in range(d):
                g1 += w[j] * k1[j]
                g3 += w[j] * k3[j]
                g4 += w[j] * k4[j]
                g5 += w[j] * k5[j]
                g6 += w[j] * k6[j]
                g7 += w[j] * k7[j]
            q = np.empty(4)
            for m in range(4):
                q[m] = (g1 * _DENSE[0, m] + g3 * _DENSE[1, m] + g4 * _DENSE[2, m]
                        + g5 * _DENSE[3, m] + g6 * _DENSE[4, m] + g7 * _DENSE[5, m])
        while nxt < n_t and (times[nxt] <= t_new or last):
            if times[nxt] == t_new or (last and nxt == n_t - 1):
                out[nxt] = o1
            else:
                s = (times[nxt] - t) / dt
                out[nxt] = o0 + dt * s * (q[0] + s * (q[1] + s * (q[2] + s * q[3])))
            nxt += 1

        t = t_new
        for j in range(d):
            y[j] = ynew[j]
            k1[j] = k7[j]
        fac = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
        h = h * fac

    for j in range(n_t):
        if not np.isfinite(out[j]):
            return NON_FINITE
    return OK


@nb.njit(cache=True, error_model="numpy")
def _dopri_batch(rhs, Y0, P, times, w, rtol, atol, max_steps):
    n = Y0.shape[0]
    out = np.full((n, times.shape[0]), np.nan)
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        status[i] = _dopri_single(rhs, Y0[i], P[i], times, w, rtol, atol, max_steps, out[i])
    return out, status


def integrate_batch(model: ModelDefinition, X, grid: TimeGrid,
                    cfg: IntegratorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate every row of the factor matrix ``X``.

    Returns ``(values, status)``: an (N, |grid|) array of observable values and
    an integer status per row (0 ok, 1 step budget exhausted, 2 non-finite
    state). Rows that failed hold NaN.
    """
    cfg = cfg or IntegratorConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.k:
        raise ValueError(f"model {model.name} expects {model.k} factors, got {X.shape[1]}")
    Y0, P = model.pack(X)
    Y0 = np.ascontiguousarray(Y0, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    values, status = _dopri_batch(model.rhs, Y0, P, np.ascontiguousarray(grid.points),
                                  np.ascontiguousarray(model.observable, dtype=float),
                                  cfg.rel_tol, cfg.abs_tol, cfg.max_steps)
    values[status != OK] = np.nan
    return values, status


def integrate(model: ModelDefinition, x, grid: TimeGrid,
              cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate a single factor vector and sample the observable on ``grid``."""
    x = as_factor_vector(x, model.k)
    values, status = integrate_batch(model, x[None, :], grid, cfg)
    if status[0] == MAX_STEPS:
        raise IntegrationError(f"{model.name}: step budget exhausted", MAX_STEPS)
    if status[0] != OK:
        raise IntegrationError(f"{model.name}: non-finite state during integration", NON_FINITE)
    return Trajectory(grid, values[0])


def simulate_states(model: ModelDefinition, x, grid: TimeGrid,
                    cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Full state trajectories on ``grid``, shape (|grid|, state_dim).

    Each state component is extracted by re-running the integrator with a unit
    observable, so the step sequence is identical for every column.
    """
    x = as_factor_vector(x, model.k)
    cols = []
    for j in range(model.state_dim):
        w = np.zeros(model.state_dim)
        w[j] = 1.0
        probe = ModelDefinition(model.name, model.state_dim, model.factor_names,
                                model.rhs, model.pack, w, model.state_names, model.constants)
        cols.append(integrate(probe, x, grid, cfg).values)
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# dengue (vector-borne) model

DENGUE_FACTORS = ("Ms0", "Mi0", "Hs0", "Lambda_v", "beta_m", "mu_m", "beta_h", "mu_h", "gamma_h")
DENGUE_STATES = ("Ms", "Mi", "Hs", "Hi", "Hr")

# estimation ranges and nominal values of the nine fitted factors
DENGUE_RANGES = {
    "Ms0": (0.0, 20_000_000.0),
    "Mi0": (0.0, 1000.0),
    "Hs0": (150_000.0, 400_000.0),
    "Lambda_v": (0.0, 20_000.0),
    "beta_m": (0.0, 4.0),
    "mu_m": (0.0, 0.9),
    "beta_h": (0.0, 4.0),
    "mu_h": (0.0, 0.0009),
    "gamma_h": (0.5, 1.8),
}
DENGUE_NOMINAL = {
    "Ms0": 2_110_000.0,
    "Mi0": 670.0,
    "Hs0": 281_000.0,
    "Lambda_v": 7800.0,
    "beta_m": 0.064,
    "mu_m": 0.1665,
    "beta_h": 0.48,
    "mu_h": 0.00066,
    "gamma_h": 0.500,
}
DENGUE_TOTAL_HUMANS = 410_000.0
DENGUE_INFECTED_HUMANS0 = 10.0


@nb.njit(cache=True, error_model="numpy")
def _dengue_rhs(t, y, p, out):
    lam, beta_m, mu_m, beta_h, mu_h, gamma_h, H = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    Ms, Mi, Hs, Hi, Hr = y[0], y[1], y[2], y[3], y[4]
    M = Ms + Mi
    if M <= 0.0 or H <= 0.0:
        for j in range(5):
            out[j] = np.nan
        return
    inf_m = beta_m * Hi * Ms / H
    inf_h = beta_h * Mi * Hs / M
    out[0] = lam - inf_m - mu_m * Ms
    out[1] = inf_m - mu_m * Mi
    out[2] = mu_h * H - inf_h - mu_h * Hs
    out[3] = inf_h - (mu_h + gamma_h) * Hi
    out[4] = gamma_h * Hi - mu_h * Hr


def dengue_model(total_humans: float = DENGUE_TOTAL_HUMANS,
                 infected_humans0: float = DENGUE_INFECTED_HUMANS0) -> ModelDefinition:
    """Five-state vector-borne transmission model observed through infected humans.

    The total human population is a fixed constant of the problem; the initial
    recovered population closes it: ``Hr0 = H - Hs0 - Hi0``.
    """
    H = float(total_humans)
    hi0 = float(infected_humans0)

    def pack(X):
        n = X.shape[0]
        Y0 = np.empty((n, 5))
        Y0[:, 0] = X[:, 0]
        Y0[:, 1] = X[:, 1]
        Y0[:, 2] = X[:, 2]
        Y0[:, 3] = hi0
        Y0[:, 4] = H - X[:, 2] - hi0
        P = np.empty((n, 7))
        P[:, :6] = X[:, 3:9]
        P[:, 6] = H
        return Y0, P

    return ModelDefinition(
        name="dengue",
        state_dim=5,
        factor_names=DENGUE_FACTORS,
        rhs=_dengue_rhs,
        pack=pack,
        observable=np.array([0.0, 0.0, 0.0, 1.0, 0.0]),
        state_names=DENGUE_STATES,
        constants={"total_humans": H, "infected_humans0": hi0},
    )


def dengue_nominal() -> np.ndarray:
    return np.array([DENGUE_NOMINAL[name] for name in DENGUE_FACTORS])


def dengue_grid(weeks: int = 53) -> TimeGrid:
    """Weekly grid covering ``weeks`` observations (time unit: weeks)."""
    return TimeGrid(np.arange(weeks, dtype=float))


# ---------------------------------------------------------------------------
# analytic test models (constant or closed-form trajectories)

@nb.njit(cache=True)
def _still_rhs(t, y, p, out):
    for j in range(y.shape[0]):
        out[j] = 0.0


@nb.njit(cache=True)
def _decay_rhs(t, y, p, out):
    out[0] = -p[0] * y[0]


def identity_model(extra_factors: int = 0) -> ModelDefinition:
    """y(t) = x1 for all t; ``extra_factors`` inert factors are appended."""
    names = ("x1",) + tuple(f"x{i + 2}" for i in range(extra_factors))

    def pack(X):
        return X[:, :1].copy(), np.zeros((X.shape[0], 1))

    return ModelDefinition("identity", 1, names, _still_rhs, pack, np.array([1.0]))


def additive_model() -> ModelDefinition:
    """y(t) = x1 + 2*x2."""

    def pack(X):
        return (X[:, 0] + 2.0 * X[:, 1])[:, None], np.zeros((X.shape[0], 1))

    return ModelDefinition("additive", 1, ("x1", "x2"), _still_rhs, pack, np.array([1.0]))


def interaction_model() -> ModelDefinition:
    """y(t) = x1 * x2."""

    def pack(X):
        return (X[:, 0] * X[:, 1])[:, None], np.zeros((X.shape[0], 1))

    return ModelDefinition("interaction", 1, ("x1", "x2"), _still_rhs, pack, np.array([1.0]))


def decay_model() -> ModelDefinition:
    """dy/dt = -rate * y with factors (rate, y0)."""

    def pack(X):
        return X[:, 1:2].copy(), X[:, 0:1].copy()

    return ModelDefinition("decay", 1, ("rate", "y0"), _decay_rhs, pack, np.array([1.0]))


def test_models() -> list[ModelDefinition]:
    return [identity_model(), additive_model(), interaction_model()]


test_models.__test__ = False  # keep pytest from collecting it

MODELS: dict[str, Callable[..., ModelDefinition]] = {
    "dengue": dengue_model,
    "identity": identity_model,
    "additive": additive_model,
    "interaction": interaction_model,
    "decay": decay_model,
}


def get_model(name: str, **options) -> ModelDefinition:
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**options)
