"""Variable-step, variable-order NDF integrator for ``M y' = f(t, y)``.

The formulas, difference-array bookkeeping and order selection follow the
quasi-constant step-size NDF family (BDF when ``kappa = 0``). ``M`` may be
singular; algebraic rows are those with a zero mass row. Newton uses the
convergence-rate test of stiff multistep codes, with the contraction rate
remembered across steps so well-predicted steps finish after one iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .banded import BandMatrix, SingularMatrixError

MAX_ORDER = 5
KAPPA = np.array([0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0])
GAMMA = np.hstack((0.0, np.cumsum(1.0 / np.arange(1, MAX_ORDER + 1))))
ALPHA = (1.0 - KAPPA) * GAMMA
ERROR_CONST = KAPPA * GAMMA + 1.0 / np.arange(1, MAX_ORDER + 2)


class IntegrationError(RuntimeError):
    """Step size underflow or unrecoverable solver failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class IntegratorConfig:
    """Tolerances and limits of the time integrator.

    ``newton_tol`` bounds the estimated remaining Newton error measured in
    the same weighted RMS norm as the local error (units of tolerance).
    """

    rel_tol_t: float = 1e-5
    abs_tol_t: float = 1e-8
    tau_0: float = 1e-6
    tau_max: float = 1e-2
    tau_min: float = 1e-14
    max_order: int = 2
    newton_tol: float = 0.03
    newton_max_iter: int = 12
    safety: float = 0.8
    min_factor: float = 0.2
    max_factor: float = 2.5

    def validate(self) -> "IntegratorConfig":
        if not 0.0 < self.tau_0 <= self.tau_max:
            raise ValueError("tau_0: need 0 < tau_0 <= tau_max")
        if not 1 <= self.max_order <= MAX_ORDER:
            raise ValueError(f"max_order: must lie in 1..{MAX_ORDER}")
        if self.rel_tol_t <= 0.0 or self.abs_tol_t <= 0.0:
            raise ValueError("rel_tol_t/abs_tol_t: must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter: must be >= 1")
        return self


@dataclass
class StepRecord:
    """One accepted step."""

    t: float
    tau: float
    order: int
    newton_iters: int
    SOC: float = float("nan")
    c_surf: float = float("nan")
    sigma_phi_surf: float = float("nan")
    eps_pl_v_surf: float = float("nan")
    U_voltage: float = float("nan")
    n_rejected: int = 0

    CSV_COLUMNS = ("t", "tau", "order", "newton_iters", "SOC", "c_surf",
                   "sigma_phi_surf", "eps_pl_v_surf", "U_voltage")


class DAEProblem(Protocol):
    """Interface the integrator needs from a semi-discrete problem."""

    n: int

    def mass(self) -> BandMatrix: ...

    def evaluate(self, t: float, y: np.ndarray, tau: float, jacobian: bool = False):
        """Return ``(f, J)``; ``J`` is ``None`` unless requested."""

    def accept(self, t: float, y: np.ndarray, tau: float) -> None:
        """Commit internal history after an accepted step."""


@dataclass
class HistoryBuffer:
    """Modified divided differences ``D`` of past solutions, and the order."""

    D: np.ndarray
    order: int = 1
    h: float = 0.0
    n_equal_steps: int = 0

    @property
    def alpha(self) -> float:
        return float(ALPHA[self.order])

    def predict(self) -> np.ndarray:
        return np.sum(self.D[:self.order + 1], axis=0)

    def psi(self) -> np.ndarray:
        k = self.order
        return (self.D[1:k + 1].T @ GAMMA[1:k + 1]) / ALPHA[k]

    def rescale(self, factor: float):
        change_D(self.D, self.order, factor)
        self.h *= factor
        self.n_equal_steps = 0

    def update(self, d: np.ndarray):
        k = self.order
        self.D[k + 2] = d - self.D[k + 1]
        self.D[k + 1] = d
        for i in reversed(range(k + 1)):
            self.D[i] += self.D[i + 1]
        self.n_equal_steps += 1


def compute_R(order: int, factor: float) -> np.ndarray:
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1.0
    return np.cumprod(M, axis=0)


def change_D(D: np.ndarray, order: int, factor: float):
    """Rescale the difference array for a step-size change by ``factor``."""
    RU = compute_R(order, factor) @ compute_R(order, 1.0)
    D[:order + 1] = RU.T @ D[:order + 1]


def weighted_rms(x, scale) -> float:
    return float(np.sqrt(np.mean((np.asarray(x) / scale) ** 2)))


@dataclass
class NewtonResult:
    converged: bool
    y: np.ndarray
    d: np.ndarray
    n_iter: int
    rate: float | None
    norms: list = field(default_factory=list)


def newton_solve(residual, solve, y_guess, scale, config: IntegratorConfig,
                 rate: float | None = None, d0=None, first_residual=None,
                 refresh=None) -> NewtonResult:
    """Simplified Newton iteration with a rate-based stopping test.

    Parameters
    ----------
    residual : callable
        ``residual(y) -> G`` with ``G = 0`` at the solution.
    solve : callable
        Applies the inverse of the (possibly frozen) iteration matrix.
    rate : float, optional
        Contraction rate remembered from earlier solves; lets the first
        update be accepted when it is already small enough.
    refresh : callable, optional
        ``refresh(y) -> (G, solve)``; when given, the iteration matrix is
        rebuilt at every iterate (full Newton).
    """
    y = np.array(y_guess, dtype=float)
    d = np.zeros_like(y) if d0 is None else np.array(d0, dtype=float)
    tol = config.newton_tol
    min_norm = 100.0 * np.finfo(float).eps
    old = None
    norms = []
    for k in range(config.newton_max_iter):
        if refresh is not None and k > 0:
            G, solve = refresh(y)
        else:
            G = first_residual if (k == 0 and first_residual is not None) else residual(y)
        dy = solve(-G)
        if not np.all(np.isfinite(dy)):
            return NewtonResult(False, y, d, k + 1, rate, norms)
        norm = weighted_rms(dy, scale)
        norms.append(norm)
        y += dy
        d += dy
        if norm <= min_norm:
            return NewtonResult(True, y, d, k + 1, rate, norms)
        if old is None:
            if rate is not None and norm * rate / (1.0 - rate) <= tol:
                return NewtonResult(True, y, d, k + 1, rate, norms)
        else:
            if norm > 0.9 * old:
                return NewtonResult(False, y, d, k + 1, rate, norms)
            rate = max(0.9 * rate, norm / old) if rate is not None else norm / old
            err = norm * rate / (1.0 - rate)
            if err <= tol:
                return NewtonResult(True, y, d, k + 1, rate, norms)
            left = config.newton_max_iter - k - 1
            if left <= 0 or rate**left / (1.0 - rate) * norm > tol:
                return NewtonResult(False, y, d, k + 1, rate, norms)
        old = norm
    return NewtonResult(False, y, d, config.newton_max_iter, rate, norms)


def error_control(error_norm: float, order: int, tau: float, config: IntegratorConfig):
    """Accept/reject a step and propose the next step size for a rejection.

    Returns ``(accept, factor)``; for accepted steps the factor is the
    same-order proposal (order selection refines it later).
    """
    if error_norm <= 1.0:
        if error_norm == 0.0:
            return True, config.max_factor
        f = config.safety * error_norm ** (-1.0 / (order + 1))
        return True, float(np.clip(f, config.min_factor, config.max_factor))
    f = max(config.min_factor, config.safety * error_norm ** (-1.0 / (order + 1)))
    return False, float(f)


def select_order(D, order, scale, error_norm, config: IntegratorConfig):
    """Choose among ``k-1, k, k+1`` from scaled error estimates."""
    if order > 1:
        e_m = weighted_rms(ERROR_CONST[order - 1] * D[order], scale)
    else:
        e_m = np.inf
    if order < config.max_order:
        e_p = weighted_rms(ERROR_CONST[order + 1] * D[order + 2], scale)
    else:
        e_p = np.inf
    norms = np.array([e_m, error_norm, e_p])
    with np.errstate(divide="ignore"):
        factors = norms ** (-1.0 / np.arange(order, order + 3))
    delta = int(np.argmax(factors)) - 1
    factor = min(config.max_factor, config.safety * float(np.max(factors)))
    return order + delta, factor


@dataclass
class StepInfo:
    t: float
    tau: float
    order: int
    newton_iters: int
    n_rejected: int


class NDFIntegrator:
    """Variable-order NDF stepping with event-aware step clipping."""

    def __init__(self, problem: DAEProblem, t0: float, y0, config: IntegratorConfig | None = None,
                 ydot0=None):
        self.config = (config or IntegratorConfig()).validate()
        self.timings = {"assembly": 0.0, "solve": 0.0}
        self.n_jac = 0
        self.n_fev = 0
        self.restart(problem, t0, y0, self.config.tau_0, ydot0)

    # setup ------------------------------------------------------------
    def restart(self, problem: DAEProblem, t, y, h, ydot=None):
        """(Re)start at order one from a consistent state."""
        self.problem = problem
        self.M = problem.mass()
        self.t = float(t)
        y = np.asarray(y, dtype=float)
        n = y.size
        if ydot is None:
            ydot = self.consistent_derivative(t, y, h)
        D = np.zeros((MAX_ORDER + 3, n))
        D[0] = y
        D[1] = h * ydot
        self.hist = HistoryBuffer(D, 1, float(h), 0)
        self.rate = None
        self.failed_last = False

    def remesh(self, problem: DAEProblem, D):
        """Continue on a new discretization with a transferred difference array.

        Order and step size are kept; ``D[0]`` must be a consistent state.
        """
        self.problem = problem
        self.M = problem.mass()
        k = self.hist.order
        Dn = np.zeros((MAX_ORDER + 3, np.asarray(D[0]).size))
        Dn[:k + 3] = np.asarray(D)[:k + 3]
        self.hist = HistoryBuffer(Dn, k, self.hist.h, 0)
        self.rate = None

    @property
    def y(self) -> np.ndarray:
        return self.hist.D[0].copy()

    @property
    def order(self) -> int:
        return self.hist.order

    @property
    def h(self) -> float:
        return self.hist.h

    def _eval(self, t, y, tau, jacobian):
        t0 = time.perf_counter()
        out = self.problem.evaluate(t, y, tau, jacobian)
        self.timings["assembly"] += time.perf_counter() - t0
        self.n_fev += 1
        if jacobian:
            self.n_jac += 1
        return out

    def consistent_derivative(self, t, y, tau):
        """``y'`` solving the mass rows and the time-differentiated constraints."""
        f, J = self._eval(t, y, tau, True)
        M = self.M
        i_of = np.arange(M.data.shape[0])[:, None] - M.ku + np.arange(M.n)[None, :]
        valid = (i_of >= 0) & (i_of < M.n)
        has_mass = np.zeros(M.n, dtype=bool)
        has_mass[i_of[valid & (M.data != 0.0)]] = True
        alg = ~has_mass
        use_J = np.zeros(M.data.shape, dtype=bool)
        use_J[valid] = alg[i_of[valid]]
        A = BandMatrix(M.kl, M.ku, M.n, np.where(use_J, J.data, M.data))
        rhs = np.where(alg, 0.0, f)
        t0 = time.perf_counter()
        ydot = A.lu().solve(rhs)
        self.timings["solve"] += time.perf_counter() - t0
        return ydot

    # stepping ---------------------------------------------------------
    def step(self, t_bound: float | None = None) -> StepInfo:
        """Advance by one accepted step, never past ``t_bound``."""
        cfg = self.config
        hist = self.hist
        n_rejected = 0
        if t_bound is not None and t_bound <= self.t:
            raise ValueError("t_bound must lie ahead of the current time")
        h_cap = cfg.tau_max
        if hist.h > h_cap:
            hist.rescale(h_cap / hist.h)
        if t_bound is not None and self.t + hist.h > t_bound:
            hist.rescale((t_bound - self.t) / hist.h)
        trace = []
        while True:
            h = hist.h
            if h < cfg.tau_min:
                raise IntegrationError(f"step size {h:.3e} below tau_min at t = {self.t:.9g}", trace)
            t_new = self.t + h
            if t_bound is not None and abs(t_new - t_bound) <= 1e-12 * max(1.0, abs(t_bound)):
                t_new = t_bound
            order = hist.order
            y_pred = hist.predict()
            scale = cfg.abs_tol_t + cfg.rel_tol_t * np.abs(y_pred)
            psi = hist.psi()
            c = h / ALPHA[order]
            try:
                f0, J = self._eval(t_new, y_pred, h, True)
                t0 = time.perf_counter()
                lu = self.M.axpby(1.0, J, -c).lu()
                self.timings["solve"] += time.perf_counter() - t0
            except (SingularMatrixError, ArithmeticError, RuntimeError) as exc:
                trace.append((self.t, h, order, f"evaluation failed: {exc}"))
                hist.rescale(0.25)
                n_rejected += 1
                continue
            Mpsi = self.M.matvec(psi)

            def residual(y):
                f, _ = self._eval(t_new, y, h, False)
                return self.M.matvec(y - y_pred) + Mpsi - c * f

            def solve(r):
                t1 = time.perf_counter()
                x = lu.solve(r)
                self.timings["solve"] += time.perf_counter() - t1
                return x

            def refresh(y):
                f, Jy = self._eval(t_new, y, h, True)
                t1 = time.perf_counter()
                lu_y = self.M.axpby(1.0, Jy, -c).lu()
                self.timings["solve"] += time.perf_counter() - t1
                return self.M.matvec(y - y_pred) + Mpsi - c * f, lu_y.solve

            try:
                res = newton_solve(residual, solve, y_pred, scale, cfg, rate=self.rate,
                                   first_residual=Mpsi - c * f0)
                if not res.converged:
                    # active-set changes inside the step defeat the frozen matrix
                    res = newton_solve(residual, solve, y_pred, scale, cfg,
                                       first_residual=Mpsi - c * f0, refresh=refresh)
                if res.converged:
                    # a quadrature point may switch branch after the last
                    # update; the residual at the result exposes that
                    dy = solve(-residual(res.y))
                    if weighted_rms(dy, scale) > cfg.newton_tol:
                        more = newton_solve(residual, solve, res.y, scale, cfg,
                                            d0=res.d, refresh=refresh)
                        more.n_iter += res.n_iter
                        res = more
            except (ArithmeticError, RuntimeError) as exc:
                trace.append((self.t, h, order, f"newton failed: {exc}"))
                res = None
            if res is None or not res.converged:
                if res is not None:
                    trace.append((self.t, h, order, f"newton diverged after {res.n_iter}"))
                self.rate = None
                hist.rescale(0.5)
                n_rejected += 1
                continue
            self.rate = res.rate
            y_new, d = res.y, res.d
            scale = cfg.abs_tol_t + cfg.rel_tol_t * np.abs(y_new)
            err = weighted_rms(ERROR_CONST[order] * d, scale)
            accept, factor = error_control(err, order, h, cfg)
            if not accept:
                trace.append((self.t, h, order, f"error {err:.3g}"))
                hist.rescale(factor)
                n_rejected += 1
                continue
            break
        # accepted
        self.problem.accept(t_new, y_new, h)
        self.t = t_new
        hist.update(d)
        info = StepInfo(t_new, h, order, res.n_iter, n_rejected)
        if hist.n_equal_steps < order + 1:
            if hist.h > cfg.tau_max:
                hist.rescale(cfg.tau_max / hist.h)
            return info
        new_order, factor = select_order(hist.D, order, scale, err, cfg)
        hist.order = new_order
        if n_rejected:
            factor = min(1.0, factor)
        factor = min(factor, cfg.tau_max / hist.h)
        hist.rescale(factor)
        return info
