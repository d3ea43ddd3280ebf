"""Limited-memory BFGS with a strong-Wolfe line search, plus a minibatch driver.

The optimizer works on flat float64 vectors and an objective returning
``(f, grad)``. :func:`minibatch_train` wraps it for networks: each minibatch
gets a few L-BFGS iterations from the current parameters with an empty
curvature memory, since pairs collected on one batch describe a different
objective than the next.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, NumericFailure
from .nn import NetworkParams, PatchBatch, backward, forward, mse_loss

log = logging.getLogger(__name__)

__all__ = [
    "LBFGSConfig",
    "LBFGSState",
    "LineSearchResult",
    "LineSearchWarning",
    "LBFGSResult",
    "TrainConfig",
    "two_loop_direction",
    "wolfe_line_search",
    "lbfgs_minimize",
    "network_objective",
    "minibatch_train",
]


class LineSearchWarning(RuntimeWarning):
    pass


# relative size of objective changes treated as rounding noise
ROUNDOFF = 1e-12


@dataclass
class LBFGSConfig:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_iterations: int = 100
    grad_tolerance: float = 1e-5
    max_line_search_steps: int = 25

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigError(f"memory must be >= 1, got {self.memory}")
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ConfigError("iteration limits must be positive")
        if self.grad_tolerance < 0:
            raise ConfigError("grad_tolerance must be nonnegative")


class LBFGSState:
    """Ring buffer of curvature pairs ``(s, y, 1 / y.s)``.

    Pairs failing ``y.s > 1e-10 |y| |s|`` are rejected so the implicit
    inverse-Hessian estimate stays positive definite.
    """

    def __init__(self, memory: int = 10):
        self.memory = memory
        self.pairs = deque(maxlen=memory)

    def __len__(self):
        return len(self.pairs)

    def update(self, s, y) -> bool:
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ys = float(y @ s)
        if not ys > 1e-10 * np.linalg.norm(y) * np.linalg.norm(s):
            return False
        self.pairs.append((s, y, 1.0 / ys))
        return True

    def reset(self):
        self.pairs.clear()


def two_loop_direction(state: LBFGSState, grad) -> np.ndarray:
    """Search direction ``-H grad`` from the two-loop recursion.

    The initial inverse Hessian is ``gamma I`` with ``gamma = s.y / y.y`` from
    the newest pair; an empty memory gives steepest descent.
    """
    q = -np.asarray(grad, dtype=np.float64)
    if not state.pairs:
        return q
    alphas = []
    for s, y, rho in reversed(state.pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    s, y, _ = state.pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(state.pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


class LineSearchResult(NamedTuple):
    alpha: float
    f: float
    g: np.ndarray
    n_evals: int
    converged: bool


def _cubic_min(a1, f1, g1, a2, f2, g2, lo, hi):
    """Minimizer of the cubic through two (point, value, slope) triples, clipped to [lo, hi]."""
    if a1 == a2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3 * (f1 - f2) / (a1 - a2)
    disc = d1 * d1 - g1 * g2
    if disc < 0 or not np.isfinite(disc):
        return 0.5 * (lo + hi)
    d2 = np.sign(a2 - a1) * np.sqrt(disc)
    denom = g2 - g1 + 2 * d2
    if denom == 0:
        return 0.5 * (lo + hi)
    a = a2 - (a2 - a1) * (g2 + d2 - d1) / denom
    if not np.isfinite(a):
        return 0.5 * (lo + hi)
    return min(max(a, lo), hi)


def wolfe_line_search(fun: Callable, x, d, cfg: LBFGSConfig = None, f0=None, g0=None,
                      alpha0: float = 1.0) -> LineSearchResult:
    """Find a step along ``d`` satisfying the strong Wolfe conditions.

    Bracketing phase followed by a zoom phase, both using safeguarded cubic
    interpolation. If no acceptable step is found within
    ``cfg.max_line_search_steps`` evaluations, the best trial with sufficient
    decrease is returned (``converged=False``) and a :class:`LineSearchWarning`
    is issued; ``alpha == 0`` means no decreasing trial was found at all.

    Raises
    ------
    ContractError
        If ``d`` is not a descent direction.
    """
    cfg = cfg or LBFGSConfig()
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if f0 is None or g0 is None:
        f0, g0 = fun(x)
    gtd0 = float(g0 @ d)
    if not gtd0 < 0:
        raise ContractError(f"not a descent direction: grad.d = {gtd0}")
    c1, c2 = cfg.c1, cfg.c2
    n_evals = 0

    def phi(a):
        nonlocal n_evals
        n_evals += 1
        f, g = fun(x + a * d)
        return float(f), g, float(g @ d)

    # Near a minimizer the decrease in f drops below the rounding error of f
    # itself; there a step is judged by its slope alone (approximate Wolfe).
    f_noise = ROUNDOFF * (1.0 + abs(f0))

    def armijo(a, f):
        return f <= f0 + c1 * a * gtd0 or (abs(f - f0) <= f_noise and a * gtd0 > -f_noise)

    def worse(f, f_ref):
        return f >= f_ref and abs(f - f_ref) > f_noise

    def curvature(gtd):
        return abs(gtd) <= -c2 * gtd0

    # best trial with sufficient decrease, used when the budget runs out
    best = LineSearchResult(0.0, f0, g0, 0, False)

    def remember(a, f, g):
        nonlocal best
        if armijo(a, f) and f < best.f:
            best = LineSearchResult(a, f, g, n_evals, False)

    def give_up():
        warnings.warn(
            f"line search did not satisfy strong Wolfe in {cfg.max_line_search_steps} steps",
            LineSearchWarning, stacklevel=3,
        )
        return best._replace(n_evals=n_evals)

    prev = (0.0, f0, g0, gtd0)
    a = alpha0
    bracket = None
    while bracket is None:
        f, g, gtd = phi(a)
        if not np.isfinite(f):
            # shrink into the finite region
            if n_evals >= cfg.max_line_search_steps:
                return give_up()
            a = 0.5 * (prev[0] + a)
            continue
        remember(a, f, g)
        if not armijo(a, f) or (n_evals > 1 and worse(f, prev[1])):
            bracket = (prev, (a, f, g, gtd))
            break
        if curvature(gtd):
            return LineSearchResult(a, f, g, n_evals, True)
        if gtd >= 0:
            bracket = ((a, f, g, gtd), prev)
            break
        if n_evals >= cfg.max_line_search_steps:
            return give_up()
        a_new = _cubic_min(prev[0], prev[1], prev[3], a, f, gtd,
                           a + 0.01 * (a - prev[0]), 10 * a)
        prev = (a, f, g, gtd)
        a = a_new

    lo, hi = bracket
    while n_evals < cfg.max_line_search_steps:
        left, right = sorted((lo[0], hi[0]))
        width = right - left
        if width <= 1e-16 * max(1.0, right):
            break
        a = _cubic_min(lo[0], lo[1], lo[3], hi[0], hi[1], hi[3], left, right)
        # keep trials away from the bracket ends
        if min(a - left, right - a) < 0.1 * width:
            a = 0.5 * (left + right)
        f, g, gtd = phi(a)
        if not np.isfinite(f):
            hi = (a, np.inf, g, np.inf)
            continue
        remember(a, f, g)
        if not armijo(a, f) or worse(f, lo[1]):
            hi = (a, f, g, gtd)
        else:
            if curvature(gtd):
                return LineSearchResult(a, f, g, n_evals, True)
            if gtd * (hi[0] - lo[0]) >= 0:
                hi = lo
            lo = (a, f, g, gtd)
    return give_up()


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    trace_f: list = field(default_factory=list)
    trace_grad_norm: list = field(default_factory=list)
    n_iterations: int = 0
    n_evals: int = 0
    message: str = ""

    @property
    def trace(self):
        """Per-iteration ``(f, |grad|_inf)`` pairs, starting at ``x0``."""
        return list(zip(self.trace_f, self.trace_grad_norm))


def _check_finite(f, g, x):
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericFailure("objective or gradient is not finite", iterate=np.array(x))


def lbfgs_minimize(fun: Callable, x0, cfg: LBFGSConfig = None,
                   state: LBFGSState = None) -> LBFGSResult:
    """Minimize ``fun`` (returning ``(f, grad)``) from ``x0``.

    Stops when ``|grad|_inf <= cfg.grad_tolerance``, after
    ``cfg.max_iterations`` iterations, or when the line search cannot
    decrease ``f`` any further. ``f`` is nonincreasing along the trace.

    Raises
    ------
    NumericFailure
        If the objective or gradient becomes non-finite at an accepted point.
    """
    cfg = cfg or LBFGSConfig()
    state = state if state is not None else LBFGSState(cfg.memory)
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    f = float(f)
    _check_finite(f, g, x)
    res = LBFGSResult(x, f, g, [f], [float(np.max(np.abs(g), initial=0.0))], n_evals=1)
    while True:
        gnorm = res.trace_grad_norm[-1]
        if gnorm <= cfg.grad_tolerance:
            res.message = "gradient tolerance reached"
            break
        if res.n_iterations >= cfg.max_iterations:
            res.message = "iteration limit reached"
            break
        d = two_loop_direction(state, g)
        if not g @ d < 0:
            state.reset()
            d = -g
        alpha0 = 1.0 if len(state) else min(1.0, 1.0 / np.sum(np.abs(g)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            ls = wolfe_line_search(fun, x, d, cfg, f, g, alpha0)
        res.n_evals += ls.n_evals
        if ls.alpha == 0 or not (ls.f < f or ls.converged):
            res.message = "line search made no progress"
            break
        _check_finite(ls.f, ls.g, x + ls.alpha * d)
        s = ls.alpha * d
        state.update(s, ls.g - g)
        x = x + s
        f, g = ls.f, ls.g
        res.n_iterations += 1
        res.trace_f.append(f)
        res.trace_grad_norm.append(float(np.max(np.abs(g))))
    res.x, res.f, res.grad = x, f, g
    return res


@dataclass
class TrainConfig:
    minibatch_size: int = 10000
    n_minibatches: int = 100
    iterations_per_minibatch: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size < 1 or self.n_minibatches < 1:
            raise ConfigError("minibatch_size and n_minibatches must be positive")
        if self.iterations_per_minibatch < 0:
            raise ConfigError("iterations_per_minibatch must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def network_objective(params: NetworkParams, X, Y):
    """Flat-vector objective ``vec -> (loss, grad)`` of half-MSE on one batch."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)

    def fun(vec):
        p = params.with_vector(vec, copy=False)
        Y_hat, cache = forward(p, X)
        loss, dY = mse_loss(Y_hat, Y)
        return loss, backward(p, cache, dY)

    return fun


def minibatch_train(params: NetworkParams, dataset: PatchBatch, cfg: TrainConfig,
                    lcfg: LBFGSConfig = None, callback=None):
    """Train ``params`` on seeded, epoch-shuffled minibatches of ``dataset``.

    Each minibatch runs ``cfg.iterations_per_minibatch`` L-BFGS iterations
    with fresh curvature memory. ``callback(index, loss, params)`` is called
    after each minibatch, if given.

    Returns
    -------
    params : NetworkParams
        Trained copy; the input is not modified.
    losses : ndarray
        Minibatch loss after each minibatch's iterations.
    """
    lcfg = lcfg or LBFGSConfig()
    n = dataset.n
    if dataset.X.shape[1] != params.in_dim or dataset.Y.shape[1] != params.out_dim:
        raise ContractError(
            f"dataset dims {dataset.X.shape[1]}->{dataset.Y.shape[1]} do not match "
            f"network {params.in_dim}->{params.out_dim}"
        )
    if cfg.minibatch_size > n:
        raise ConfigError(f"minibatch_size {cfg.minibatch_size} exceeds dataset size {n}")
    # the gradient tolerance is not applied here: each minibatch gets its K
    # iterations unless the line search stalls
    inner = LBFGSConfig(lcfg.memory, lcfg.c1, lcfg.c2, cfg.iterations_per_minibatch,
                        0.0, lcfg.max_line_search_steps)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    cursor = 0
    vec = params.flatten()
    losses = np.empty(cfg.n_minibatches)
    for i in range(cfg.n_minibatches):
        if cursor + cfg.minibatch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = np.sort(order[cursor:cursor + cfg.minibatch_size])
        cursor += cfg.minibatch_size
        fun = network_objective(params, dataset.X[idx], dataset.Y[idx])
        try:
            result = lbfgs_minimize(fun, vec, inner)
        except NumericFailure as exc:
            raise NumericFailure(f"minibatch {i}: {exc}", iterate=exc.iterate, minibatch=i,
                                 last_good=params.with_vector(vec)) from exc
        vec = result.x
        losses[i] = result.f
        log.debug("minibatch %d loss %.6g (%d iterations)", i, result.f, result.n_iterations)
        if callback is not None:
            callback(i, result.f, params.with_vector(vec, copy=False))
    return params.with_vector(vec), losses
