"""Optimal attention allocation over weighted channels.

Every agent in the market ultimately solves the same concave program:
split a fixed attention budget M over n channels so that

    sum_i  w_i * delta(mu_i)     is maximal subject to   sum_i mu_i <= M,
                                                         mu_i >= 0,

where delta(mu) = 1 - exp(-beta*mu) and w_i >= 0 is the value of channel
i.  Because delta is strictly concave with delta'(0) = beta, the solution
is a water-filling: there is a multiplier nu > 0 such that every active
channel satisfies w_i * delta'(mu_i) = nu, i.e.

    mu_i = max(0, log(beta * w_i / nu) / beta),

and nu is pinned down by the budget, which always binds (delta' > 0, so
leftover attention is never optimal once any channel has positive value).

``water_fill`` finds nu by bisection.  ``gradient_oracle`` solves the
same program by an unrelated route -- accelerated projected gradient
ascent in the primal -- and exists so the two can certify each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import DelayParams, InvalidInputError


class DegenerateWeightsError(ValueError):
    """Every channel has zero weight; any feasible split is (trivially) optimal."""


@dataclass(frozen=True)
class WeightedChannels:
    """Channel weights w_i >= 0 and the attention budget to split over them."""

    weights: np.ndarray
    budget: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InvalidInputError("weights must be a nonempty 1-D array")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise InvalidInputError("channel weights must be finite and nonnegative")
        if not (self.budget > 0.0 and math.isfinite(self.budget)):
            raise InvalidInputError(f"budget must be positive, got {self.budget}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class AllocationSolution:
    """Optimal rates, the shared multiplier nu, and the attained objective."""

    rates: np.ndarray
    multiplier: float
    objective: float


def _objective(rates: np.ndarray, weights: np.ndarray, beta: float) -> float:
    return float(np.dot(weights, -np.expm1(-beta * rates)))


def _rates_at(nu: float, weights: np.ndarray, beta: float) -> np.ndarray:
    """Water-filling rates at multiplier nu; channels with beta*w <= nu get 0."""
    rates = np.zeros_like(weights)
    pos = weights > 0.0
    rates[pos] = np.maximum(0.0, np.log(beta * weights[pos] / nu) / beta)
    return rates


def water_fill(ch: WeightedChannels, d: DelayParams,
               budget_rtol: float = 1e-12, max_iter: int = 200) -> AllocationSolution:
    """Exact budget split by bisection on the water-filling multiplier.

    The spent budget sum(mu_i(nu)) is continuous and strictly decreasing in
    nu on the bracket (0, beta*max w], reaching 0 at the right end, so the
    root is found by shrinking the left end geometrically until it overshoots
    the budget and then bisecting until the budget residual drops below
    budget_rtol * budget.
    """
    w, budget, beta = ch.weights, ch.budget, d.beta
    if not np.any(w > 0.0):
        raise DegenerateWeightsError("all channel weights are zero")

    nu_hi = beta * float(np.max(w))
    nu_lo = nu_hi / 2.0
    for _ in range(4096):
        if np.sum(_rates_at(nu_lo, w, beta)) > budget:
            break
        nu_lo /= 2.0
    else:  # pragma: no cover - budget would have to exceed ~1e1200
        raise ArithmeticError("could not bracket the water-filling multiplier")

    nu = nu_lo
    for _ in range(max_iter):
        nu = 0.5 * (nu_lo + nu_hi)
        spent = np.sum(_rates_at(nu, w, beta))
        if abs(spent - budget) < budget_rtol * budget:
            break
        if spent > budget:
            nu_lo = nu
        else:
            nu_hi = nu
    else:  # pragma: no cover - 200 halvings collapse any double bracket
        raise ArithmeticError(
            f"water-filling bisection stalled with budget residual {spent - budget:g}"
        )

    rates = _rates_at(nu, w, beta)
    return AllocationSolution(rates=rates, multiplier=float(nu),
                              objective=_objective(rates, w, beta))


def water_fill_batch(weight_rows: np.ndarray, budget: float, d: DelayParams,
                     budget_rtol: float = 1e-12, max_iter: int = 200
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise water filling: one independent solve per row of (k, n) weights.

    Same dual bisection as ``water_fill``, run on all rows at once.  Exists
    because inner re-solves of the influencer's split (one per candidate
    topic) dominate the imperfect-information runtime.  Returns (rates, nu).
    """
    W = np.asarray(weight_rows, dtype=float)
    if W.ndim != 2 or W.size == 0:
        raise InvalidInputError("expected a nonempty (k, n) weight matrix")
    if np.any(W < 0.0) or not np.all(np.isfinite(W)):
        raise InvalidInputError("channel weights must be finite and nonnegative")
    if not np.all(np.max(W, axis=1) > 0.0):
        raise DegenerateWeightsError("a row has all channel weights zero")
    beta = d.beta

    # log(beta*W) with zero-weight channels pinned to -inf so they never activate
    with np.errstate(divide="ignore"):
        logbw = np.where(W > 0.0, np.log(beta * np.maximum(W, 1e-300)), -np.inf)

    def spent(log_nu):
        return np.sum(np.maximum(0.0, logbw - log_nu[:, None]), axis=1) / beta

    log_hi = np.max(logbw, axis=1)
    log_lo = log_hi - math.log(2.0)
    for _ in range(4096):
        short = spent(log_lo) <= budget
        if not np.any(short):
            break
        log_lo = np.where(short, log_lo - math.log(2.0), log_lo)
    else:  # pragma: no cover
        raise ArithmeticError("could not bracket the water-filling multipliers")

    log_nu = log_lo.copy()
    for _ in range(max_iter):
        log_nu = 0.5 * (log_lo + log_hi)
        s = spent(log_nu)
        if np.all(np.abs(s - budget) < budget_rtol * budget):
            break
        over = s > budget
        log_lo = np.where(over, log_nu, log_lo)
        log_hi = np.where(over, log_hi, log_nu)
    else:  # pragma: no cover
        raise ArithmeticError("batched water-filling bisection stalled")

    rates = np.maximum(0.0, logbw - log_nu[:, None]) / beta
    return rates, np.exp(log_nu)


def kkt_residuals(sol: AllocationSolution, ch: WeightedChannels,
                  d: DelayParams) -> dict[str, float]:
    """Named first-order optimality residuals of a candidate solution.

    stationarity          |w_i * delta'(mu_i) - nu| on active channels
    dual_feasibility      max(0, w_i * delta'(mu_i) - nu) everywhere
    complementary_slack   mu_i * max(0, nu - w_i * delta'(mu_i))
    primal_feasibility    |sum mu_i - budget| and any negative rate
    """
    w, beta = ch.weights, d.beta
    mu = np.asarray(sol.rates, dtype=float)
    grad = w * beta * np.exp(-beta * mu)
    active = mu > 0.0
    stationarity = float(np.max(np.abs(grad[active] - sol.multiplier))) if np.any(active) else 0.0
    dual = float(np.max(np.maximum(0.0, grad - sol.multiplier)))
    comp = float(np.max(mu * np.maximum(0.0, sol.multiplier - grad)))
    primal = abs(float(np.sum(mu)) - ch.budget) + max(0.0, -float(np.min(mu)))
    return {
        "stationarity": stationarity,
        "dual_feasibility": dual,
        "complementary_slack": comp,
        "primal_feasibility": primal,
    }


def project_budget_box(v: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= budget}."""
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= budget:
        return clipped
    # project onto the simplex {x >= 0, sum(x) = budget}: sort, find the
    # largest prefix whose shifted values stay positive, shift, clip
    u = np.sort(v)[::-1]
    cumsum = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (cumsum - budget) / j > 0.0)[0][-1]
    theta = (cumsum[rho] - budget) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def gradient_oracle(ch: WeightedChannels, d: DelayParams,
                    iters: int = 4000, step0: float | None = None) -> AllocationSolution:
    """Independent check on ``water_fill``: accelerated projected gradient ascent.

    Runs Nesterov-accelerated ascent with fixed step 1/L (L = beta^2 * max w,
    the gradient's Lipschitz constant) from the zero allocation, keeping the
    best feasible iterate seen.  Shares no machinery with the dual bisection,
    so agreement between the two certifies both.  The reported multiplier is
    the largest marginal value w_i * delta'(mu_i) on active channels.
    """
    w, budget, beta = ch.weights, ch.budget, d.beta
    if not np.any(w > 0.0):
        raise DegenerateWeightsError("all channel weights are zero")
    step = step0 if step0 is not None else 1.0 / (beta * beta * float(np.max(w)))

    x = np.zeros_like(w)
    y = x.copy()
    best_x, best_f = x, _objective(x, w, beta)
    t = 1.0
    for _ in range(iters):
        grad = w * beta * np.exp(-beta * y)  # y may dip outside the box; exp is fine
        x_new = project_budget_box(y + step * grad, budget)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        f = _objective(x, w, beta)
        if f > best_f:
            best_x, best_f = x, f

    active = best_x > 1e-12 * budget
    grad = w * beta * np.exp(-beta * best_x)
    nu = float(np.max(grad[active])) if np.any(active) else beta * float(np.max(w))
    return AllocationSolution(rates=best_x, multiplier=nu, objective=best_f)
