"""Single-agent best responses for the three information regimes.

Perfect information: producers see the whole allocation, so producer z
picks the topic maximizing its realized support -- direct consumption
plus influencer-relayed consumption.  Imperfect information: producers
see only the consumers' rates, so z picks the topic that maximizes the
influencer's *re-solved* production rate on z (the influencer reacts to
the candidate topic).  Proxy: consumers keep no direct channels at all
and producers compete purely for the influencer's attention.

Consumers and the influencer always face a weighted-channel program, so
their best responses delegate to the water-filling allocator.  Producer
topic search is a dense grid scan over [0,1]^dim followed by a
golden-section polish of the best cell (dim 1 only); under exact ties
the scan returns the lexicographically smallest grid point, and the
incumbent topic is kept unless a candidate is strictly better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .allocator import WeightedChannels, water_fill, water_fill_batch
from .kernels import InvalidInputError, TopicPoint, discount, pairwise_distances
from .market import (
    ConsumerAllocation,
    ContentAssignment,
    InfluencerAllocation,
    MarketConfig,
    match_matrix,
)


class GameMode(Enum):
    PERFECT = "perfect"
    IMPERFECT = "imperfect"
    PROXY = "proxy"

    @classmethod
    def parse(cls, text: str) -> "GameMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidInputError(
                f"unknown game mode {text!r}; expected perfect, imperfect, or proxy"
            ) from None


@dataclass(frozen=True)
class TopicSearchParams:
    """Grid density per axis and golden-section polish iterations (dim 1)."""

    grid_resolution: int = 256
    refine_iters: int = 40

    def __post_init__(self):
        if self.grid_resolution < 8:
            raise InvalidInputError(
                f"grid_resolution must be at least 8, got {self.grid_resolution}")
        if self.refine_iters < 0:
            raise InvalidInputError("refine_iters must be nonnegative")


class TopicGrid:
    """Candidate topics with precomputed kernel values against all interests.

    points  (G, dim) grid nodes in lexicographic order
    P       (G, N)   interest kernel f at each (node, member) pair
    Q       (G, N)   production kernel g at each (node, member) pair
    cell    per-axis spacing, the resolution quantum of every grid argmax
    """

    def __init__(self, cfg: MarketConfig, search: TopicSearchParams):
        r = search.grid_resolution
        axis = np.linspace(0.0, 1.0, r)
        if cfg.dim == 1:
            pts = axis[:, None]
        else:
            pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        D = pairwise_distances(pts, cfg.interest_array())
        self.points = pts
        self.P = np.exp(-cfg.kernel.a_f * D)
        self.Q = np.exp(-cfg.kernel.a_g * D)
        self.cell = 1.0 / (r - 1)
        self.refine_iters = search.refine_iters


class ProducerChoice(NamedTuple):
    """A producer best response: the topic, its objective value, and whether
    the objective was identically zero (degenerate: any topic is optimal)."""

    topic: TopicPoint
    value: float
    degenerate: bool


def _golden_max(f, lo: float, hi: float, iters: int) -> tuple[float, float]:
    """Golden-section maximization of f on [lo, hi]; returns best point seen."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
            if fc > best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
            if fd > best_f:
                best_x, best_f = d, fd
    return best_x, best_f


# ---------------------------------------------------------------------------
# dense cores -- the equilibrium loop calls these directly on its arrays
# ---------------------------------------------------------------------------

def influencer_br_dense(mu_i: np.ndarray, B: np.ndarray, cfg: MarketConfig) -> np.ndarray:
    """Optimal influencer rates given consumer follow rates and topics.

    Channel z is worth r_p * sum_{y != z} delta(mu_i(y)) * B[z, y].  When no
    consumer follows the influencer at all, every weight is zero and the
    uniform split of the budget is the pinned-down fallback.
    """
    n = cfg.n
    if float(np.sum(mu_i)) == 0.0:
        return np.full(n, cfg.m_infl / n)
    d_i = discount(mu_i, cfg.delay)
    gamma = cfg.r_p * (B @ d_i - np.diagonal(B) * d_i)
    sol = water_fill(WeightedChannels(weights=gamma, budget=cfg.m_infl), cfg.delay)
    return sol.rates


def consumer_br_dense(y: int, delta_infl: np.ndarray, B: np.ndarray,
                      cfg: MarketConfig, mode: GameMode
                      ) -> tuple[float, float, np.ndarray]:
    """Optimal split of consumer y's budget; returns (lambda, mu_i, direct row).

    Channels are the outside source (weight r_0*B_0, always positive), the
    influencer (weight r_p * sum_{z != y} B[z,y] * delta(mu_infl(z))), and --
    outside proxy mode -- one direct channel per other producer with weight
    r_p * B[z, y].  Proxy mode consumers hold no direct channels at all.
    """
    n = cfg.n
    w_infl = cfg.r_p * (float(B[:, y] @ delta_infl) - B[y, y] * delta_infl[y])
    direct_row = np.zeros(n)
    if mode is GameMode.PROXY:
        weights = np.array([cfg.r_0 * cfg.b_0, w_infl])
        sol = water_fill(WeightedChannels(weights=weights, budget=cfg.m), cfg.delay)
        return float(sol.rates[0]), float(sol.rates[1]), direct_row
    others = np.arange(n) != y
    weights = np.concatenate(([cfg.r_0 * cfg.b_0, w_infl], cfg.r_p * B[others, y]))
    sol = water_fill(WeightedChannels(weights=weights, budget=cfg.m), cfg.delay)
    direct_row[others] = sol.rates[2:]
    return float(sol.rates[0]), float(sol.rates[1]), direct_row


def _pick_topic(grid: TopicGrid, vals: np.ndarray, objective, refine_iters: int,
                prev_x: np.ndarray | None, dim: int
                ) -> tuple[np.ndarray, float, bool]:
    """Shared tail of every producer search: argmax, polish, incumbent rule.

    `objective` maps a (k, dim) array of candidate topics to (k,) values and
    must agree with `vals` on the grid.  A degenerate (identically zero)
    objective keeps the incumbent when one exists, else the smallest node.
    """
    best = int(np.argmax(vals))
    best_val = float(vals[best])
    if best_val <= 0.0:
        keep = grid.points[0] if prev_x is None else np.asarray(prev_x, float)
        return keep.copy(), 0.0, True
    x_best = grid.points[best].copy()
    if dim == 1 and refine_iters > 0:
        lo = grid.points[max(best - 1, 0), 0]
        hi = grid.points[min(best + 1, len(grid.points) - 1), 0]
        x_ref, val_ref = _golden_max(
            lambda t: float(objective(np.array([[t]]))[0]), lo, hi, refine_iters)
        if val_ref > best_val:
            x_best, best_val = np.array([min(max(x_ref, 0.0), 1.0)]), val_ref
    if prev_x is not None:
        prev = np.asarray(prev_x, dtype=float)
        val_prev = float(objective(prev[None, :])[0])
        if val_prev >= best_val:  # move only on strict improvement
            return prev.copy(), val_prev, False
    return x_best, best_val, False


def _support_objective(z: int, wv: np.ndarray, cfg: MarketConfig):
    """x -> sum_y wv[y] * B(z|y)(x) as a vectorized candidate-topic map."""
    Y = cfg.interest_array()

    def objective(pts: np.ndarray) -> np.ndarray:
        D = pairwise_distances(pts, Y)
        return np.exp(-cfg.kernel.a_g * D[:, z]) * (np.exp(-cfg.kernel.a_f * D) @ wv)

    return objective


def producer_br_perfect_dense(z: int, delta_i: np.ndarray, delta_infl_z: float,
                              delta_direct_z: np.ndarray, grid: TopicGrid,
                              cfg: MarketConfig, prev_x: np.ndarray | None = None
                              ) -> tuple[np.ndarray, float, bool]:
    """Topic maximizing z's realized support, all rates held fixed.

    Each consumer y != z backs the candidate topic with weight
    delta(mu_infl(z)) * delta(mu_i(y)) + delta(mu_direct(y, z)); the
    objective is the weight-averaged match probability, scaled by r_p.
    """
    wv = delta_infl_z * delta_i + delta_direct_z
    wv = wv.copy()
    wv[z] = 0.0
    vals = grid.Q[:, z] * (grid.P @ wv)
    objective = _support_objective(z, wv, cfg)
    x, val, degen = _pick_topic(grid, vals, objective, grid_refine(grid, cfg), prev_x, cfg.dim)
    return x, cfg.r_p * val, degen


def producer_br_surrogate_dense(z: int, delta_i: np.ndarray, grid: TopicGrid,
                                cfg: MarketConfig, prev_x: np.ndarray | None = None
                                ) -> tuple[np.ndarray, float, bool]:
    """Topic maximizing the follower-weighted match mass sum_y delta(mu_i(y))*B(z|y).

    This is the fast stand-in for the imperfect-information search: the
    influencer's re-solved rate on z is monotone in this mass, so the two
    argmaxes coincide whenever z earns any influencer attention at all.
    """
    wv = delta_i.copy()
    wv[z] = 0.0
    vals = grid.Q[:, z] * (grid.P @ wv)
    objective = _support_objective(z, wv, cfg)
    x, val, degen = _pick_topic(grid, vals, objective, grid_refine(grid, cfg), prev_x, cfg.dim)
    return x, cfg.r_p * val, degen


def producer_br_imperfect_dense(z: int, mu_i: np.ndarray, X: np.ndarray,
                                grid: TopicGrid, cfg: MarketConfig,
                                prev_x: np.ndarray | None = None
                                ) -> tuple[np.ndarray, float, bool]:
    """Topic maximizing the influencer's re-solved rate on z.

    For every candidate topic the influencer's water-filling problem is
    solved afresh with z's channel weight replaced by the candidate's
    follower-weighted match mass (all other producers' weights kept at the
    incumbent topics); the score is delta of the rate z receives.  The
    Assumption-4 fallback (nobody follows the influencer) makes every
    candidate score the same, so it is reported as degenerate.
    """
    n = cfg.n
    if float(np.sum(mu_i)) == 0.0:
        keep = grid.points[0] if prev_x is None else np.asarray(prev_x, float)
        return keep.copy(), float(discount(cfg.m_infl / n, cfg.delay)), True

    d_i = discount(mu_i, cfg.delay)
    B = match_matrix(X, cfg)
    gamma = cfg.r_p * (B @ d_i - np.diagonal(B) * d_i)
    d_i_masked = d_i.copy()
    d_i_masked[z] = 0.0

    def scores(pts: np.ndarray) -> np.ndarray:
        D = pairwise_distances(pts, cfg.interest_array())
        gamma_z = cfg.r_p * np.exp(-cfg.kernel.a_g * D[:, z]) \
            * (np.exp(-cfg.kernel.a_f * D) @ d_i_masked)
        W = np.tile(gamma, (len(pts), 1))
        W[:, z] = gamma_z
        rates, _ = water_fill_batch(W, cfg.m_infl, cfg.delay)
        return discount(rates[:, z], cfg.delay)

    grid_gamma_z = cfg.r_p * grid.Q[:, z] * (grid.P @ d_i_masked)
    W = np.tile(gamma, (len(grid.points), 1))
    W[:, z] = grid_gamma_z
    rates, _ = water_fill_batch(W, cfg.m_infl, cfg.delay)
    vals = discount(rates[:, z], cfg.delay)
    return _pick_topic(grid, vals, scores, grid_refine(grid, cfg), prev_x, cfg.dim)


def grid_refine(grid: TopicGrid, cfg: MarketConfig) -> int:
    return grid.refine_iters if cfg.dim == 1 else 0


# ---------------------------------------------------------------------------
# typed wrappers over the dense cores
# ---------------------------------------------------------------------------

def _content_array(x_all: ContentAssignment) -> np.ndarray:
    return np.array([p.coords for p in x_all.x], dtype=float)


def _consumer_arrays(lambda_all: Sequence[ConsumerAllocation], n: int):
    lam = np.array([c.lambda_out for c in lambda_all], dtype=float)
    mu_i = np.array([c.mu_infl_follow for c in lambda_all], dtype=float)
    direct = np.zeros((n, n))
    for y, c in enumerate(lambda_all):
        for z, r in c.mu_direct.items():
            direct[y, z] = r
    return lam, mu_i, direct


def influencer_best_response(lambda_all: Sequence[ConsumerAllocation],
                             x_all: ContentAssignment,
                             cfg: MarketConfig) -> InfluencerAllocation:
    _, mu_i, _ = _consumer_arrays(lambda_all, cfg.n)
    B = match_matrix(_content_array(x_all), cfg)
    return InfluencerAllocation(mu=influencer_br_dense(mu_i, B, cfg))


def consumer_best_response(y: int, mu_infl: InfluencerAllocation,
                           x_all: ContentAssignment, cfg: MarketConfig,
                           mode: GameMode) -> ConsumerAllocation:
    B = match_matrix(_content_array(x_all), cfg)
    delta_infl = discount(mu_infl.mu, cfg.delay)
    lam, mu_i, direct_row = consumer_br_dense(y, delta_infl, B, cfg, mode)
    direct = {z: float(r) for z, r in enumerate(direct_row) if r > 0.0}
    return ConsumerAllocation(lambda_out=lam, mu_infl_follow=mu_i, mu_direct=direct)


def _choice(x: np.ndarray, val: float, degen: bool) -> ProducerChoice:
    return ProducerChoice(topic=TopicPoint(tuple(x)), value=val, degenerate=degen)


def producer_best_response_perfect(z: int, mu_infl: InfluencerAllocation,
                                   lambda_all: Sequence[ConsumerAllocation],
                                   cfg: MarketConfig, search: TopicSearchParams,
                                   prev: TopicPoint | None = None) -> ProducerChoice:
    grid = TopicGrid(cfg, search)
    _, mu_i, direct = _consumer_arrays(lambda_all, cfg.n)
    x, val, degen = producer_br_perfect_dense(
        z,
        discount(mu_i, cfg.delay),
        float(discount(float(mu_infl.mu[z]), cfg.delay)),
        discount(direct[:, z], cfg.delay),
        grid, cfg,
        prev_x=None if prev is None else prev.as_array(),
    )
    return _choice(x, val, degen)


def producer_best_response_imperfect(z: int, lambda_all: Sequence[ConsumerAllocation],
                                     x_all: ContentAssignment, cfg: MarketConfig,
                                     search: TopicSearchParams,
                                     prev: TopicPoint | None = None) -> ProducerChoice:
    grid = TopicGrid(cfg, search)
    _, mu_i, _ = _consumer_arrays(lambda_all, cfg.n)
    x, val, degen = producer_br_imperfect_dense(
        z, mu_i, _content_array(x_all), grid, cfg,
        prev_x=None if prev is None else prev.as_array())
    return _choice(x, val, degen)


def producer_best_response_surrogate(z: int, lambda_all: Sequence[ConsumerAllocation],
                                     cfg: MarketConfig, search: TopicSearchParams,
                                     prev: TopicPoint | None = None) -> ProducerChoice:
    grid = TopicGrid(cfg, search)
    _, mu_i, _ = _consumer_arrays(lambda_all, cfg.n)
    x, val, degen = producer_br_surrogate_dense(
        z, discount(mu_i, cfg.delay), grid, cfg,
        prev_x=None if prev is None else prev.as_array())
    return _choice(x, val, degen)
