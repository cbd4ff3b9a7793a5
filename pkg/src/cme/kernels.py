"""Topic space, matching kernels, and the delay discount.

Community members and the content they produce live in the unit box
[0, 1]^dim (dim is 1 or 2) under the Euclidean metric.  Two
exponential-of-distance kernels turn distance into probabilities:
``interest_prob`` is the chance a consumer with main interest y likes
content on topic x, ``production_quality`` is the chance a producer
with main interest z makes good content on topic x, and ``match_prob``
is their product -- the chance a piece of z's content on topic x both
is good and lands with consumer y.

Attention paid at rate mu is discounted by delta(mu) = 1 - exp(-beta*mu),
the probability that content is consumed before it goes stale.  The
inverse of delta's derivative, ``deriv_inverse``, is the workhorse of
every budget-allocation solve in this package: it maps a target marginal
value back to the attention rate that achieves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """An argument violates a structural precondition (dimension, sign, range)."""


class DomainError(ValueError):
    """A scalar argument lies outside the mathematical domain of the map."""


@dataclass(frozen=True)
class TopicPoint:
    """A point of the topic space, coordinates in [0, 1]."""

    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if len(coords) == 0:
            raise InvalidInputError("topic point needs at least one coordinate")
        for c in coords:
            if not (0.0 <= c <= 1.0) or not math.isfinite(c):
                raise InvalidInputError(
                    f"topic coordinate {c!r} outside the unit box [0, 1]"
                )
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


@dataclass(frozen=True)
class KernelParams:
    """Decay rates of the interest (a_f) and production-quality (a_g) kernels."""

    a_f: float = 2.0
    a_g: float = 2.0

    def __post_init__(self):
        if not (self.a_f > 0.0 and math.isfinite(self.a_f)):
            raise InvalidInputError(f"a_f must be positive and finite, got {self.a_f}")
        if not (self.a_g > 0.0 and math.isfinite(self.a_g)):
            raise InvalidInputError(f"a_g must be positive and finite, got {self.a_g}")


@dataclass(frozen=True)
class DelayParams:
    """Decay rate beta of the delay discount delta(mu) = 1 - exp(-beta*mu)."""

    beta: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise InvalidInputError(f"beta must be positive and finite, got {self.beta}")


def distance(x: TopicPoint, y: TopicPoint) -> float:
    """Euclidean distance between two topic points of equal dimension."""
    if x.dim != y.dim:
        raise InvalidInputError(f"dimension mismatch: {x.dim} vs {y.dim}")
    return math.dist(x.coords, y.coords)


def interest_prob(x: TopicPoint, y: TopicPoint, k: KernelParams) -> float:
    """Probability f(d(x, y)) that a consumer with interest y likes topic x."""
    return math.exp(-k.a_f * distance(x, y))


def production_quality(x: TopicPoint, z: TopicPoint, k: KernelParams) -> float:
    """Probability g(d(x, z)) that a producer with interest z does topic x well."""
    return math.exp(-k.a_g * distance(x, z))


def match_prob(x: TopicPoint, z: TopicPoint, y: TopicPoint, k: KernelParams) -> float:
    """Chance that z's content on topic x is good *and* appeals to consumer y."""
    return production_quality(x, z, k) * interest_prob(x, y, k)


def discount(mu, p: DelayParams):
    """Delay discount delta(mu) = 1 - exp(-beta*mu) for rates mu >= 0.

    Accepts scalars or arrays; uses expm1 so values stay accurate near 0.
    """
    m = np.asarray(mu, dtype=float)
    if np.any(m < 0.0) or not np.all(np.isfinite(m)):
        raise InvalidInputError("attention rates must be finite and nonnegative")
    out = -np.expm1(-p.beta * m)
    return float(out) if out.ndim == 0 else out


def discount_deriv(mu, p: DelayParams):
    """Derivative delta'(mu) = beta * exp(-beta*mu), scalar or array."""
    m = np.asarray(mu, dtype=float)
    if np.any(m < 0.0) or not np.all(np.isfinite(m)):
        raise InvalidInputError("attention rates must be finite and nonnegative")
    out = p.beta * np.exp(-p.beta * m)
    return float(out) if out.ndim == 0 else out


def deriv_inverse(b: float, p: DelayParams) -> float:
    """Rate mu with delta'(mu) = b, defined for 0 < b <= beta.

    Values outside the domain are hard errors by design: callers that
    water-fill must themselves clamp channels whose marginal value at
    rate zero is already below the target (those channels get rate 0).
    """
    if not (0.0 < b <= p.beta):
        raise DomainError(
            f"delta' takes values in (0, beta={p.beta}]; no rate has delta'(mu) = {b}"
        )
    return math.log(p.beta / b) / p.beta


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between two (n, dim) stacks of points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError(
            f"expected (n, dim) point stacks of equal dim, got {a.shape} and {b.shape}"
        )
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
