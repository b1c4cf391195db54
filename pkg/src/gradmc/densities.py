"""Log-density kernels for the distribution families the built-in models use.

These are plain numpy functions over float64 arrays.  The expression-graph
forward pass calls the same functions, so `log_density_value` and the
corresponding graph nodes produce identical numbers by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

LOG_2PI = math.log(2.0 * math.pi)

# Probabilities are clamped away from 0/1 before logs so log-losses and
# categorical densities stay finite at saturated predictions.
PROB_CLAMP = 1e-12


def normal_logpdf(x, mean, sd):
    """Elementwise normal log density; mean/sd scalar or same shape as x."""
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def mvnormal_diag_logpdf(x, loc, scale):
    """Diagonal multivariate normal log density, summed over the last axis.

    x of shape (n, d) gives one value per row; shape (d,) gives a scalar.
    """
    z = (x - loc) / scale
    return np.sum(-0.5 * z * z - np.log(scale) - 0.5 * LOG_2PI, axis=-1)


def laplace_logpdf(x, loc, scale):
    """Elementwise Laplace log density."""
    return -np.abs(x - loc) / scale - np.log(2.0 * scale)


def gamma_logpdf(x, shape, rate):
    """Elementwise Gamma log density; -inf outside the positive support."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x > 0.0, x, 1.0)
    value = (
        shape * math.log(rate)
        - math.lgamma(shape)
        + (shape - 1.0) * np.log(safe)
        - rate * safe
    )
    return np.where(x > 0.0, value, -np.inf)


def categorical_logpdf(probs, labels):
    """Per-row log probability of integer class labels under row-simplex probs.

    probs has shape (n, k); labels holds integers in [0, k).  Probabilities are
    clamped at PROB_CLAMP before the log.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    idx = labels.astype(np.int64)
    if labels.ndim != 1 or probs.ndim != 2:
        raise DomainError(
            f"categorical expects probs (n, k) and labels (n,), got {probs.shape} and {labels.shape}"
        )
    if np.any(np.abs(np.asarray(labels, dtype=np.float64) - idx) > 0):
        raise DomainError("categorical labels must be integer-valued")
    k = probs.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise DomainError(f"categorical label out of range [0, {k})")
    picked = probs[np.arange(idx.size), idx]
    return np.log(np.maximum(picked, PROB_CLAMP))


def mixture2_logpdf(x, loc1, loc2, scale1, scale2, w1, w2):
    """Per-row log density of a two-component diagonal-normal mixture."""
    c1 = mvnormal_diag_logpdf(x, loc1, scale1)
    c2 = mvnormal_diag_logpdf(x, loc2, scale2)
    with np.errstate(divide="ignore"):
        lw1 = np.log(w1)
        lw2 = np.log(w2)
    return np.logaddexp(lw1 + c1, lw2 + c2)


def _require(cond, message):
    if not cond:
        raise DomainError(message)


def log_density_value(kind, x, **params):
    """Direct (non-graph) log-density evaluation, for oracles and tests.

    Returns exactly the numbers the matching graph node produces on the same
    inputs.  Family parameters are validated here; invalid ones raise
    DomainError.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "normal":
        sd = float(params["sd"])
        _require(sd > 0.0, "normal sd must be positive")
        return normal_logpdf(x, float(params["mean"]), sd)
    if kind == "mvnormal_diag":
        loc = np.asarray(params["loc"], dtype=np.float64)
        scale = np.asarray(params["scale"], dtype=np.float64)
        _require(np.all(scale > 0.0), "mvnormal_diag scales must be positive")
        return mvnormal_diag_logpdf(x, loc, scale)
    if kind == "laplace":
        scale = float(params["scale"])
        _require(scale > 0.0, "laplace scale must be positive")
        return laplace_logpdf(x, float(params["loc"]), scale)
    if kind == "gamma":
        shape = float(params["shape"])
        rate = float(params["rate"])
        _require(shape > 0.0, "gamma shape must be positive")
        _require(rate > 0.0, "gamma rate must be positive")
        return gamma_logpdf(x, shape, rate)
    if kind == "categorical":
        probs = np.asarray(params["probs"], dtype=np.float64)
        if probs.ndim == 1:
            probs = np.broadcast_to(probs, (np.asarray(x).size, probs.size))
        _require(np.all(probs >= 0.0), "categorical probabilities must be non-negative")
        _require(
            np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9),
            "categorical probability rows must sum to 1",
        )
        labels = np.atleast_1d(np.asarray(x))
        return categorical_logpdf(probs, labels)
    if kind == "mixture2":
        w1, w2 = (float(w) for w in params["weights"])
        _require(w1 >= 0.0 and w2 >= 0.0, "mixture weights must be non-negative")
        _require(abs(w1 + w2 - 1.0) <= 1e-12, "mixture weights must sum to 1")
        loc1 = np.asarray(params["loc1"], dtype=np.float64)
        loc2 = np.asarray(params["loc2"], dtype=np.float64)
        scale1 = np.asarray(params.get("scale1", np.ones_like(loc1)), dtype=np.float64)
        scale2 = np.asarray(params.get("scale2", np.ones_like(loc2)), dtype=np.float64)
        _require(
            np.all(scale1 > 0.0) and np.all(scale2 > 0.0),
            "mixture scales must be positive",
        )
        x2 = np.atleast_2d(x)
        out = mixture2_logpdf(x2, loc1, loc2, scale1, scale2, w1, w2)
        return out[0] if np.asarray(x).ndim == 1 else out
    raise DomainError(f"unknown log-density kind {kind!r}")
