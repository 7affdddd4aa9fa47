"""Numerical primitives shared by every model in the package.

All arrays are float64.  Random number generation goes through numpy's
``Generator`` (PCG64), seeded from a single integer so that every run can
be replayed; independent sub-streams are obtained with :func:`split_rng`.
"""

import numpy as np
from scipy.special import expit, logsumexp  # noqa: F401  (re-exported)

SOFTPLUS_THRESHOLD = 30.0


class NumericalError(ArithmeticError):
    """Raised when a NaN or infinity appears where finite values are required."""


def check_finite(x, what="array"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))``.

    Uses scipy's ``expit``, which never overflows.  Non-finite input raises
    :class:`NumericalError`.
    """
    x = check_finite(x, "sigmoid input")
    return expit(x)


def softplus(x):
    """``log(1 + exp(x))``, returning ``x`` itself above the usual branch point."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    big = x > SOFTPLUS_THRESHOLD
    out[big] = x[big]
    out[~big] = np.log1p(np.exp(x[~big]))
    return out if out.ndim else out[()]


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=np.float64))


def bernoulli_log_prob(v, logits):
    """Sum over the last axis of ``log P(v | logits)`` for independent Bernoullis."""
    v = np.asarray(v, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    return -(v * softplus(-logits) + (1.0 - v) * softplus(logits)).sum(axis=-1)


def make_rng(seed):
    """Return a seeded ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def split_rng(rng, n):
    """Split ``rng`` into ``n`` independent, deterministic child generators."""
    return rng.spawn(n)


def sample_bernoulli(p, rng):
    """Draw independent Bernoulli variables with success probabilities ``p``.

    Returns a float64 array of zeros and ones with the shape of ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)


def finite_difference_gradient(f, x, eps=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    Parameters
    ----------
    f : callable
        Maps an array shaped like ``x`` to a float.
    x : array_like
        Point of evaluation; not modified.
    eps : float
        Step size, must be positive.

    Returns
    -------
    numpy.ndarray
        Array shaped like ``x`` holding ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_relative_error(a, b, floor=1e-8):
    """Largest elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def all_binary_vectors(n):
    """All ``2**n`` binary vectors of length ``n`` as rows, in counting order."""
    if n > 24:
        raise ValueError("refusing to enumerate more than 2**24 vectors")
    idx = np.arange(2 ** n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return bits.astype(np.float64)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    """Rescale a dict of gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def momentum_step(params, grads, velocity, learning_rate, momentum):
    """Classical momentum: ``u <- m u - lr g``, ``p <- p + u``.

    Returns new ``(params, velocity)`` dicts; inputs are left untouched.
    """
    new_params, new_velocity = {}, {}
    for name, p in params.items():
        u = velocity.get(name)
        step = -learning_rate * grads[name]
        u = step if u is None else momentum * u + step
        new_velocity[name] = u
        new_params[name] = p + u
    return new_params, new_velocity
