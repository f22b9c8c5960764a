"""Modified Bessel function of the second kind, evaluated in log space.

The hyperbolic and GIG densities need ``log K_v(x)`` for orders well beyond
the range where ``K_v`` is representable (the scale conditional in the
sampler has ``|v|`` close to the sample size), so everything here returns
logarithms.
"""

import numpy as np
from scipy import special

__all__ = ["log_bessel_k", "log_bessel_k_ratio"]

# kve results below this are denormal or flushed; switch to recurrence.
_TINY = 1e-290


def _validate(order, x):
    order = np.asarray(order, dtype=float)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(order)):
        raise ValueError("Bessel order must be finite")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("Bessel argument must be finite and positive")
    # kve returns nan for subnormal orders; K is even in the order, so zero is exact there
    nu = np.where(np.abs(order) < 1e-300, 0.0, np.abs(order))
    return np.broadcast_arrays(nu, x)


def _log_kve_recurrence(nu, x):
    """log(e^x K_nu(x)) by forward recurrence on K ratios from nu - floor(nu).

    Uses r_k = K_{v+1}/K_v with r_k = 1/r_{k-1} + 2v/x, which is stable in the
    direction of increasing order.
    """
    steps = np.floor(nu)
    base = nu - steps
    k0 = special.kve(base, x)
    k1 = special.kve(base + 1.0, x)
    out = np.log(k0)
    ratio = k1 / k0
    n_max = int(steps.max()) if steps.size else 0
    v = base + 1.0
    for k in range(1, n_max + 1):
        active = steps >= k
        out = np.where(active, out + np.log(ratio), out)
        ratio = 1.0 / ratio + 2.0 * v / x
        v = v + 1.0
    return out


def _log_kve(nu, x):
    with np.errstate(over="ignore", under="ignore"):
        direct = special.kve(nu, x)
    ok = np.isfinite(direct) & (direct > _TINY)
    out = np.empty(nu.shape)
    with np.errstate(divide="ignore"):
        out[ok] = np.log(direct[ok])
    if not np.all(ok):
        bad = ~ok
        out[bad] = _log_kve_recurrence(nu[bad], x[bad])
    return out


def log_bessel_k(order, x):
    """Natural log of ``K_order(x)``.

    Parameters
    ----------
    order : float or array_like
        Real order; ``K_{-v} = K_v`` so the sign is irrelevant.
    x : float or array_like
        Positive argument.

    Returns
    -------
    float or ndarray
        ``log K_order(x)``, broadcast over the inputs.
    """
    nu, xx = _validate(order, x)
    scalar = nu.ndim == 0
    nu = np.atleast_1d(nu).astype(float)
    xx = np.atleast_1d(xx).astype(float)
    out = _log_kve(nu, xx) - xx
    return float(out[0]) if scalar else out


def log_bessel_k_ratio(order_num, order_den, x):
    """``log K_num(x) - log K_den(x)`` with the exponential scaling cancelled."""
    nu_n, xx = _validate(order_num, x)
    nu_d, xx = _validate(order_den, xx)
    nu_n, nu_d, xx = np.broadcast_arrays(nu_n, nu_d, xx)
    scalar = xx.ndim == 0
    nu_n, nu_d, xx = (np.atleast_1d(a).astype(float) for a in (nu_n, nu_d, xx))
    out = _log_kve(nu_n, xx) - _log_kve(nu_d, xx)
    return float(out[0]) if scalar else out
