"""Log-densities and random variate generators.

Parameterizations follow the model definitions used throughout the package:

* ``GIG(lam, a, b)``: density proportional to ``x**(lam-1) * exp(-(a*x + b/x)/2)``.
* ``InvGamma(a, b)``: shape ``a``, scale ``b``; density ``b**a/Gamma(a) x**(-a-1) e^{-b/x}``.
* ``Hyperbolic(eta, rho2)``: symmetric, ``exp(-sqrt(eta*(eta + e**2/rho2)))``
  normalized by ``2*sqrt(eta*rho2)*K_1(eta)``.

All samplers take an explicit :class:`numpy.random.Generator`; use
:func:`make_rng` to get a reproducible, independent stream per draw site.
"""

import zlib

import numpy as np
from scipy import integrate, special

from .special import log_bessel_k

__all__ = [
    "make_rng",
    "stream_id",
    "gig_logpdf",
    "gig_sample",
    "hyperbolic_logpdf",
    "hyperbolic_cdf",
    "hyperbolic_sample",
    "student_t_sample",
    "normal_logpdf",
    "normal_sample",
    "inv_gamma_logpdf",
    "inv_gamma_sample",
    "beta_logpdf",
    "beta_sample",
    "categorical_sample",
]

_LOG_2PI = np.log(2.0 * np.pi)
_ZTOL = 10.0 * np.finfo(float).eps


def stream_id(name):
    """Stable 32-bit id for a named stream ("cv", "gibbs", ...)."""
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def make_rng(seed, stream=0):
    """Counter-based generator keyed by ``(seed, stream)``.

    Distinct streams are statistically independent, so parallel tasks can
    each own one without coordinating.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id(stream),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# generalized inverse Gaussian


def _check_gig(lam, a, b):
    lam = np.asarray(lam, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("GIG parameters must be finite")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("GIG requires a >= 0 and b >= 0")
    if np.any((a <= 0) & (lam >= 0)) or np.any((b <= 0) & (lam <= 0)):
        raise ValueError("GIG with a zero coefficient needs lam of the matching sign")
    return lam, a, b


def gig_logpdf(x, lam, a, b):
    """Log density of ``GIG(lam, a, b)`` at ``x`` (requires ``a, b > 0``)."""
    x = np.asarray(x, dtype=float)
    lam, a, b = _check_gig(lam, a, b)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("gig_logpdf requires a > 0 and b > 0")
    if np.any(x <= 0):
        raise ValueError("GIG support is x > 0")
    out = (
        0.5 * lam * (np.log(a) - np.log(b))
        - np.log(2.0)
        - log_bessel_k(lam, np.sqrt(a * b))
        + (lam - 1.0) * np.log(x)
        - 0.5 * (a * x + b / x)
    )
    return out if np.ndim(out) else float(out)


def _gig_mode(lam, omega):
    # mode of x**(lam-1) exp(-omega/2 (x + 1/x)); two algebraically equal forms
    big = lam >= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        m_big = (np.sqrt((lam - 1.0) ** 2 + omega**2) + (lam - 1.0)) / omega
        m_small = omega / (np.sqrt((1.0 - lam) ** 2 + omega**2) + (1.0 - lam))
    return np.where(big, m_big, m_small)


def _log_kernel(x, lam, omega):
    return (lam - 1.0) * np.log(x) - 0.5 * omega * (x + 1.0 / x)


def _rou_shift(lam, omega, rng):
    """Ratio-of-uniforms with mode shift; for lam > 2 or omega > 3."""
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    # extremes of (x - xm) sqrt(f(x)): roots of y^3 + a y^2 + b y + c
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    arg = np.clip(-q / (2.0 * np.sqrt(-(p**3) / 27.0)), -1.0, 1.0)
    fi = np.arccos(arg)
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)

    out = np.empty(lam.shape)
    todo = np.arange(lam.size)
    while todo.size:
        u = uminus[todo] + rng.random(todo.size) * (uplus[todo] - uminus[todo])
        v = rng.random(todo.size)
        x = u / v + xm[todo]
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (x > 0) & (
                np.log(v) <= t[todo] * np.log(x) - s[todo] * (x + 1.0 / x) - nc[todo]
            )
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _rou_noshift(lam, omega, rng):
    """Ratio-of-uniforms without shift; moderate lam and omega."""
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega**2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    out = np.empty(lam.shape)
    todo = np.arange(lam.size)
    while todo.size:
        u = um[todo] * rng.random(todo.size)
        v = rng.random(todo.size)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = u / v
            ok = (x > 0) & (
                np.log(v) <= t[todo] * np.log(x) - s[todo] * (x + 1.0 / x) - nc[todo]
            )
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _concave_hat(lam, omega, rng):
    """Three-piece hat for 0 <= lam < 1 with small omega (not T-concave)."""
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp(_log_kernel(xm, lam, omega))
    a0 = k0 * x0
    far = x0 >= 2.0 / omega
    zero = lam == 0.0
    safe_lam = np.where(zero, 1.0, lam)

    k1 = np.where(far, 0.0, np.exp(-omega))
    with np.errstate(divide="ignore", invalid="ignore"):
        a1_pow = k1 / safe_lam * ((2.0 / omega) ** lam - x0**lam)
        a1_log = k1 * np.log(2.0 / (omega * omega))
    a1 = np.where(far, 0.0, np.where(zero, a1_log, a1_pow))
    k2 = np.where(far, x0 ** (lam - 1.0), (2.0 / omega) ** (lam - 1.0))
    a2 = np.where(
        far, k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega, k2 * 2.0 * np.exp(-1.0) / omega
    )
    total = a0 + a1 + a2
    tail_start = np.maximum(x0, 2.0 / omega)

    out = np.empty(lam.shape)
    todo = np.arange(lam.size)
    while todo.size:
        L, W = lam[todo], omega[todo]
        v = total[todo] * rng.random(todo.size)
        x = np.empty(todo.size)
        hx = np.empty(todo.size)

        in0 = v <= a0[todo]
        x[in0] = x0[todo][in0] * v[in0] / a0[todo][in0]
        hx[in0] = k0[todo][in0]

        v1 = v - a0[todo]
        in1 = ~in0 & (v1 <= a1[todo])
        if np.any(in1):
            z1 = in1 & zero[todo]
            nz1 = in1 & ~zero[todo]
            x[z1] = W[z1] * np.exp(np.exp(W[z1]) * v1[z1])
            hx[z1] = k1[todo][z1] / x[z1]
            x[nz1] = (x0[todo][nz1] ** L[nz1] + L[nz1] / k1[todo][nz1] * v1[nz1]) ** (
                1.0 / L[nz1]
            )
            hx[nz1] = k1[todo][nz1] * x[nz1] ** (L[nz1] - 1.0)

        in2 = ~in0 & ~in1
        if np.any(in2):
            v2 = v1[in2] - a1[todo][in2]
            w2 = W[in2]
            with np.errstate(invalid="ignore", divide="ignore"):
                x[in2] = (
                    -2.0
                    / w2
                    * np.log(
                        np.exp(-w2 / 2.0 * tail_start[todo][in2])
                        - w2 / (2.0 * k2[todo][in2]) * v2
                    )
                )
            hx[in2] = k2[todo][in2] * np.exp(-w2 / 2.0 * x[in2])

        u = rng.random(todo.size) * hx
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = np.isfinite(x) & (x > 0) & (np.log(u) <= _log_kernel(x, L, W))
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _standard_gig(lam, omega, rng):
    """Draws from the density proportional to x**(lam-1) exp(-omega/2 (x+1/x)), lam >= 0."""
    out = np.empty(lam.shape)
    shift = (lam > 2.0) | (omega > 3.0)
    noshift = ~shift & ((lam >= 1.0 - 2.25 * omega**2) | (omega > 0.2))
    concave = ~shift & ~noshift
    for mask, algo in ((shift, _rou_shift), (noshift, _rou_noshift), (concave, _concave_hat)):
        if np.any(mask):
            out[mask] = algo(lam[mask], omega[mask], rng)
    return out


def gig_sample(lam, a, b, rng, size=None):
    """Exact draws from ``GIG(lam, a, b)``, vectorized over broadcast parameters.

    Uses the Hoermann-Leydold ratio-of-uniforms family on the two-parameter
    form; negative ``lam`` goes through ``1/X ~ GIG(-lam, b, a)``. A zero
    ``a`` (with ``lam < 0``) or zero ``b`` (with ``lam > 0``) falls back to the
    inverse-gamma / gamma limit.
    """
    lam, a, b = _check_gig(lam, a, b)
    shape = np.broadcast_shapes(lam.shape, a.shape, b.shape) if size is None else size
    lam, a, b = (np.broadcast_to(v, shape).ravel() for v in (lam, a, b))
    out = np.empty(lam.size)

    inv_gamma = (a < _ZTOL) & (lam < 0)
    gamma = ~inv_gamma & (b < _ZTOL) & (lam > 0)
    general = ~inv_gamma & ~gamma
    if np.any(inv_gamma):
        out[inv_gamma] = b[inv_gamma] / (2.0 * rng.standard_gamma(-lam[inv_gamma]))
    if np.any(gamma):
        out[gamma] = 2.0 * rng.standard_gamma(lam[gamma]) / a[gamma]
    if np.any(general):
        la, aa, bb = lam[general], a[general], b[general]
        omega = np.sqrt(aa * bb)
        alpha = np.sqrt(bb / aa)
        z = _standard_gig(np.abs(la), omega, rng)
        out[general] = np.where(la < 0, alpha / z, alpha * z)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# hyperbolic


def _check_hyperbolic(eta, rho2):
    if np.any(np.asarray(eta) <= 0) or np.any(np.asarray(rho2) <= 0):
        raise ValueError("hyperbolic needs eta > 0 and rho2 > 0")


def hyperbolic_logpdf(eps, eta, rho2):
    """Log density of the symmetric hyperbolic law with shape ``eta`` and scale ``rho2``."""
    _check_hyperbolic(eta, rho2)
    eps = np.asarray(eps, dtype=float)
    out = (
        -np.log(2.0 * np.sqrt(eta * rho2))
        - log_bessel_k(1.0, eta)
        - np.sqrt(eta * (eta + eps**2 / rho2))
    )
    return out if np.ndim(out) else float(out)


def hyperbolic_cdf(eps, eta, rho2):
    """CDF by adaptive quadrature of the density (symmetric about zero)."""
    _check_hyperbolic(eta, rho2)

    def pdf(e):
        return np.exp(hyperbolic_logpdf(e, eta, rho2))

    def one(e):
        half, _ = integrate.quad(pdf, 0.0, abs(e), limit=200, epsabs=1e-12, epsrel=1e-12)
        return 0.5 + np.sign(e) * half

    eps = np.asarray(eps, dtype=float)
    out = np.vectorize(one, otypes=[float])(eps)
    return out if out.ndim else float(out)


def hyperbolic_sample(eta, rho2, rng, size=None):
    """Normal scale mixture: ``a2 ~ GIG(1, eta, eta)``, then ``N(0, rho2 * a2)``."""
    _check_hyperbolic(eta, rho2)
    a2 = np.asarray(gig_sample(1.0, eta, eta, rng, size=size))
    draw = rng.standard_normal(a2.shape) * np.sqrt(rho2 * a2)
    return draw if draw.ndim else float(draw)


def student_t_sample(df, rng, size=None):
    if np.any(np.asarray(df) <= 0):
        raise ValueError("degrees of freedom must be positive")
    return rng.standard_t(df, size=size)


# ---------------------------------------------------------------------------
# standard families


def normal_logpdf(x, mu, var):
    if np.any(np.asarray(var) <= 0):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mu) ** 2 / var)


def normal_sample(mu, var, rng, size=None):
    if np.any(np.asarray(var) <= 0):
        raise ValueError("variance must be positive")
    return rng.normal(mu, np.sqrt(var), size=size)


def inv_gamma_logpdf(x, a, b):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("inverse gamma needs a > 0 and b > 0")
    x = np.asarray(x, dtype=float)
    return a * np.log(b) - special.gammaln(a) - (a + 1.0) * np.log(x) - b / x


def inv_gamma_sample(a, b, rng, size=None):
    """``InvGamma(a, b)`` with shape ``a`` and scale ``b``."""
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("inverse gamma needs a > 0 and b > 0")
    return b / rng.standard_gamma(a, size=size)


def beta_logpdf(x, c, d):
    if np.any(np.asarray(c) <= 0) or np.any(np.asarray(d) <= 0):
        raise ValueError("beta needs positive shape parameters")
    x = np.asarray(x, dtype=float)
    return (c - 1.0) * np.log(x) + (d - 1.0) * np.log1p(-x) - special.betaln(c, d)


def beta_sample(c, d, rng, size=None):
    if np.any(np.asarray(c) <= 0) or np.any(np.asarray(d) <= 0):
        raise ValueError("beta needs positive shape parameters")
    return rng.beta(c, d, size=size)


def categorical_sample(log_weights, rng):
    """Index drawn with probability proportional to ``exp(log_weights)``."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log_weights must be a non-empty vector")
    if np.any(np.isnan(lw)) or np.all(np.isneginf(lw)):
        raise ValueError("log_weights must contain a finite entry and no NaN")
    prob = np.exp(lw - special.logsumexp(lw))
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(prob), u * prob.sum(), side="right"))
    return min(idx, lw.size - 1)
