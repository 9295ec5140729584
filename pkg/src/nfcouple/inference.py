"""Least-squares fits: g2 three-level model, saturation curves, lifetime extrapolation."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.special import expit, logit, xlogy

from .errors import DegenerateDesign, NonConvergence, ValidationError

MAX_ITER = 200


def g2_model(tau, p_f, tau1, tau2, c, bin_width=None):
    """1 + p_f^2 [c exp(-|t|/tau2) - (1 + c) exp(-|t|/tau1)]; tau1 antibunching, tau2 bunching.

    With ``bin_width`` the model is averaged over bins [t - w/2, t + w/2)
    centered on ``tau``, which is what a histogram of width-w bins measures.
    """
    f1, _ = _bin_exp(tau, tau1, bin_width)
    f2, _ = _bin_exp(tau, tau2, bin_width)
    return 1.0 + p_f**2 * (c * f2 - (1.0 + c) * f1)


def _bin_exp(tau, tscale, w):
    """Bin average of exp(-|t|/tscale) and its derivative in tscale."""
    t = np.abs(np.asarray(tau, dtype=float))
    if not w:
        e = np.exp(-t / tscale)
        return e, e * t / tscale**2
    h = 0.5 * w
    f = np.empty_like(t)
    d = np.empty_like(t)
    inner = t < h * (1 - 1e-9)  # bin straddles zero (only the centered bin on the default grid)
    outer = ~inner
    lo, hi = t[outer] - h, t[outer] + h
    elo, ehi = np.exp(-lo / tscale), np.exp(-hi / tscale)
    f[outer] = tscale * (elo - ehi) / w
    d[outer] = ((elo - ehi) + (lo * elo - hi * ehi) / tscale) / w
    if inner.any():
        # split at zero: average of two one-sided integrals
        a, b = h - t[inner], h + t[inner]
        ea, eb = np.exp(-a / tscale), np.exp(-b / tscale)
        f[inner] = tscale * (2.0 - ea - eb) / w
        d[inner] = ((2.0 - ea - eb) - (a * ea + b * eb) / tscale) / w
    return f, d


def _g2_jacobian(tau, p_f, tau1, tau2, c, bin_width=None):
    f1, d1 = _bin_exp(tau, tau1, bin_width)
    f2, d2 = _bin_exp(tau, tau2, bin_width)
    p2 = p_f**2
    return np.column_stack([
        2 * p_f * (c * f2 - (1 + c) * f1),
        -p2 * (1 + c) * d1,
        p2 * c * d2,
        p2 * (f2 - f1),
    ])


G2_NAMES = ("p_f", "tau1", "tau2", "c")


@dataclass(frozen=True)
class G2Fit:
    """Fitted three-level g2 parameters.

    ``sigmas`` are the symmetric Fisher-information (quadratic) errors. For
    sparse histograms the likelihood is skewed, and :func:`profile_interval`
    or :func:`g2_likelihood_ratio` give the better-calibrated answer.
    """

    p_f: float
    tau1: float
    tau2: float
    c: float
    residual_norm: float
    covariance: np.ndarray = field(repr=False)
    n_points: int = 0
    converged: bool = True
    bounds_active: tuple = ()
    initial_residual_norm: float = float("nan")
    options: dict = field(default_factory=dict, repr=False)
    scale: float = 1.0

    @property
    def g2_zero(self):
        return 1.0 - self.p_f**2

    @property
    def params(self):
        return {"p_f": self.p_f, "tau1": self.tau1, "tau2": self.tau2, "c": self.c}

    @property
    def sigmas(self):
        s = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return dict(zip(G2_NAMES, (float(v) for v in s)))

    @property
    def g2_zero_sigma(self):
        return 2 * self.p_f * self.sigmas["p_f"]

    @property
    def weights(self):
        return self.options.get("weights", "poisson")

    @property
    def deviance(self):
        """Minimized objective: Poisson deviance, or chi-square for count weights."""
        return self.residual_norm**2

    def curve(self, tau, bin_width=None):
        return g2_model(tau, self.p_f, self.tau1, self.tau2, self.c, bin_width)

    def to_report(self):
        return _report("g2_three_level", self.params, self.sigmas, self.covariance,
                       self.residual_norm, self.n_points, self.converged,
                       extra={"g2_zero": self.g2_zero, "g2_zero_sigma": self.g2_zero_sigma,
                              "bounds_active": list(self.bounds_active),
                              "weights": self.weights, "scale": self.scale})


def _report(model, params, sigmas, cov, resid, n, converged, extra=None):
    out = {
        "model": model,
        "params": {k: float(v) for k, v in params.items()},
        "sigmas": {k: float(v) for k, v in sigmas.items()},
        "covariance": [[float(x) for x in row] for row in np.atleast_2d(cov)],
        "residual_norm": float(resid),
        "n_points": int(n),
        "converged": bool(converged),
    }
    if extra:
        out.update(extra)
    return out


def _rebin(t_abs, y, factor):
    n = (t_abs.size // factor) * factor
    if n == 0:
        return t_abs, y
    return t_abs[:n].reshape(-1, factor).mean(1), y[:n].reshape(-1, factor).mean(1)


def initial_g2_guess(tau, g2, counts=None):
    """Heuristic start: zero-delay depth, half-depth width, peak excess.

    Sparse histograms are folded onto |tau| and rebinned so each coarse bin
    holds roughly 25 raw counts before the features are read off.
    """
    order = np.argsort(np.abs(tau), kind="stable")
    t_abs = np.abs(tau)[order]
    y = g2[order]
    factor = 2
    if counts is not None:
        mean = max(float(np.mean(counts)), 1e-3)
        factor = int(np.clip(np.ceil(25.0 / mean), 2, max(2, t_abs.size // 40)))
    tc, yc = _rebin(t_abs, y, factor)
    g0 = float(np.clip(yc[0], 0.0, 0.95))
    p_f = np.sqrt(1.0 - g0)
    half = 1.0 - 0.5 * (1.0 - g0)
    above = np.nonzero(yc >= half)[0]
    step = t_abs[2] - t_abs[0] if t_abs.size > 2 else 1e-9
    t_half = tc[above[0]] if above.size else tc[min(len(tc) - 1, 3)]
    tau1 = max(float(t_half) / np.log(2.0), 2.0 * step)
    tail = (tc > 2 * tau1) & (tc < 0.5 * t_abs[-1])
    excess = float(np.max(yc[tail]) - 1.0) if tail.any() else 0.1
    c = float(np.clip(excess / p_f**2, 0.02, 5.0))
    return {"p_f": float(np.clip(p_f, 0.05, 0.995)), "tau1": tau1, "tau2": 10.0 * tau1, "c": c}


# Ordered coordinates (logit p_f, log tau2, logit(tau1/tau2), log c, log a) keep
# p_f in (0, 1), c > 0 and tau1 < tau2 by construction; a is the nuisance
# scale of the normalized curve. The upper bound on tau2 is replaced per
# histogram by its delay range: a bunching time longer than the histogram is
# indistinguishable from a sloped baseline.
_X_LO = np.array([logit(1e-6), np.log(1e-11), logit(1e-6), np.log(1e-6), np.log(0.2)])
_X_HI = np.array([logit(1 - 1e-9), np.log(1e-1), logit(1 / 1.001), np.log(1e3), np.log(5.0)])
# Plain coordinates (logit p_f, log tau1, log tau2, log c, log a) for constrained refits.
_Z_LO = np.array([logit(1e-6), np.log(1e-11), np.log(1e-11), np.log(1e-6), np.log(0.2)])
_Z_HI = np.array([logit(1 - 1e-9), np.log(1e-1), np.log(1e-1), np.log(1e3), np.log(5.0)])
SCALE_MODES = ("free", "window", "fixed")


def _to_x(t):
    p_f, tau1, tau2, c, a = t
    return np.array([logit(p_f), np.log(tau2), logit(tau1 / tau2), np.log(c), np.log(a)])


def _from_x(x):
    tau2 = np.exp(x[1])
    return np.array([expit(x[0]), tau2 * expit(x[2]), tau2, np.exp(x[3]), np.exp(x[4])])


def _dnat_dx(x):
    p_f, tau1, tau2, c, a = _from_x(x)
    s = tau1 / tau2
    d = np.zeros((5, 5))
    d[0, 0] = p_f * (1 - p_f)
    d[1, 1] = tau1
    d[1, 2] = tau2 * s * (1 - s)
    d[2, 1] = tau2
    d[3, 3] = c
    d[4, 4] = a
    return d


def _to_z(t):
    return np.array([logit(t[0]), np.log(t[1]), np.log(t[2]), np.log(t[3]), np.log(t[4])])


def _from_z(z):
    return np.array([expit(z[0]), np.exp(z[1]), np.exp(z[2]), np.exp(z[3]), np.exp(z[4])])


def _dnat_dz(z):
    t = _from_z(z)
    return np.array([t[0] * (1 - t[0]), t[1], t[2], t[3], t[4]])


def _deviance_terms(mu, n):
    d = 2.0 * (mu - n + xlogy(n, n) - xlogy(n, mu))
    return np.maximum(d, 0.0)


def _deviance_residuals(mu, n):
    return np.sign(mu - n) * np.sqrt(_deviance_terms(mu, n))


def _deviance_slope(mu, n, r):
    # d r / d mu = |1 - n/mu| / |r|, with the r -> 0 limit 1/sqrt(mu)
    out = np.empty_like(mu)
    small = np.abs(r) < 1e-6 * np.sqrt(np.maximum(mu, 1e-300))
    big = ~small
    out[big] = np.abs(1.0 - n[big] / mu[big]) / np.abs(r[big])
    out[small] = 1.0 / np.sqrt(mu[small])
    return out


class _G2Problem:
    """Residuals of a normalized histogram against the g2 model.

    Natural parameter vector: (p_f, tau1, tau2, c, a), where ``a`` scales the
    model when ``scale="free"`` and is ignored otherwise.
    """

    def __init__(self, curve, fit_window=None, weights="poisson", bin_average=True,
                 scale="free"):
        if weights not in ("poisson", "counts"):
            raise ValidationError(f"weights must be 'poisson' or 'counts', got {weights!r}")
        if scale not in SCALE_MODES:
            raise ValidationError(f"scale must be one of {SCALE_MODES}, got {scale!r}")
        self.options = {"fit_window": fit_window, "weights": weights,
                        "bin_average": bool(bin_average), "scale": scale}
        self.scale = scale
        self.tau_all = np.asarray(curve.taus, dtype=float)
        y_all = np.asarray(curve.g2, dtype=float)
        sig_all = np.asarray(curve.sigma, dtype=float)
        counts = getattr(curve, "counts", None)
        norm = getattr(curve, "norm_value", None)
        self.bw = getattr(curve, "bin_width", None) if bin_average else None
        self.wmask = None
        if scale == "window":
            self.wmask = getattr(curve, "norm_mask", None)
            if self.wmask is None:
                raise ValidationError("scale='window' needs a histogram with a normalization window")
        if weights == "poisson" and (counts is None or norm is None):
            raise ValidationError("Poisson weighting needs raw counts and the normalization value")
        self.keep = np.ones(self.tau_all.size, dtype=bool)
        if fit_window is not None:
            self.keep = np.abs(self.tau_all) <= fit_window
        self.tau = self.tau_all[self.keep]
        self.y = y_all[self.keep]
        sig = sig_all[self.keep]
        if self.tau.size < 50:
            raise ValidationError(f"need at least 50 bins to fit g2, got {self.tau.size}")
        if np.any(~np.isfinite(self.y)) or np.any(sig <= 0):
            raise ValidationError("g2 values must be finite with positive sigmas")
        self.n = None if counts is None else np.asarray(counts, dtype=float)[self.keep]
        self.norm = None if norm is None else float(norm)
        self.wt = 1.0 / sig
        self.poisson = weights == "poisson"
        self.idx = [0, 1, 2, 3, 4] if scale == "free" else [0, 1, 2, 3]
        tmax = float(np.abs(self.tau_all).max())
        self.x_lo, self.x_hi = _X_LO.copy(), _X_HI.copy()
        self.x_hi[1] = np.log(tmax)
        self.z_lo, self.z_hi = _Z_LO.copy(), _Z_HI.copy()
        self.z_hi[1] = self.z_hi[2] = np.log(tmax)

    def predict(self, t):
        """Model and its 5-column natural-parameter Jacobian on the fitted bins."""
        nat = t[:4]
        if self.scale == "window":
            g = g2_model(self.tau_all, *nat, bin_width=self.bw)
            jg = _g2_jacobian(self.tau_all, *nat, bin_width=self.bw)
            d = g[self.wmask].mean()
            jd = jg[self.wmask].mean(axis=0)
            g, jg = (g / d)[self.keep], (jg / d - np.outer(g, jd) / d**2)[self.keep]
            return g, np.column_stack([jg, np.zeros_like(g)])
        g = g2_model(self.tau, *nat, bin_width=self.bw)
        jg = _g2_jacobian(self.tau, *nat, bin_width=self.bw)
        if self.scale == "free":
            return t[4] * g, np.column_stack([t[4] * jg, g])
        return g, np.column_stack([jg, np.zeros_like(g)])

    def residuals(self, t):
        g, _ = self.predict(t)
        if self.poisson:
            return _deviance_residuals(np.maximum(self.norm * g, 1e-12), self.n)
        return (g - self.y) * self.wt

    def jacobian(self, t):
        g, jg = self.predict(t)
        if self.poisson:
            mu = np.maximum(self.norm * g, 1e-12)
            dr = _deviance_slope(mu, self.n, _deviance_residuals(mu, self.n)) * self.norm
            return jg * dr[:, None]
        return jg * self.wt[:, None]

    def information_root(self, t):
        """Square root of the per-bin Fisher weights times the model Jacobian."""
        g, jg = self.predict(t)
        if self.poisson:
            return jg * (self.norm / np.sqrt(np.maximum(self.norm * g, 1e-12)))[:, None]
        return jg * self.wt[:, None]


def _solve(fun, jac, x0, lo, hi):
    kw = dict(jac=jac, bounds=(lo, hi), x_scale="jac", xtol=1e-10, ftol=1e-10, gtol=1e-10,
              max_nfev=MAX_ITER)
    sol = least_squares(fun, np.clip(x0, lo + 1e-9, hi - 1e-9), method="trf", **kw)
    if sol.status == 0:
        # TRF crawls when the optimum sits on a bound at the end of a flat valley
        # (unresolved bunching: tau2 -> tau1 with large c); dogbox steps onto it.
        alt = least_squares(fun, np.clip(sol.x, lo, hi), method="dogbox", **kw)
        if alt.status > 0:
            return alt
    return sol


def fit_g2(curve, init=None, fit_window=None, weights="poisson", bin_average=True,
           scale="free"):
    """Fit the three-level g2 model to a normalized histogram.

    ``curve`` is a :class:`G2Histogram` (or any object with ``taus``, ``g2``,
    ``sigma``, and for Poisson weighting ``counts`` and ``norm_value``).

    weights : {"poisson", "counts"}
        "poisson" maximizes the Poisson likelihood of the raw bin counts
        (deviance residuals, Fisher-information covariance); it stays unbiased
        for sparse histograms with a few counts per bin. "counts" is plain
        weighted least squares with per-bin variance max(counts, 1), which is
        only reliable when every bin holds many counts.
    bin_average : bool
        Compare against the model averaged over each histogram bin (uses
        ``curve.bin_width``) rather than sampled at bin centers.
    scale : {"free", "window", "fixed"}
        How the model meets the normalization. "free" multiplies the model by
        a fitted nuisance factor, so the noise of the normalization constant
        and any residual bunching inside the window are absorbed and
        propagated. "window" divides the model by its own mean over the
        normalization window, mirroring the data processing exactly. "fixed"
        compares the bare model, which biases tau2 low whenever the bunching
        tail has not decayed inside the window.

    Without ``init``, a heuristic start plus two alternative bunching times are
    tried and the lowest-cost converged solution kept. Parameters are
    optimized in transformed coordinates inside loose box bounds, which keeps
    p_f in (0, 1), c > 0, tau1 < tau2 and tau2 within the histogram range. A
    parameter ending on a box bound is listed in ``bounds_active``.
    """
    prob = _G2Problem(curve, fit_window, weights, bin_average, scale)
    if init is None:
        start = initial_g2_guess(prob.tau, prob.y, prob.n)
    elif isinstance(init, G2Fit):
        start = init.params
    else:
        start = dict(init)
    idx = prob.idx

    def full(xf):
        x = np.zeros(5)
        x[idx] = xf
        return x

    def fun(xf):
        return prob.residuals(_from_x(full(xf)))

    def jac(xf):
        x = full(xf)
        return (prob.jacobian(_from_x(x)) @ _dnat_dx(x))[:, idx]

    tmax = np.exp(prob.x_hi[1])

    def clip(p):
        tau1 = float(np.clip(p["tau1"], 1e-11, 0.5 * tmax))
        tau2 = float(np.clip(p["tau2"], 1.01 * tau1, 0.99 * tmax))
        t = (float(np.clip(p["p_f"], 1e-5, 1 - 1e-8)), tau1, tau2,
             float(np.clip(p["c"], 1e-5, 9e2)), 1.0)
        return np.clip(_to_x(t), prob.x_lo + 1e-9, prob.x_hi - 1e-9)[idx]

    x0 = clip(start)
    r0 = float(np.linalg.norm(fun(x0)))
    candidates = [x0]
    if init is None:
        candidates += [clip(dict(start, tau2=m * start["tau1"])) for m in (3.0, 30.0)]
        # sparse histograms mislead the heuristic tau1; add a ladder from a few bins
        # up to a twentieth of the delay range
        step = float(np.min(np.diff(np.unique(np.abs(prob.tau))))) if prob.tau.size > 2 else 1e-9
        for t1 in np.geomspace(4 * step, tmax / 20, 4):
            if not 0.5 < t1 / start["tau1"] < 2.0:
                candidates.append(clip(dict(start, tau1=t1, tau2=10 * t1)))
    best = None
    for xs in candidates:
        sol = _solve(fun, jac, xs, prob.x_lo[idx], prob.x_hi[idx])
        if sol.status <= 0:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise NonConvergence(f"g2 fit did not converge within {MAX_ITER} iterations")
    x = full(best.x)
    t = _from_x(x)
    cov = _covariance(prob.information_root(t)[:, idx])[:4, :4]
    hit = np.minimum(best.x - prob.x_lo[idx], prob.x_hi[idx] - best.x) < \
        1e-6 * (prob.x_hi[idx] - prob.x_lo[idx])
    # coordinate order is (p_f, tau2, tau1/tau2, c, a)
    active = tuple(nm for nm, h in zip(("p_f", "tau2", "tau1", "c", "scale"), hit) if h)
    p_f, tau1, tau2, c, a = (float(v) for v in t)
    return G2Fit(p_f, tau1, tau2, c, float(np.linalg.norm(best.fun)), cov, int(prob.tau.size),
                 True, active, r0, prob.options, a if scale == "free" else 1.0)


def _constrained_deviance(prob, fit, fixed):
    """Minimum objective with the parameters in ``fixed`` held at the given values."""
    pin = [G2_NAMES.index(k) for k in fixed]
    free = [i for i in prob.idx if i not in pin]
    base = np.array([fit.params[k] for k in G2_NAMES] + [fit.scale], dtype=float)
    for k, v in fixed.items():
        base[G2_NAMES.index(k)] = v
    base[0] = np.clip(base[0], 1e-6, 1 - 1e-9)
    base[3] = max(base[3], 1e-6)
    z_full = np.clip(_to_z(base), prob.z_lo, prob.z_hi)

    def unpack(zf):
        z = z_full.copy()
        z[free] = zf
        return z

    def fun(zf):
        return prob.residuals(_from_z(unpack(zf)))

    def jac(zf):
        z = unpack(zf)
        return prob.jacobian(_from_z(z))[:, free] * _dnat_dz(z)[free]

    starts = [z_full[free]]
    if "tau2" not in fixed:
        alt = base.copy()
        alt[2] = min(max(base[2], 3.0 * base[1]), 0.99 * np.exp(prob.z_hi[2]))
        starts.append(np.clip(_to_z(alt), prob.z_lo, prob.z_hi)[free])
    best = min((_solve(fun, jac, zs, prob.z_lo[free], prob.z_hi[free]) for zs in starts),
               key=lambda sol: sol.cost)
    return 2.0 * best.cost


def g2_likelihood_ratio(fit, curve, **values):
    """Objective increase when the named parameters are pinned to ``values``.

    Returns the profile likelihood-ratio statistic (Poisson deviance, or
    chi-square for count weights) relative to ``fit``, clipped at zero. For a
    single parameter, a value lies inside the k-sigma profile interval when
    the statistic is at most k**2.
    """
    unknown = set(values) - set(G2_NAMES)
    if unknown:
        raise ValidationError(f"unknown g2 parameters {sorted(unknown)}")
    prob = _G2Problem(curve, **fit.options)
    return max(0.0, _constrained_deviance(prob, fit, values) - fit.deviance)


def profile_interval(fit, curve, name, nsigma=1.0, max_expand=40):
    """Profile-likelihood interval (lo, hi) for one parameter at ``nsigma``.

    An endpoint where the statistic never reaches nsigma**2 before the
    parameter's natural limit is returned as that limit (0 or 1 for p_f,
    0 or inf otherwise).
    """
    if name not in G2_NAMES:
        raise ValidationError(f"unknown g2 parameter {name!r}")
    prob = _G2Problem(curve, **fit.options)
    target = nsigma**2
    theta = fit.params[name]

    def excess(v):
        return _constrained_deviance(prob, fit, {name: v}) - fit.deviance - target

    ends = []
    for direction in (-1, 1):
        if name == "p_f":
            limit = 0.0 if direction < 0 else 1.0
            trial = [limit + (theta - limit) * 0.5**i for i in range(1, max_expand)]
        else:
            limit = 0.0 if direction < 0 else np.inf
            ratio = 1.0 + max(fit.sigmas[name] / theta, 0.05)
            trial = [theta * ratio ** (direction * i) for i in range(1, max_expand)]
        inner, end = theta, limit
        for cand in trial:
            if excess(cand) >= 0:
                lo, hi = sorted((inner, cand))
                end = brentq(excess, lo, hi, xtol=1e-9 * abs(theta), rtol=1e-8)
                break
            inner = cand
        ends.append(end)
    return tuple(ends)


def _covariance(jw):
    """(J^T J)^-1 via a column-scaled SVD; degenerate directions get huge, not zero, variance."""
    scale = np.linalg.norm(jw, axis=0)
    scale[scale == 0] = 1.0
    _, sv, vt = np.linalg.svd(jw / scale, full_matrices=False)
    sv = np.maximum(sv, sv.max() * 1e-15 if sv.size else 1.0)
    v = vt.T / sv
    cov = (v @ v.T) / np.outer(scale, scale)
    return 0.5 * (cov + cov.T)


# --- saturation ------------------------------------------------------------


def saturation_model(power, k, p_sat, m=0.0):
    power = np.asarray(power, dtype=float)
    return k * power / (power + p_sat) + m * power


@dataclass(frozen=True)
class SaturationFit:
    k: float
    p_sat: float
    m: float
    residual_norm: float
    covariance: np.ndarray = field(repr=False)
    n_points: int = 0
    converged: bool = True
    model: str = "confocal"
    bounds_active: tuple = ()

    @property
    def sigmas(self):
        d = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        names = ("k", "p_sat") if self.model == "confocal" else ("k", "m")
        return dict(zip(names, (float(v) for v in d)))

    @property
    def params(self):
        return {"k": self.k, "p_sat": self.p_sat, "m": self.m}

    def curve(self, power):
        return saturation_model(power, self.k, self.p_sat, self.m)

    def to_report(self):
        name = "k*P/(P+P_sat)" if self.model == "confocal" else "k*P/(P+P_sat)+m*P"
        return _report(name, self.params, self.sigmas, self.covariance, self.residual_norm,
                       self.n_points, self.converged,
                       extra={"p_sat_fixed": self.model == "fiber",
                              "bounds_active": list(self.bounds_active)})


def _points(powers, rates, sigma):
    p = np.asarray(powers, dtype=float)
    r = np.asarray(rates, dtype=float)
    if p.shape != r.shape or p.ndim != 1:
        raise ValidationError("powers and rates must be 1-D arrays of equal length")
    s = np.ones_like(r) if sigma is None else np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        raise ValidationError("sigmas must be positive")
    return p, r, s


def fit_saturation_confocal(powers, rates, sigma=None):
    """Fit C(P) = k P / (P + P_sat); k and P_sat optimized in log space."""
    p, r, s = _points(powers, rates, sigma)
    nz = p > 0
    if np.unique(p[nz]).size < 2:
        raise DegenerateDesign("need at least two distinct nonzero powers")
    # Lineweaver-Burk start: 1/C = 1/k + (P_sat/k) / P
    ok = nz & (r > 0)
    if ok.sum() >= 2:
        A = np.column_stack([np.ones(ok.sum()), 1.0 / p[ok]])
        icpt, slope = np.linalg.lstsq(A, 1.0 / r[ok], rcond=None)[0]
    else:
        icpt, slope = -1.0, -1.0
    if icpt > 0 and slope > 0:
        k0, ps0 = 1.0 / icpt, slope / icpt
    else:
        k0, ps0 = 2.0 * r.max(), float(np.median(p[nz]))
    wt = 1.0 / s

    def resid(x):
        return (saturation_model(p, np.exp(x[0]), np.exp(x[1])) - r) * wt

    def jac_nat(k, ps):
        return np.column_stack([p / (p + ps), -k * p / (p + ps) ** 2]) * wt[:, None]

    def jac(x):
        k, ps = np.exp(x)
        return jac_nat(k, ps) * np.array([k, ps])

    sol = least_squares(resid, np.log([k0, ps0]), jac=jac, method="lm", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITER * 5)
    if sol.status == 0:
        raise NonConvergence("saturation fit hit the iteration cap")
    k, ps = np.exp(sol.x)
    cov = _covariance(jac_nat(k, ps))
    if sigma is None:
        dof = max(p.size - 2, 1)
        cov = cov * (2 * sol.cost / dof)
    return SaturationFit(float(k), float(ps), 0.0, float(np.linalg.norm(sol.fun)), cov,
                         int(p.size), True, "confocal")


def fiber_design_matrix(powers, p_sat):
    p = np.asarray(powers, dtype=float)
    return np.column_stack([p / (p + p_sat), p])


def fit_saturation_fiber(powers, rates, p_sat_fixed, sigma=None):
    """Fit C(P) = k' P / (P + P_sat) + m P with P_sat held fixed; m >= 0.

    The model is linear in (k', m); it is solved iteratively with an analytic
    Jacobian, and refit with m = 0 if the unconstrained slope is negative.
    """
    if not p_sat_fixed > 0:
        raise ValidationError("fixed P_sat must be positive")
    p, r, s = _points(powers, rates, sigma)
    X = fiber_design_matrix(p, p_sat_fixed)
    wt = 1.0 / s
    Xw = X * wt[:, None]
    if np.linalg.matrix_rank(Xw) < 2:
        raise DegenerateDesign("powers do not separate the saturating and linear terms")

    def resid(x):
        return (X @ x - r) * wt

    x0 = np.array([max(r.max(), 1.0), 0.0])
    sol = least_squares(resid, x0, jac=lambda x: Xw, method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITER * 5)
    k, m = sol.x
    active = ()
    cov = _covariance(Xw)
    if m < 0:
        active = ("m",)
        xk = X[:, :1] * wt[:, None]
        k = float(np.linalg.lstsq(xk, r * wt, rcond=None)[0][0])
        m = 0.0
        cov = np.zeros((2, 2))
        cov[0, 0] = 1.0 / float(xk[:, 0] @ xk[:, 0])
    res = (X @ np.array([k, m]) - r) * wt
    if sigma is None:
        dof = max(p.size - 2, 1)
        cov = cov * (float(res @ res) / dof)
    return SaturationFit(float(k), float(p_sat_fixed), float(m), float(np.linalg.norm(res)),
                         cov, int(p.size), True, "fiber", active)


# --- lifetime -------------------------------------------------------------


@dataclass(frozen=True)
class LifetimeExtrapolation:
    tau_tot: float
    sigma: float
    slope: float
    intercept: float
    covariance: np.ndarray = field(repr=False)
    chi2_red: float = float("nan")
    negative_intercept: bool = False

    def to_report(self):
        return {
            "model": "1/tau1 = 1/tau_tot + slope*P",
            "params": {"tau_tot": self.tau_tot, "slope": self.slope, "intercept": self.intercept},
            "sigmas": {"tau_tot": self.sigma,
                       "slope": float(np.sqrt(self.covariance[1, 1])),
                       "intercept": float(np.sqrt(self.covariance[0, 0]))},
            "covariance": [[float(x) for x in row] for row in self.covariance],
            "chi2_red": self.chi2_red,
            "negative_intercept": self.negative_intercept,
        }


def extrapolate_lifetime(powers, tau1, sigma=None):
    """Weighted straight-line fit of 1/tau1 against power; tau_tot = 1/intercept.

    The covariance is inflated by the reduced chi-square when that exceeds one.
    A single point at zero power is returned as is.
    """
    p = np.asarray(powers, dtype=float)
    t = np.asarray(tau1, dtype=float)
    s = np.full_like(t, np.nan) if sigma is None else np.asarray(sigma, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValidationError("powers and tau1 must be 1-D arrays of equal length")
    if np.any(t <= 0):
        raise ValidationError("tau1 values must be positive")
    if np.unique(p).size == 1:
        if p[0] == 0:
            sd = float(s[0]) if np.isfinite(s[0]) else 0.0
            return LifetimeExtrapolation(float(t[0]), sd, 0.0, 1.0 / float(t[0]),
                                         np.zeros((2, 2)))
        raise DegenerateDesign("need at least two distinct powers to extrapolate")
    y = 1.0 / t
    if sigma is None:
        w = np.ones_like(y)
    else:
        sy = s / t**2
        if np.any(sy <= 0):
            raise ValidationError("sigmas must be positive")
        w = 1.0 / sy**2
    X = np.column_stack([np.ones_like(p), p])
    xtwx = X.T @ (X * w[:, None])
    cov = np.linalg.inv(xtwx)
    icpt, slope = cov @ (X.T @ (w * y))
    res = y - (icpt + slope * p)
    dof = p.size - 2
    chi2_red = float(w @ res**2 / dof) if dof > 0 else float("nan")
    if sigma is None and dof > 0:
        cov = cov * chi2_red
    elif dof > 0 and chi2_red > 1:
        cov = cov * chi2_red
    tau_tot = 1.0 / icpt
    sd = float(np.sqrt(cov[0, 0]) / icpt**2)
    return LifetimeExtrapolation(float(tau_tot), abs(sd), float(slope), float(icpt), cov,
                                 chi2_red, bool(icpt <= 0))
