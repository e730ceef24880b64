"""Parameter estimation for afterpulse, dark-count, free-running and quench data.

All nonlinear fits use a bounded trust-region least-squares solver with
analytic Jacobians. Model functions and their Jacobians are public so they
can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, nnls
from scipy.special import ndtr

from .device_model import K_BOLTZMANN_EV, AfterpulseModel, FreeRunningModel
from .errors import ConfigurationError, DomainError

MAX_ITERATIONS = 200
XTOL = 1e-8
FTOL = 1e-10

# Width of a linear 1 -> 0 ramp divided by the width of its least-squares
# normal-CDF fit over a wide scan. Converts a fitted S-curve width into a
# closing time; a scan of +-3 closing times reads about 1% high.
RAMP_TO_NORMAL_WIDTH = 3.1267238


@dataclass
class FitResult:
    """Fitted parameters with covariance and diagnostics.

    ``chi2`` is the weighted residual sum of squares. When ``converged`` is
    false the parameters are still the solver's last iterate.
    """

    names: tuple
    units: tuple
    params: np.ndarray
    covariance: np.ndarray | None
    chi2: float
    n_points: int
    n_iterations: int
    converged: bool
    flags: tuple = ()
    diagnostics: dict = field(default_factory=dict)
    input_digest: str = ""

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    @property
    def stderr(self) -> np.ndarray:
        if self.covariance is None:
            return np.full(len(self.params), np.nan)
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def error(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    def to_dict(self) -> dict:
        se = self.stderr
        return {
            "parameters": [{"name": n, "unit": u, "value": float(v), "stderr": float(e)}
                           for n, u, v, e in zip(self.names, self.units, self.params, se)],
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "chi2": float(self.chi2),
            "n_points": self.n_points,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "flags": list(self.flags),
            "diagnostics": _plain(self.diagnostics),
            "input_digest": self.input_digest,
        }

    def write_report(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def _covariance(jac_w: np.ndarray) -> np.ndarray:
    # pseudo-inverse of J^T J for weighted residuals; symmetric PSD by construction
    _, sv, vt = np.linalg.svd(jac_w, full_matrices=False)
    keep = sv > sv[0] * 1e-12 if len(sv) and sv[0] > 0 else np.zeros_like(sv, dtype=bool)
    inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0) ** 2, 0.0)
    cov = (vt.T * inv) @ vt
    return 0.5 * (cov + cov.T)


def _condition(jac_w: np.ndarray) -> float:
    sv = np.linalg.svd(jac_w, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf


def _solve(fun, jac, x0, lower, upper, x_scale="jac"):
    sol = least_squares(fun, x0, jac=jac, bounds=(lower, upper), method="trf",
                        xtol=XTOL, ftol=FTOL, gtol=1e-12, max_nfev=MAX_ITERATIONS, x_scale=x_scale)
    return sol, bool(sol.status > 0)


# -- afterpulse curve -------------------------------------------------------------

def afterpulse_curve(theta, tau_d, cd_gate_width: float = 100.0) -> np.ndarray:
    """P_AP(tau_d) per ns for ``theta = [a_1, dt_1, a_2, dt_2, ...]`` with lumped amplitudes."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(tau_d, dtype=float)
    a, dt = theta[0::2], theta[1::2]
    rate = (a / dt * np.exp(-t[:, None] / dt)).sum(axis=1)
    return -np.expm1(-cd_gate_width * rate) / cd_gate_width


def afterpulse_jacobian(theta, tau_d, cd_gate_width: float = 100.0) -> np.ndarray:
    """d P_AP / d theta, shape ``(len(tau_d), len(theta))``."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(tau_d, dtype=float)[:, None]
    a, dt = theta[0::2], theta[1::2]
    decay = np.exp(-t / dt)
    rate = (a / dt * decay).sum(axis=1)
    outer = np.exp(-cd_gate_width * rate)[:, None]
    jac = np.empty((t.shape[0], theta.size))
    jac[:, 0::2] = outer * decay / dt
    jac[:, 1::2] = outer * a * decay * (t - dt) / dt ** 3
    return jac


def _check_points(x, y, sigma, min_points, name="x"):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape).copy()
    if x.ndim != 1 or x.shape != y.shape:
        raise ConfigurationError(f"{name} and data must be 1-d arrays of equal length")
    if len(np.unique(x)) != len(x):
        raise ConfigurationError(f"{name} values must be distinct")
    if len(x) < min_points:
        raise ConfigurationError(f"need at least {min_points} points, got {len(x)}")
    if np.any(~(sigma > 0)):
        raise ConfigurationError("sigma must be > 0")
    return x, y, sigma


def _linearized_rate(p_ap, sigma, cd_gate_width):
    # invert the in-gate Poisson saturation so amplitudes enter linearly
    u = np.clip(cd_gate_width * p_ap, 0.0, 1.0 - 1e-12)
    return -np.log1p(-u) / cd_gate_width, sigma / (1.0 - u)


def _nnls_amplitudes(tau_d, y, sigma, taus):
    basis = np.exp(-tau_d[:, None] / taus) / taus
    amps, rnorm = nnls(basis / sigma[:, None], y / sigma)
    return amps, rnorm ** 2


def _fit_afterpulse_order(tau_d, p_ap, sigma, k, cd_gate_width, n_grid=16, n_starts=4):
    y, sy = _linearized_rate(p_ap, sigma, cd_gate_width)
    lo, hi = tau_d.min() / 4.0, tau_d.max() * 2.0
    grid = np.geomspace(lo, hi, n_grid)
    starts = []
    for combo in itertools.combinations(grid, k):
        taus = np.array(combo)
        amps, chi2 = _nnls_amplitudes(tau_d, y, sy, taus)
        starts.append((chi2, tuple(taus), amps))
    starts.sort(key=lambda s: (s[0], s[1]))

    def resid(th):
        return (afterpulse_curve(th, tau_d, cd_gate_width) - p_ap) / sigma

    def jac(th):
        return afterpulse_jacobian(th, tau_d, cd_gate_width) / sigma[:, None]

    lower = np.tile([0.0, 1e-3], k)
    upper = np.full(2 * k, np.inf)
    best = None
    for _, taus, amps in starts[:n_starts]:
        x0 = np.empty(2 * k)
        x0[0::2] = np.maximum(amps, 1e-12 * max(amps.max(), 1e-12))
        x0[1::2] = taus
        sol, ok = _solve(resid, jac, x0, lower, upper)
        order = np.argsort(sol.x[1::2])
        x = np.column_stack([sol.x[0::2][order], sol.x[1::2][order]]).ravel()
        chi2 = float(np.sum(sol.fun ** 2))
        key = (chi2, tuple(x))
        if best is None or key < best[0]:
            best = (key, x, sol, ok)
    (chi2, _), x, sol, ok = best
    return x, chi2, sol, ok


def _aicc(chi2, n_params, n_points):
    denom = n_points - n_params - 1
    return chi2 + 2 * n_params + (2 * n_params * (n_params + 1) / denom if denom > 0 else np.inf)


def fit_afterpulse_curve(tau_d, p_ap, sigma, n_species="auto", cd_gate_width: float = 100.0,
                         max_species: int = 4) -> FitResult:
    """Multi-exponential fit of an afterpulse-probability curve.

    Parameters
    ----------
    tau_d, p_ap, sigma : array_like
        Deadtimes (ns), afterpulse probabilities (ns^-1) and their standard errors.
    n_species : int or "auto"
        Number of trap species. ``"auto"`` increases the order while the
        small-sample corrected AIC improves; ties keep the smaller order.
    cd_gate_width : float
        Width of the gate the probabilities were measured in (ns).

    Returns
    -------
    FitResult
        Parameters ``a_i`` (trapped carriers times avalanche probability,
        only the product is identifiable) and ``dt_i`` (ns), sorted by ``dt_i``.
    """
    auto = n_species == "auto"
    k_min = 1 if auto else int(n_species)
    if k_min < 1:
        raise ConfigurationError("n_species must be >= 1 or 'auto'")
    tau_d, p_ap, sigma = _check_points(tau_d, p_ap, sigma, 2 * k_min + 1, "tau_d")
    n = len(tau_d)
    k_max = min(max_species, (n - 2) // 2) if auto else k_min

    table, fits = [], {}
    for k in range(k_min, k_max + 1):
        x, chi2, sol, ok = _fit_afterpulse_order(tau_d, p_ap, sigma, k, cd_gate_width)
        score = _aicc(chi2, 2 * k, n)
        table.append({"n_species": k, "chi2": chi2, "aicc": score})
        fits[k] = (x, chi2, sol, ok)
        if auto and len(table) > 1 and not score < table[-2]["aicc"]:
            break
    if auto:
        k_best = min(table, key=lambda r: (r["aicc"], r["n_species"]))["n_species"]
    else:
        k_best = k_min
    x, chi2, sol, ok = fits[k_best]

    jac_w = afterpulse_jacobian(x, tau_d, cd_gate_width) / sigma[:, None]
    flags = []
    cond = _condition(jac_w)
    taus = x[1::2]
    if cond > 1e10 or (k_best > 1 and np.min(taus[1:] / taus[:-1]) < 1.2):
        flags.append(f"ill-conditioned: clustered time constants (condition number {cond:.3g})")
    if not ok:
        flags.append("did not converge within the iteration cap")
    names = tuple(itertools.chain.from_iterable((f"a_{i + 1}", f"dt_{i + 1}") for i in range(k_best)))
    units = ("", "ns") * k_best
    return FitResult(
        names=names, units=units, params=x, covariance=_covariance(jac_w), chi2=chi2,
        n_points=n, n_iterations=int(sol.nfev), converged=ok, flags=tuple(flags),
        diagnostics={"orders": table, "selected_order": k_best, "condition_number": cond,
                     "cd_gate_width_ns": cd_gate_width,
                     "residuals": ((p_ap - afterpulse_curve(x, tau_d, cd_gate_width)) / sigma).tolist()},
        input_digest=_digest(tau_d, p_ap, sigma))


# -- Arrhenius ----------------------------------------------------------------------

def fit_arrhenius(temperatures, p_dc, sigma=None, window=None) -> FitResult:
    """Weighted straight-line fit of ``ln(P_DC / T^2)`` against ``1 / kT``.

    Parameters
    ----------
    temperatures, p_dc : array_like
        Temperatures (K) and dark-count probabilities per ns.
    sigma : array_like, optional
        Standard errors of ``p_dc``. Without them the fit is unweighted and the
        covariance is scaled by the residual variance.
    window : (float, float), optional
        Inclusive temperature range to fit.

    Returns
    -------
    FitResult
        ``activation_energy`` (eV) and ``prefactor`` (ns^-1 K^-2).
    """
    t = np.asarray(temperatures, dtype=float)
    p = np.asarray(p_dc, dtype=float)
    s = np.ones_like(p) if sigma is None else np.broadcast_to(np.asarray(sigma, float), p.shape)
    if t.shape != p.shape:
        raise ConfigurationError("temperatures and p_dc must have equal length")
    if window is not None:
        keep = (t >= min(window)) & (t <= max(window))
        t, p, s = t[keep], p[keep], s[keep]
    if len(t) < 2:
        raise ConfigurationError("need at least 2 points in the temperature window")
    if np.any(p <= 0):
        raise DomainError("dark-count probabilities must be > 0")
    if np.any(t <= 0):
        raise DomainError("temperatures must be > 0 K")

    x = 1.0 / (K_BOLTZMANN_EV * t)
    y = np.log(p / t ** 2)
    w = 1.0 / (s / p) ** 2 if sigma is not None else np.ones_like(p)
    design = np.column_stack([np.ones_like(x), -x])
    sw = np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(design * sw, y * sw[:, 0], rcond=None)
    resid = (y - design @ coef) * sw[:, 0]
    chi2 = float(resid @ resid)
    cov = np.linalg.pinv((design * sw).T @ (design * sw))
    if sigma is None:
        dof = len(t) - 2
        cov = cov * (chi2 / dof) if dof > 0 else None
    log_pref, e_a = coef
    params = np.array([e_a, np.exp(log_pref)])
    if cov is not None:
        # propagate ln(prefactor) -> prefactor
        g = np.diag([1.0, params[1]])
        cov = g @ cov[::-1, ::-1] @ g
        cov = 0.5 * (cov + cov.T)
    return FitResult(
        names=("activation_energy", "prefactor"), units=("eV", "ns^-1 K^-2"),
        params=params, covariance=cov, chi2=chi2, n_points=len(t), n_iterations=1,
        converged=True, diagnostics={"window_K": [float(t.min()), float(t.max())],
                                     "residuals": resid.tolist()},
        input_digest=_digest(t, p, s))


# -- free-running rate model ------------------------------------------------------------

@dataclass(frozen=True)
class FreeRunningCurve:
    """Free-running rate (Hz) versus deadtime with a chosen subset of free parameters.

    Free parameters are any of ``"P_DE"``, ``"P_DC"`` and ``"amplitudes"``
    (the lumped amplitudes, one per trap species). Detrapping time constants,
    trial rate, mean photon number and the integration horizon stay fixed.
    """

    base: FreeRunningModel
    traps: AfterpulseModel
    free: tuple = ("P_DE", "P_DC", "amplitudes")

    def __post_init__(self):
        unknown = set(self.free) - {"P_DE", "P_DC", "amplitudes"}
        if unknown:
            raise ConfigurationError(f"unknown free parameters {sorted(unknown)}")

    @property
    def names(self) -> tuple:
        out = []
        for name in ("P_DE", "P_DC"):
            if name in self.free:
                out.append(name)
        if "amplitudes" in self.free:
            out += [f"a_{i + 1}" for i in range(len(self.traps.traps))]
        return tuple(out)

    def initial(self) -> np.ndarray:
        vals = []
        if "P_DE" in self.free:
            vals.append(self.base.detection_efficiency)
        if "P_DC" in self.free:
            vals.append(self.base.dark_probability)
        if "amplitudes" in self.free:
            vals += list(self.traps.lumped_amplitudes)
        return np.array(vals, dtype=float)

    def _unpack(self, theta):
        theta = list(np.asarray(theta, dtype=float))
        p_de = theta.pop(0) if "P_DE" in self.free else self.base.detection_efficiency
        p_dc = theta.pop(0) if "P_DC" in self.free else self.base.dark_probability
        amps = np.array(theta) if "amplitudes" in self.free else self.traps.lumped_amplitudes
        return p_de, p_dc, amps

    def _parts(self, theta, tau_d):
        p_de, p_dc, amps = self._unpack(theta)
        t = np.asarray(tau_d, dtype=float)[:, None]
        taus = self.traps.detrap_taus
        horizon = self.base.integration_horizon
        mu, n = self.base.mean_photon_number, self.base.photon_rate
        survive = np.exp(-mu * p_de)
        eta = -np.expm1(-mu * p_de) + survive * p_dc  # avoids cancellation at small mu
        basis = np.exp(-t / taus) - np.exp(-horizon / taus) if len(taus) else np.zeros((len(t), 0))
        ap = basis @ amps if len(taus) else np.zeros(len(t))
        tau = t[:, 0] * 1e-9
        return p_de, p_dc, survive, eta, n, tau, basis, ap, mu

    def __call__(self, theta, tau_d) -> np.ndarray:
        *_, eta, n, tau, _, ap, _ = self._parts(theta, tau_d)
        return eta * n * (1.0 - eta * n * tau) * (1.0 + ap)

    def jacobian(self, theta, tau_d) -> np.ndarray:
        p_de, p_dc, survive, eta, n, tau, basis, ap, mu = self._parts(theta, tau_d)
        dg_deta = n * (1.0 - 2.0 * eta * n * tau) * (1.0 + ap)
        cols = []
        if "P_DE" in self.free:
            cols.append(dg_deta * mu * survive * (1.0 - p_dc))
        if "P_DC" in self.free:
            cols.append(dg_deta * survive)
        if "amplitudes" in self.free:
            g = eta * n * (1.0 - eta * n * tau)
            cols += list((g[:, None] * basis).T)
        return np.column_stack(cols) if cols else np.zeros((len(tau), 0))


def fit_free_running(tau_d, rate, sigma, curve: FreeRunningCurve) -> FitResult:
    """Least-squares fit of the free-running rate model to measured rates (Hz).

    The diagnostics report mean normalized residuals (data minus model) for
    three deadtime regions relative to the longest detrapping time constant:
    below 2x, between 2x and 5x, and above 5x.
    """
    tau_d, rate, sigma = _check_points(tau_d, rate, sigma, len(curve.names) + 1, "tau_d")
    if not curve.names:
        raise ConfigurationError("no free parameters")

    def resid(th):
        return (curve(th, tau_d) - rate) / sigma

    def jac(th):
        return curve.jacobian(th, tau_d) / sigma[:, None]

    n_free = len(curve.names)
    lower = np.zeros(n_free)
    upper = np.full(n_free, np.inf)
    for i, name in enumerate(curve.names):
        if name in ("P_DE", "P_DC"):
            upper[i] = 1.0
    x0 = np.clip(curve.initial(), lower + 1e-12, np.where(np.isfinite(upper), upper - 1e-12, np.inf))
    sol, ok = _solve(resid, jac, x0, lower, upper)
    norm_resid = -sol.fun
    longest = curve.traps.detrap_taus.max() if len(curve.traps.traps) else np.inf
    regions = {"small": tau_d < 2 * longest,
               "mid": (tau_d >= 2 * longest) & (tau_d <= 5 * longest),
               "large": tau_d > 5 * longest}
    region_stats = {k: (float(norm_resid[m].mean()) if m.any() else None) for k, m in regions.items()}
    jac_w = jac(sol.x)
    return FitResult(
        names=curve.names,
        units=tuple("" for _ in curve.names),
        params=sol.x, covariance=_covariance(jac_w), chi2=float(sol.fun @ sol.fun),
        n_points=len(tau_d), n_iterations=int(sol.nfev), converged=ok,
        flags=() if ok else ("did not converge within the iteration cap",),
        diagnostics={"region_mean_normalized_residual": region_stats,
                     "residuals": norm_resid.tolist()},
        input_digest=_digest(tau_d, rate, sigma))


# -- S-curve and quench timing ----------------------------------------------------------

def s_curve(theta, delay) -> np.ndarray:
    """``floor + (plateau - floor) * Phi((d0 - delay) / width)`` for ``theta = [d0, width, plateau, floor]``."""
    d0, s, plateau, floor = theta
    return floor + (plateau - floor) * ndtr((d0 - np.asarray(delay, dtype=float)) / s)


def s_curve_jacobian(theta, delay) -> np.ndarray:
    d0, s, plateau, floor = theta
    z = (d0 - np.asarray(delay, dtype=float)) / s
    pdf = np.exp(-0.5 * z ** 2) / np.sqrt(2 * np.pi)
    cdf = ndtr(z)
    span = plateau - floor
    return np.column_stack([span * pdf / s, -span * pdf * z / s, cdf, 1.0 - cdf])


def fit_s_curve(delay, rate, sigma=None) -> FitResult:
    """Fit a falling normal-CDF step to rate versus delay.

    Flags the result when the plateau and floor are statistically
    indistinguishable or when the width collapses to its lower bound.
    """
    sig = np.ones(len(np.atleast_1d(rate))) if sigma is None else sigma
    delay, rate, sig = _check_points(delay, rate, sig, 5, "delay")
    order = np.argsort(delay)
    d, r = delay[order], rate[order]
    plateau0, floor0 = r[:2].mean(), r[-2:].mean()
    half = 0.5 * (plateau0 + floor0)
    below = np.nonzero((r - half) * np.sign(plateau0 - floor0) < 0)[0]
    d0 = d[below[0]] if len(below) else d[len(d) // 2]
    width0 = max((d[-1] - d[0]) / 10.0, 1e-6)
    span = d[-1] - d[0]
    min_width = span * 1e-6

    def resid(th):
        return (s_curve(th, delay) - rate) / sig

    def jac(th):
        return s_curve_jacobian(th, delay) / sig[:, None]

    sol, ok = _solve(resid, jac, np.array([d0, width0, plateau0, floor0]),
                     [d[0] - span, min_width, -np.inf, -np.inf], [d[-1] + span, span, np.inf, np.inf])
    x = sol.x
    flags = []
    if not ok:
        flags.append("did not converge within the iteration cap")
    # without sigma only an exactly flat curve can be called non-sigmoidal
    tol = 3.0 * np.median(sig) if sigma is not None else 1e-9 * np.max(np.abs(rate))
    if abs(x[2] - x[3]) <= tol:
        flags.append("not sigmoidal: plateau and floor are indistinguishable")
    if x[1] < 0.5 * np.min(np.diff(d)):
        flags.append("width unresolved by the delay grid (step-like data)")
    jac_w = jac(x)
    cov = _covariance(jac_w)
    if sigma is None:
        dof = len(delay) - 4
        cov = cov * (sol.fun @ sol.fun / dof) if dof > 0 else None
    return FitResult(
        names=("midpoint", "width", "plateau", "floor"), units=("ns", "ns", "", ""),
        params=x, covariance=cov, chi2=float(sol.fun @ sol.fun), n_points=len(delay),
        n_iterations=int(sol.nfev), converged=ok, flags=tuple(flags),
        diagnostics={"residuals": (-sol.fun).tolist()},
        input_digest=_digest(delay, rate, sig))


@dataclass(frozen=True)
class QuenchTimingEstimate:
    """Closing time from the detection S-curve width; midpoint shift of the afterpulse curve (ns)."""

    closing_time: float
    closing_time_se: float
    midpoint_separation: float
    midpoint_separation_se: float
    detection_width: float


def estimate_quench_timing(detection: FitResult, afterpulse: FitResult,
                           pulse_sigma: float = 0.0) -> QuenchTimingEstimate:
    """Turn detection and afterpulse S-curve fits into quench-timing estimates.

    The detection curve is modeled as a linear closing ramp blurred by the
    optical pulse; ``pulse_sigma`` (ns, Gaussian rms) is removed in quadrature
    before converting the width with :data:`RAMP_TO_NORMAL_WIDTH`.
    """
    s, s_se = detection["width"], detection.error("width")
    intrinsic = np.sqrt(max(s ** 2 - pulse_sigma ** 2, 0.0))
    closing = RAMP_TO_NORMAL_WIDTH * intrinsic
    closing_se = RAMP_TO_NORMAL_WIDTH * s * s_se / intrinsic if intrinsic > 0 else np.inf
    sep = detection["midpoint"] - afterpulse["midpoint"]
    sep_se = float(np.hypot(detection.error("midpoint"), afterpulse.error("midpoint")))
    return QuenchTimingEstimate(float(closing), float(closing_se), float(sep), sep_se, float(s))


def fit_quench_timing(delay, detection_mean, afterpulse_rate, afterpulse_sigma=None,
                      pulse_sigma: float = 0.0):
    """S-fit both quench-scan curves and derive the quench timing.

    The detection curve is fitted without weights: the ramp-to-normal width
    conversion holds for uniform weighting over an evenly spaced delay grid,
    and Poisson weights would tilt the misspecified fit towards the floor.

    Parameters
    ----------
    delay : array_like
        Photon delay relative to the gate end (ns), evenly spaced.
    detection_mean : array_like
        Saturation-corrected detections per gate, ``-ln(1 - clicks/gates)``.
    afterpulse_rate, afterpulse_sigma : array_like
        Afterpulse rate and its standard error.

    Returns
    -------
    (QuenchTimingEstimate, FitResult, FitResult)
        Estimate, detection fit and afterpulse fit.
    """
    det = fit_s_curve(delay, detection_mean)
    ap = fit_s_curve(delay, afterpulse_rate, afterpulse_sigma)
    return estimate_quench_timing(det, ap, pulse_sigma), det, ap
