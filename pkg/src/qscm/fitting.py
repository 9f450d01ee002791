"""Nonlinear least squares for the spectral and profile models.

A small Levenberg-Marquardt loop with analytic Jacobians covers every fit
in the pipeline (per-pixel ODMR lines and the wire profile).  Keeping the
optimizer in one place makes the iteration cap and step tolerance uniform:
200 iterations, relative step tolerance 1e-9.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigInvalid, DegenerateSpectrum, NoConvergence

MAX_ITER = 200
REL_STEP_TOL = 1e-9


def levenberg_marquardt(residual_jac: Callable, p0,
                        max_iter: int = MAX_ITER,
                        rel_step_tol: float = REL_STEP_TOL,
                        accept: Optional[Callable] = None):
    """Minimize ||r(p)||^2 given r and its Jacobian.

    residual_jac(p) returns (r, J) with r shape (n,) and J shape (n, m).
    accept, when given, vetoes candidate parameter vectors (domain guards
    like sigma > 0); a vetoed step is treated as a failed step and the
    damping increases.

    Returns (p, cov, ssr, n_iter); cov is the Gauss-Newton covariance
    inv(J'J) * ssr/(n - m) at the optimum, or None when n <= m or J'J is
    singular there.

    Raises:
        NoConvergence: the step never shrinks below tolerance within the
            iteration cap.
    """
    p = np.asarray(p0, dtype=float).copy()
    r, jac = residual_jac(p)
    ssr = float(r @ r)
    lam = 1e-3
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1e-300
        stepped = False
        for _ in range(60):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            cand = p + delta
            if accept is not None and not accept(cand):
                lam *= 4.0
                continue
            r_new, jac_new = residual_jac(cand)
            ssr_new = float(r_new @ r_new)
            if np.isfinite(ssr_new) and ssr_new <= ssr:
                rel = np.linalg.norm(delta) / (np.linalg.norm(p) + rel_step_tol)
                p, r, jac, ssr = cand, r_new, jac_new, ssr_new
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if rel < rel_step_tol:
                    converged = True
                break
            lam *= 4.0
        if converged:
            break
        if not stepped:
            # Damping is saturated: the current point is a numerical optimum.
            converged = True
            break
    if not converged:
        raise NoConvergence(f"no convergence within {max_iter} iterations")

    n, m = jac.shape
    cov = None
    if n > m:
        try:
            cov = np.linalg.inv(jac.T @ jac) * (ssr / (n - m))
        except np.linalg.LinAlgError:
            cov = None
    return p, cov, ssr, n_iter


@dataclass(frozen=True)
class FitResult:
    """One fitted spectral line."""

    center_mhz: float
    sigma_mhz: float
    amplitude: float
    baseline: float
    center_stderr_mhz: float
    converged: bool
    residual_rms: float


def _peak_model(p, nu):
    c, s, a, b = p
    u = (nu - c) / s
    e = np.exp(-0.5 * u * u)
    model = b + a * e
    jac = np.empty((nu.size, 4))
    jac[:, 0] = a * e * (nu - c) / (s * s)
    jac[:, 1] = a * e * (nu - c) ** 2 / (s ** 3)
    jac[:, 2] = e
    jac[:, 3] = 1.0
    return model, jac


def _fm_model(p, nu, depth):
    c, s, a, b = p
    up = nu + depth - c
    um = nu - depth - c
    ep = np.exp(-0.5 * (up / s) ** 2)
    em = np.exp(-0.5 * (um / s) ** 2)
    model = b + a * (ep - em)
    jac = np.empty((nu.size, 4))
    jac[:, 0] = a * (ep * up - em * um) / (s * s)
    jac[:, 1] = a * (ep * up * up - em * um * um) / (s ** 3)
    jac[:, 2] = ep - em
    jac[:, 3] = 1.0
    return model, jac


def _initial_peak(nu, sig):
    # The median baseline is biased when the line fills most of the sweep,
    # which can hand the extremum to an edge noise spike of the wrong sign.
    # Start from the absolute extremum plus both signed extrema and let the
    # optimizer pick the best by SSR.
    base = float(np.median(sig))
    starts = []
    for idx in (int(np.argmax(np.abs(sig - base))),
                int(np.argmin(sig)), int(np.argmax(sig))):
        amp = float(sig[idx] - base)
        if amp == 0.0:
            continue
        # half-width scan outward from the extremum
        half = abs(amp) / 2.0
        left = idx
        while left > 0 and abs(sig[left] - base) > half:
            left -= 1
        right = idx
        while right < sig.size - 1 and abs(sig[right] - base) > half:
            right += 1
        fwhm = max(nu[right] - nu[left], nu[1] - nu[0])
        starts.append(np.array([nu[idx], fwhm / 2.355, amp, base]))
    return starts


def _initial_fm(nu, sig):
    base = float(np.median(sig))
    imax = int(np.argmax(sig))
    imin = int(np.argmin(sig))
    lo, hi = min(imax, imin), max(imax, imin)
    # zero crossing of the de-based signal between the two lobes
    center = 0.5 * (nu[imax] + nu[imin])
    seg = sig[lo:hi + 1] - base
    cross = np.flatnonzero(seg[:-1] * seg[1:] <= 0)
    if cross.size:
        i = lo + int(cross[0])
        s0, s1 = sig[i] - base, sig[i + 1] - base
        if s1 != s0:
            center = nu[i] - s0 * (nu[i + 1] - nu[i]) / (s1 - s0)
    sigma = max(abs(nu[imax] - nu[imin]) / 2.0, nu[1] - nu[0])
    amp = (sig[imax] - sig[imin]) / 2.0
    if nu[imax] > nu[imin]:
        amp = -amp
    p0 = np.array([center, sigma, amp, base])
    flipped = p0.copy()
    flipped[2] = -flipped[2]
    return [p0, flipped]


def fit_gaussian(freqs_mhz, signal, shape: str = "peak",
                 fm_depth_mhz: float = 4.0) -> FitResult:
    """Fit one spectrum with a Gaussian peak or its FM two-point difference.

    Free parameters are (center, sigma, amplitude, baseline); the FM depth
    is fixed, matching how the data were demodulated.  center_stderr comes
    from the covariance diagonal at the optimum.

    Raises:
        DegenerateSpectrum: fewer than 5 points, or flat within noise
            (peak-to-feature amplitude below the first-difference noise
            estimate).
        NoConvergence: iteration cap hit.
    """
    nu = np.asarray(freqs_mhz, dtype=float)
    sig = np.asarray(signal, dtype=float)
    if nu.ndim != 1 or nu.shape != sig.shape:
        raise ConfigInvalid("spectrum arrays must be 1-D and parallel")
    if shape not in ("peak", "fm_difference"):
        raise ConfigInvalid(f"fit shape: unknown shape '{shape}'")
    if nu.size < 5:
        raise DegenerateSpectrum(f"need >= 5 points, got {nu.size}")

    base = float(np.median(sig))
    amp_est = float(np.max(np.abs(sig - base)))
    noise_est = float(np.std(np.diff(sig))) / np.sqrt(2.0)
    if amp_est == 0.0 or (noise_est > 0.0 and amp_est / noise_est < 1.0):
        raise DegenerateSpectrum("spectrum is flat within its noise")

    if shape == "peak":
        starts = _initial_peak(nu, sig)

        def residual_jac(p):
            model, jac = _peak_model(p, nu)
            return model - sig, jac
    else:
        starts = _initial_fm(nu, sig)

        def residual_jac(p):
            model, jac = _fm_model(p, nu, fm_depth_mhz)
            return model - sig, jac

    mid = 0.5 * (nu[0] + nu[-1])
    span = float(nu[-1] - nu[0])

    def accept(p):
        # keep the line near the sweep; unbounded sigma overflows s**3 in
        # the Jacobian while buying no residual
        return (np.isfinite(p).all() and 0.0 < p[1] <= 50.0 * span
                and abs(p[0] - mid) <= 10.0 * span)

    best = None
    for p0 in starts:
        try:
            result = levenberg_marquardt(residual_jac, p0, accept=accept)
        except NoConvergence:
            continue
        if best is None or result[2] < best[2]:
            best = result
    if best is None:
        raise NoConvergence("no starting point converged")
    p, cov, ssr, _ = best
    # near-singular J'J can leave a nonpositive variance estimate; report
    # such centers as unconstrained rather than NaN
    c00 = cov[0, 0] if cov is not None else -1.0
    stderr = float(np.sqrt(c00)) if c00 > 0 else float("inf")
    return FitResult(center_mhz=float(p[0]), sigma_mhz=float(abs(p[1])),
                     amplitude=float(p[2]), baseline=float(p[3]),
                     center_stderr_mhz=stderr, converged=True,
                     residual_rms=float(np.sqrt(ssr / nu.size)))
