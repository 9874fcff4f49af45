"""Scalar root finding and adaptive quadrature used by the reduction procedures.

Both come in a batched flavour (numpy arrays, one independent problem per
entry) and reduce to the scalar case for plain floats.  The scalar quadrature
also accepts :class:`~varidyn.dual.Dual` integrands and endpoints so that
quadrature-defined Lagrangians stay differentiable.
"""

from __future__ import annotations

import math

import numpy as np

from . import dual as D
from .errors import ConvergenceError, NoBracketError, QuadratureError

EPS = np.finfo(float).eps


def solve_root(fun, seed, size=None, *, positive=False, xtol=1e-14, ftol=None,
               max_iter=200, max_expand=60):
    """Damped Newton from ``seed`` with a bisection fallback.

    Parameters
    ----------
    fun : callable
        ``fun(w, idx) -> (F, dF)`` evaluating the residual and its derivative
        for the batch entries ``idx`` (an integer index array) at ``w``.
    seed : float
        Starting point shared by every entry; also the centre of the bracket
        search when Newton fails.
    size : int or None
        Batch size, or ``None`` for a scalar problem (returns a float).
    positive : bool
        Restrict the search to ``w > 0``.
    ftol : float or array, optional
        Residual bound that a converged entry must satisfy.

    Raises
    ------
    NoBracketError
        Geometric expansion found no sign change.
    ConvergenceError
        Bisection did not converge within ``max_iter`` halvings.
    """
    scalar = size is None
    m = 1 if scalar else int(size)
    seed = float(seed)
    if positive and seed <= 0:
        raise ValueError("positive root search needs a positive seed")
    ftol_arr = np.broadcast_to(np.asarray(np.inf if ftol is None else ftol, float), (m,))

    w = np.full(m, seed)
    done = np.zeros(m, bool)
    active = np.arange(m)
    with D.lenient():
        F, dF = (np.asarray(x, float) for x in fun(w[active], active))
        if positive:
            # residual undefined at the seed: grow w until it is (batched)
            for _ in range(max_expand):
                bad = np.flatnonzero(~np.isfinite(F))
                if bad.size == 0:
                    break
                w[bad] *= 2.0
                fb, dfb = (np.asarray(x, float) for x in fun(w[bad], bad))
                F[bad], dF[bad] = fb, dfb
        for _ in range(min(max_iter, 80)):
            if active.size == 0:
                break
            step = np.where(np.isfinite(dF) & (dF != 0), -F / dF, np.nan)
            ok_step = np.isfinite(step)
            lam = np.ones(active.size)
            cand = w[active] + step
            accepted = np.zeros(active.size, bool)
            Fc = np.full(active.size, np.nan)
            dFc = np.full(active.size, np.nan)
            for _h in range(40):
                trial = ~accepted & ok_step
                if not trial.any():
                    break
                c = w[active] + lam * step
                if positive:
                    c = np.where(c > 0, c, np.nan)
                cand = np.where(trial, c, cand)
                idx = np.flatnonzero(trial)
                f_new, df_new = (np.asarray(x, float) for x in fun(cand[idx], active[idx]))
                fin = np.isfinite(f_new)
                good = fin & ((np.abs(f_new) <= np.abs(F[idx]) * (1 - 1e-4 * lam[idx]))
                              | (np.abs(f_new) <= ftol_arr[active[idx]] * 1e-3)
                              | (np.abs(lam[idx] * step[idx])
                                 <= xtol * (1 + np.abs(w[active[idx]]))))
                acc_idx = idx[good]
                accepted[acc_idx] = True
                Fc[acc_idx] = f_new[good]
                dFc[acc_idx] = df_new[good]
                lam[idx[~good]] *= 0.5
            moved = accepted
            small = np.abs(np.where(moved, lam * step, np.inf)) <= xtol * (1 + np.abs(w[active]))
            w[active[moved]] = cand[moved]
            F = np.where(moved, Fc, F)
            dF = np.where(moved, dFc, dF)
            conv = (moved & small) | (F == 0)
            conv &= np.abs(F) <= ftol_arr[active]
            stuck = ~moved
            done[active[conv]] = True
            keep = ~conv & ~stuck
            failed_now = active[~conv & stuck]
            if failed_now.size:
                done[failed_now] = False
            active, F, dF = active[keep], F[keep], dF[keep]
    pending = np.flatnonzero(~done)
    for i in pending:
        w[i] = _bracket_bisect(fun, seed, i, positive, xtol, max_iter, max_expand)
    return float(w[0]) if scalar else w


def _bracket_bisect(fun, seed, i, positive, xtol, max_iter, max_expand):
    idx = np.array([i])

    def f(x):
        with D.lenient():
            return float(np.asarray(fun(np.array([x]), idx)[0], float)[0])

    f0 = f(seed)
    if f0 == 0:
        return seed
    if positive:
        rays = [[seed * 2.0 ** k for k in range(max_expand + 1)],
                [seed * 2.0 ** -k for k in range(max_expand + 1)]]
    else:
        d = max(1.0, abs(seed)) * 1e-3
        rays = [[seed] + [seed + d * 2.0 ** k for k in range(max_expand + 1)],
                [seed] + [seed - d * 2.0 ** k for k in range(max_expand + 1)]]
    prev = [(seed, f0), (seed, f0)]
    bracket = None
    for k in range(1, len(rays[0])):
        for j in (0, 1):
            x = rays[j][k]
            fx = f(x)
            bracket = _sign_change(f, prev[j], (x, fx))
            if bracket is not None:
                break
            prev[j] = (x, fx)
        if bracket is not None:
            break
    if bracket is None:
        raise NoBracketError(
            f"no sign change found within {max_expand} doublings around seed {seed}")
    lo, hi = bracket
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol * (1 + abs(mid)):
            return mid
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not converge in {max_iter} iterations")


def _sign_change(f, p, q):
    """Bracket between two samples, probing toward a domain edge if one is invalid."""
    (xa, fa), (xb, fb) = p, q
    fin_a, fin_b = math.isfinite(fa), math.isfinite(fb)
    if fin_a and fin_b:
        return tuple(sorted((xa, xb))) if fa * fb <= 0 else None
    if not (fin_a or fin_b):
        return None
    # walk from the valid sample toward the invalid one; the root may sit near the edge
    good, fgood, bad = (xa, fa, xb) if fin_a else (xb, fb, xa)
    for _ in range(200):
        mid = 0.5 * (good + bad)
        if mid == good or mid == bad:
            return None
        fm = f(mid)
        if not math.isfinite(fm):
            bad = mid
            continue
        if fm * fgood <= 0:
            return tuple(sorted((good, mid)))
        good, fgood = mid, fm
    return None


def lift_root(residual, w0: float, slope: float, steps: int = 2):
    """Propagate dual tangents through an implicitly defined root.

    ``w0`` solves ``residual(w0) = 0`` at the primal point and ``slope`` is the
    primal derivative of the residual.  Each chord step fixes one further order
    of the Taylor expansion, so two steps are exact for second-order duals.
    """
    w = w0
    for _ in range(steps):
        w = w - residual(w) / slope
    return w


# -- quadrature -------------------------------------------------------------

def _accept(delta, tol, fa, fm, fb, h):
    floor = 16 * EPS * (np.abs(fa) + 4 * np.abs(fm) + np.abs(fb)) * np.abs(h)
    return np.abs(delta) <= np.maximum(15 * tol, floor)


def simpson_batch(f, a, b, tol=1e-11, max_depth=20, panels=4):
    """Adaptive Simpson for many integrals at once.

    ``f(x, idx)`` evaluates integrand ``idx[k]`` at abscissa ``x[k]``.  Each
    integral gets absolute tolerance ``tol``; interval halving is capped at
    ``max_depth`` levels below the initial panels.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    m = a.size
    owners = np.repeat(np.arange(m), panels)
    frac = np.tile(np.arange(panels + 1) / panels, (m, 1))
    edges = a[:, None] + (b - a)[:, None] * frac
    A = edges[:, :-1].ravel()
    B = edges[:, 1:].ravel()
    M = 0.5 * (A + B)
    FA = np.asarray(f(A, owners), float)
    FB = np.asarray(f(B, owners), float)
    FM = np.asarray(f(M, owners), float)
    W = (B - A) / 6 * (FA + 4 * FM + FB)
    TOL = np.full(A.size, tol / panels)
    depth = 0
    total = np.zeros(m)
    while A.size:
        if depth > max_depth:
            raise QuadratureError(f"adaptive Simpson exceeded 2^{max_depth} subdivisions")
        LM = 0.5 * (A + M)
        RM = 0.5 * (M + B)
        FLM = np.asarray(f(LM, owners), float)
        FRM = np.asarray(f(RM, owners), float)
        left = (M - A) / 6 * (FA + 4 * FLM + FM)
        right = (B - M) / 6 * (FM + 4 * FRM + FB)
        delta = left + right - W
        if not np.all(np.isfinite(delta)):
            raise QuadratureError("non-finite integrand value")
        ok = _accept(delta, TOL, FA, FM, FB, B - A)
        np.add.at(total, owners[ok], (left + right + delta / 15)[ok])
        r = ~ok
        owners = np.concatenate([owners[r], owners[r]])
        A, M, B, FA, FM, FB, W = (
            np.concatenate([A[r], M[r]]),
            np.concatenate([LM[r], RM[r]]),
            np.concatenate([M[r], B[r]]),
            np.concatenate([FA[r], FM[r]]),
            np.concatenate([FLM[r], FRM[r]]),
            np.concatenate([FM[r], FB[r]]),
            np.concatenate([left[r], right[r]]),
        )
        TOL = np.concatenate([TOL[r], TOL[r]]) / 2
        depth += 1
    return total


def _simpson_rec(f, a, fa, m, fm, b, fb, whole, tol, depth, max_depth):
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6 * (fa + 4 * flm + fm)
    right = (b - m) / 6 * (fm + 4 * frm + fb)
    delta = left + right - whole
    dp = D.primal(delta)
    if not math.isfinite(dp):
        raise QuadratureError("non-finite integrand value")
    if _accept(dp, tol, D.primal(fa), D.primal(fm), D.primal(fb), b - a):
        return left + right + delta / 15
    if depth >= max_depth:
        raise QuadratureError(f"adaptive Simpson exceeded 2^{max_depth} subdivisions")
    return (_simpson_rec(f, a, fa, lm, flm, m, fm, left, tol / 2, depth + 1, max_depth)
            + _simpson_rec(f, m, fm, rm, frm, b, fb, right, tol / 2, depth + 1, max_depth))


def simpson(f, a, b, tol=1e-11, max_depth=20, panels=4):
    """Adaptive Simpson for one integral; ``f`` and the limits may be duals.

    A dual endpoint ``x0 + dx`` contributes the second-order-exact correction
    ``dx * (f(x0) + f(x0 + dx)) / 2``.
    """
    a0, b0 = float(D.primal(a)), float(D.primal(b))
    total = 0.0
    edges = [a0 + (b0 - a0) * k / panels for k in range(panels + 1)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        whole = (hi - lo) / 6 * (flo + 4 * fmid + fhi)
        total = total + _simpson_rec(f, lo, flo, mid, fmid, hi, fhi, whole, tol / panels, 0,
                                     max_depth)
    if isinstance(b, D.Dual):
        db = b - b0
        total = total + db * (f(b0) + f(b)) / 2
    if isinstance(a, D.Dual):
        da = a - a0
        total = total - da * (f(a0) + f(a)) / 2
    return total
