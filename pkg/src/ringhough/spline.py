"""Natural cubic smoothing splines (Reinsch form) with GCV and noise estimates.

For knots t_1 < ... < t_n and data y the smoothing spline minimizes

    sum_i (y_i - f(t_i))^2 + lam * integral f''(t)^2 dt.

With the banded matrices Q (n x n-2) and R (n-2 x n-2) of Green & Silverman,
the second derivatives gamma at interior knots solve

    (R + lam Q^T Q) gamma = Q^T y,      f = y - lam Q gamma,

and the smoother matrix is S = I - lam Q (R + lam Q^T Q)^-1 Q^T. Its trace
comes from the band of the inverse (Hutchinson & de Hoog), so GCV and the
variance estimate RSS / (n - tr S) cost O(n) per lambda.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import CubicSpline

AUTO = "auto"


class SplineInputError(ValueError):
    pass


def _check_knots(t) -> np.ndarray:
    t = np.asarray(t, np.float64)
    if t.ndim != 1 or len(t) < 4:
        raise SplineInputError("need at least 4 samples")
    if np.any(np.diff(t) <= 0):
        raise SplineInputError("times must be strictly increasing (no duplicates)")
    return t


class _Reinsch:
    """Banded system for one set of knots, reusable across lambdas and data."""

    def __init__(self, t: np.ndarray):
        self.t = t
        n = len(t)
        self.n = n
        h = np.diff(t)
        m = n - 2
        # Q columns j = 0..m-1 have entries at rows j, j+1, j+2
        self.q0 = 1.0 / h[:-1]
        self.q1 = -1.0 / h[:-1] - 1.0 / h[1:]
        self.q2 = 1.0 / h[1:]
        self.r_diag = (h[:-1] + h[1:]) / 3.0
        self.r_off = h[1:-1] / 6.0
        # Q^T Q is pentadiagonal: diagonals 0, 1, 2
        q0, q1, q2 = self.q0, self.q1, self.q2
        self.qtq0 = q0 ** 2 + q1 ** 2 + q2 ** 2
        # (Q^T Q)_{j,j+1} = q1_j q0_{j+1} + q2_j q1_{j+1}
        self.qtq1 = q1[:-1] * q0[1:] + q2[:-1] * q1[1:]
        # (Q^T Q)_{j,j+2} = q2_j q0_{j+2}
        self.qtq2 = q2[:-2] * q0[2:]
        self.m = m

    def qt(self, y: np.ndarray) -> np.ndarray:
        return self.q0 * y[:-2] + self.q1 * y[1:-1] + self.q2 * y[2:]

    def q(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + g.shape[1:])
        out[:-2] += (self.q0 * g.T).T
        out[1:-1] += (self.q1 * g.T).T
        out[2:] += (self.q2 * g.T).T
        return out

    def banded(self, lam: float) -> np.ndarray:
        """Upper banded storage of R + lam Q^T Q for solveh_banded."""
        m = self.m
        ab = np.zeros((3, m))
        ab[2] = self.r_diag + lam * self.qtq0
        ab[1, 1:] = self.r_off + lam * self.qtq1
        ab[0, 2:] = lam * self.qtq2
        return ab

    def fit(self, y: np.ndarray, lam: float):
        """Fitted values and interior second derivatives for data y (n,) or (n, k)."""
        if lam == 0.0:
            # interpolating natural spline
            return y.copy(), None
        gamma = linalg.solveh_banded(self.banded(lam), self.qt(y))
        return y - lam * self.q(gamma), gamma

    def trace(self, lam: float) -> float:
        """tr(S) = n - lam * tr(M^-1 Q^T Q), M = R + lam Q^T Q."""
        if lam == 0.0:
            return float(self.n)
        d0, d1, d2 = _inverse_band(self.banded(lam))
        tr = np.sum(d0 * self.qtq0) + 2.0 * np.sum(d1 * self.qtq1) + 2.0 * np.sum(d2 * self.qtq2)
        return float(self.n - lam * tr)


def _inverse_band(ab: np.ndarray):
    """Diagonals 0, 1, 2 of the inverse of a symmetric pentadiagonal matrix.

    ``ab`` is upper banded storage. Uses M = L D L^T and the backward
    recursion Sigma = D^-1 L^-1 + (I - L^T) Sigma restricted to the band.
    """
    m = ab.shape[1]
    a0 = ab[2]
    a1 = ab[1, 1:]
    a2 = ab[0, 2:]
    d = np.empty(m)
    l1 = np.zeros(m)  # L[i+1, i]
    l2 = np.zeros(m)  # L[i+2, i]
    for i in range(m):
        di = a0[i]
        if i >= 1:
            di -= l1[i - 1] ** 2 * d[i - 1]
        if i >= 2:
            di -= l2[i - 2] ** 2 * d[i - 2]
        d[i] = di
        if i + 1 < m:
            v = a1[i]
            if i >= 1:
                v -= l1[i - 1] * l2[i - 1] * d[i - 1]
            l1[i] = v / di
        if i + 2 < m:
            l2[i] = a2[i] / di
    s0 = np.zeros(m)
    s1 = np.zeros(m)  # Sigma[i, i+1]
    s2 = np.zeros(m)  # Sigma[i, i+2]
    for i in range(m - 1, -1, -1):
        if i + 2 < m:
            s2[i] = -l1[i] * s1[i + 1] - l2[i] * s0[i + 2]
        if i + 1 < m:
            s1i = -l1[i] * s0[i + 1]
            if i + 2 < m:
                s1i -= l2[i] * s1[i + 1]
            s1[i] = s1i
        v = 1.0 / d[i]
        if i + 1 < m:
            v -= l1[i] * s1[i]
        if i + 2 < m:
            v -= l2[i] * s2[i]
        s0[i] = v
    return s0, s1[:-1], s2[:-2]


def gcv_score(sys: _Reinsch, y: np.ndarray, lam: float) -> float:
    f, _ = sys.fit(y, lam)
    rss = float(np.sum((y - f) ** 2))
    dof = sys.n - sys.trace(lam)
    return sys.n * rss / (dof * dof)


def select_lambda(t, y, bounds=(-12.0, 12.0)) -> float:
    """GCV-optimal lambda; y may be (n,) or (n, k) with the score summed."""
    t = _check_knots(t)
    sys = _Reinsch(t)
    y = np.asarray(y, np.float64)
    scale = np.mean(np.diff(t)) ** 3  # lambda has units of time^3
    ys = y if y.ndim == 2 else y[:, None]

    def obj(loglam):
        lam = scale * 10.0 ** loglam
        return sum(gcv_score(sys, ys[:, k], lam) for k in range(ys.shape[1]))

    grid = np.linspace(bounds[0], bounds[1], 49)
    vals = [obj(g) for g in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    best = res.x if res.fun <= vals[i] else grid[i]
    return float(scale * 10.0 ** best)


@dataclass
class SmoothedTrajectory:
    """Per-coordinate smoothing splines sharing one set of knots."""

    knots: np.ndarray
    fitted: np.ndarray  # (n, k) values at the knots
    lam: np.ndarray  # (k,)
    sigma_est: np.ndarray  # (k,)
    dof: np.ndarray  # (k,) trace of the smoother matrix

    def __post_init__(self):
        self._splines = [CubicSpline(self.knots, self.fitted[:, k], bc_type="natural")
                         for k in range(self.fitted.shape[1])]

    def _eval(self, t, nu):
        t = np.asarray(t, np.float64)
        return np.stack([s(t, nu) for s in self._splines], axis=-1)

    def position(self, t=None):
        return self._eval(self.knots if t is None else t, 0)

    def velocity(self, t=None):
        return self._eval(self.knots if t is None else t, 1)

    def acceleration(self, t=None):
        return self._eval(self.knots if t is None else t, 2)


def smooth_values(t, y, lam=AUTO) -> SmoothedTrajectory:
    """Smooth each column of y (n,) or (n, k) against times t.

    ``lam`` is a number, a sequence (one per column) or ``AUTO`` for a GCV
    choice made per column.
    """
    t = _check_knots(t)
    y = np.asarray(y, np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != len(t):
        raise SplineInputError("times and values differ in length")
    sys = _Reinsch(t)
    k = y.shape[1]
    if isinstance(lam, str):
        if lam != AUTO:
            raise ValueError(f"unknown lambda option {lam!r}")
        lams = [select_lambda(t, y[:, j]) for j in range(k)]
    else:
        lams = list(np.broadcast_to(np.asarray(lam, np.float64), (k,)))
    fitted = np.empty_like(y)
    sig = np.empty(k)
    dof = np.empty(k)
    for j in range(k):
        if lams[j] < 0:
            raise ValueError("lambda must be >= 0")
        f, _ = sys.fit(y[:, j], float(lams[j]))
        fitted[:, j] = f
        tr = sys.trace(float(lams[j]))
        dof[j] = tr
        rss = float(np.sum((y[:, j] - f) ** 2))
        resid_dof = len(t) - tr
        sig[j] = np.sqrt(rss / resid_dof) if resid_dof > 1e-12 else 0.0
    return SmoothedTrajectory(t, fitted, np.asarray(lams, np.float64), sig, dof)


def smooth(traj, lam=AUTO) -> SmoothedTrajectory:
    """Smooth a :class:`~ringhough.track.Trajectory` coordinate by coordinate."""
    return smooth_values(traj.t, traj.xyz, lam)


def smoother_matrix(t, lam: float) -> np.ndarray:
    """Dense S, for checks on small problems."""
    t = _check_knots(t)
    sys = _Reinsch(t)
    eye = np.eye(len(t))
    return np.column_stack([sys.fit(eye[:, i], lam)[0] for i in range(len(t))])


def write_smoothed_csv(path, items) -> None:
    """``items`` is a sequence of (traj_id, SmoothedTrajectory)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"])
        for tid, st in items:
            p, v, a = st.position(), st.velocity(), st.acceleration()
            for i, t in enumerate(st.knots):
                w.writerow([tid, repr(float(t))] + [repr(float(x)) for x in (*p[i], *v[i], *a[i])])


def write_summary_json(path, items) -> None:
    out = {
        "trajectories": [
            {"traj_id": int(tid), "n": int(len(st.knots)),
             "sigma": [float(s) for s in st.sigma_est],
             "lambda": [float(v) for v in st.lam]}
            for tid, st in items
        ]
    }
    if items:
        sig = np.array([st.sigma_est for _, st in items])
        out["mean_sigma"] = [float(v) for v in sig.mean(axis=0)]
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
