"""Deterministic reflection map for continuous paths in a domain.

Given a sampled driving path f with f(t0) in the closure of the domain, the
solver produces the constrained path g and the nondecreasing local time ell
satisfying the additive decomposition

    g(t_i) = f(t_i) + sum_{j <= i} push(xi_j) * dl_j,

where each increment dl_j >= 0 is the smallest push that returns the step to
the closure and xi_j is the boundary contact point.  The push direction is
the inward normal by default, or any supplied field with a positive inward
component (e.g. a conormal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ConstrainedPath",
    "DrivingPath",
    "SkorokhodError",
    "measure_refinement_order",
    "read_path_csv",
    "reflect_step",
    "solve_skorokhod",
    "write_path_csv",
]


class SkorokhodError(RuntimeError):
    """Raised when a reflection step or path solve cannot proceed."""


# ---------------------------------------------------------------------------
# path containers
# ---------------------------------------------------------------------------

@dataclass
class DrivingPath:
    """Piecewise-linear driving path: strictly increasing sample times and
    sampled values of shape (len(times), d)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.times.ndim != 1 or self.values.ndim != 2:
            raise SkorokhodError("times must be 1D and values 2D (steps, d)")
        if self.values.shape[0] != self.times.shape[0]:
            raise SkorokhodError(
                "times and values disagree: %d times for %d samples"
                % (self.times.shape[0], self.values.shape[0])
            )
        if self.times.shape[0] < 2:
            raise SkorokhodError("a path needs at least two sample times")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.values)):
            raise SkorokhodError("path samples must be finite")
        if np.any(np.diff(self.times) <= 0.0):
            raise SkorokhodError("sample times must be strictly increasing")

    @property
    def d(self):
        return self.values.shape[1]

    def to_csv(self, filename):
        write_path_csv(filename, self.times, self.values)

    @classmethod
    def from_csv(cls, filename):
        return read_path_csv(filename)


@dataclass
class ConstrainedPath:
    """Reflected path with its local time and the applied push bookkeeping.

    ``dl`` holds the per-step local-time increments (len(times) - 1 of them)
    and ``contact_dirs`` the push direction used at the step's boundary
    contact (zero rows where the step stayed inside).
    """

    times: np.ndarray
    values: np.ndarray
    local_time: np.ndarray
    dl: np.ndarray = field(repr=False)
    contact_dirs: np.ndarray = field(repr=False)

    def reconstruction_residual(self, driving):
        """Max deviation of ``values`` from the additive decomposition
        f + cumulative(push * dl)."""
        pushes = np.vstack(
            [np.zeros((1, self.values.shape[1])), self.contact_dirs * self.dl[:, None]]
        )
        rebuilt = driving.values + np.cumsum(pushes, axis=0)
        return float(np.abs(rebuilt - self.values).max())

    def to_csv(self, filename):
        d = self.values.shape[1]
        header = "t," + ",".join("x%d" % (i + 1) for i in range(d)) + ",ell"
        table = np.column_stack([self.times, self.values, self.local_time])
        np.savetxt(filename, table, delimiter=",", header=header, comments="")


def write_path_csv(filename, times, values):
    """Write a sampled path as CSV with header ``t,x1,...,xd``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    header = "t," + ",".join("x%d" % (i + 1) for i in range(values.shape[1]))
    np.savetxt(filename, np.column_stack([times, values]), delimiter=",",
               header=header, comments="")


def read_path_csv(filename):
    """Read a CSV path file with header ``t,x1,...,xd`` (an extra trailing
    ``ell`` column, as written for constrained paths, is ignored)."""
    with open(filename, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    cols = header.split(",")
    d = len(cols) - 1
    if cols and cols[-1] == "ell":
        d -= 1
    expected = ["t"] + ["x%d" % (i + 1) for i in range(d)]
    if d < 1 or cols[: 1 + d] != expected:
        raise ValueError(
            "unexpected path CSV header %r; expected 't,x1,...,xd'" % header
        )
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    return DrivingPath(data[:, 0], data[:, 1 : 1 + d])


# ---------------------------------------------------------------------------
# single reflecting step
# ---------------------------------------------------------------------------

def _resolve_push(push_dir, contact, d):
    if callable(push_dir):
        push = np.asarray(push_dir(contact), dtype=float).reshape(d)
    else:
        push = np.atleast_1d(np.asarray(push_dir, dtype=float)).reshape(d)
    if not np.all(np.isfinite(push)) or np.linalg.norm(push) == 0.0:
        raise SkorokhodError("push direction at %s is degenerate: %s" % (contact, push))
    return push


def reflect_step(domain, x, increment, push_dir, max_step=None):
    """Advance one step and push back along ``push_dir`` if the move exits.

    Returns ``(x_new, dl)`` with ``x_new`` in the closure and ``dl >= 0``
    minimal: ``x_new = x + increment + push * dl`` where ``push`` is the
    push field evaluated at the boundary contact (the projection of the
    unconstrained point).  ``dl = 0`` exactly when the move stays inside.

    The per-step push-back is only locally valid, so callers stepping a
    whole path should cap increments by passing ``max_step`` (the path
    solver uses the domain's feature-size guard).
    """
    d = domain.d
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(d)
    inc = np.atleast_1d(np.asarray(increment, dtype=float)).reshape(d)
    step_len = float(np.linalg.norm(inc))
    if max_step is not None and step_len > max_step:
        raise SkorokhodError(
            "step of length %.3g exceeds the guard %.3g; "
            "refine the time grid" % (step_len, max_step)
        )
    y = x + inc
    sd_y = float(domain.signed_distance(y))
    if sd_y >= 0.0:
        return y, 0.0

    contact = np.atleast_1d(domain.project_to_boundary(y)).reshape(d)
    push = _resolve_push(push_dir, contact, d)

    # 1D intervals: the push root is a linear equation, solved exactly.
    if domain.kind == "interval":
        lo, hi = domain.lo, domain.hi
        target = lo if y[0] < lo else hi
        if (target - y[0]) * push[0] <= 0.0:
            raise SkorokhodError(
                "push direction %s cannot return %s to the closure" % (push, y)
            )
        dl = (target - y[0]) / push[0]
        return np.array([target]), float(dl)

    # general case: bracket the smallest s >= 0 with sd(y + s * push) = 0
    push_norm = float(np.linalg.norm(push))
    scale = domain.reference_length

    def phi(s):
        return float(domain.signed_distance(y + s * push))

    s_lo = 0.0
    s_hi = -sd_y / push_norm  # sd is 1-Lipschitz: guaranteed lower bound
    val = phi(s_hi)
    expansions = 0
    while val < 0.0:
        s_lo = s_hi
        s_hi *= 1.6
        expansions += 1
        if expansions > 80 or s_hi * push_norm > 4.0 * scale:
            raise SkorokhodError(
                "no return to the closure along push %s from %s "
                "(start sd %.3e, searched up to s = %.3e); the push may "
                "point outward" % (push, y, sd_y, s_hi)
            )
        val = phi(s_hi)
    if val == 0.0:
        dl = s_hi
    else:
        dl = brentq(phi, s_lo, s_hi, xtol=1e-15 * scale, rtol=4 * np.finfo(float).eps)
    x_new = y + dl * push
    if float(domain.signed_distance(x_new)) < 0.0:
        x_new = np.atleast_1d(domain.project_to_boundary(x_new)).reshape(d)
    return x_new, float(dl)


# ---------------------------------------------------------------------------
# whole-path solve
# ---------------------------------------------------------------------------

def solve_skorokhod(domain, driving, push_dir=None):
    """Constrain a sampled driving path to the domain.

    ``push_dir`` is a vector field evaluated at boundary contact points;
    it defaults to the inward normal, which yields the classical reflected
    path and local time.
    """
    if driving.d != domain.d:
        raise SkorokhodError(
            "path dimension %d does not match domain dimension %d"
            % (driving.d, domain.d)
        )
    if push_dir is None:
        push_dir = domain.inward_normal
    f = driving.values
    m = f.shape[0] - 1
    start_sd = float(domain.signed_distance(f[0]))
    if start_sd < -domain.tol_bd:
        raise SkorokhodError(
            "driving path starts outside the closure (signed distance %.3e)"
            % start_sd
        )

    g = np.empty_like(f)
    g[0] = f[0]
    ell = np.zeros(m + 1)
    dls = np.zeros(m)
    dirs = np.zeros((m, domain.d))
    guard = domain.feature_guard
    for i in range(m):
        inc = f[i + 1] - f[i]
        x_new, dl = reflect_step(domain, g[i], inc, push_dir, max_step=guard)
        g[i + 1] = x_new
        dls[i] = dl
        ell[i + 1] = ell[i] + dl
        if dl > 0.0:
            y = g[i] + inc
            contact = np.atleast_1d(domain.project_to_boundary(y)).reshape(domain.d)
            dirs[i] = _resolve_push(push_dir, contact, domain.d)
    return ConstrainedPath(driving.times.copy(), g, ell, dls, dirs)


def measure_refinement_order(domain, f, t_end=1.0, base_steps=64, levels=3,
                             reference_factor=4, push_dir=None):
    """Empirical convergence order of the discrete reflection map.

    Samples the continuous path ``f`` (a callable t -> point) on dyadically
    refined grids, solves each, and measures sup-norm errors against a
    ``reference_factor``-times-finer reference solve at shared sample times.
    Returns a dict with the step counts, the errors, and the fitted order.
    """
    step_counts = [base_steps * 2 ** k for k in range(levels)]
    m_ref = step_counts[-1] * reference_factor
    solutions = {}
    for m in step_counts + [m_ref]:
        t = np.linspace(0.0, t_end, m + 1)
        vals = np.array([np.atleast_1d(f(ti)) for ti in t], dtype=float)
        solutions[m] = solve_skorokhod(domain, DrivingPath(t, vals), push_dir=push_dir)
    g_ref = solutions[m_ref].values
    errors = []
    for m in step_counts:
        stride = m_ref // m
        diff = solutions[m].values - g_ref[::stride]
        errors.append(float(np.linalg.norm(diff, axis=1).max()))
    errors = np.asarray(errors)
    widths = t_end / np.asarray(step_counts, dtype=float)
    order = float(np.polyfit(np.log(widths), np.log(errors), 1)[0])
    return {"steps": step_counts, "errors": errors, "order": order}
