"""Ensemble integrators for the constrained-diffusion families.

Three stepping families share one driver:

``reflected``
    dX = sigma dB + (b + K) dt + u dL at the boundary, dK = v dL, where L
    is boundary local time, u is the conormal push, and v is the inert
    coupling field.

``driftless_weighted``
    The same reflected chain with the inert drift K removed from the
    x-update but still accumulated through dK = v dL, together with the
    multiplicative reweighting factor whose expectation reproduces the
    reflected family's law (discrete Girsanov identity; exact for the
    Euler chain because K enters the drift linearly).

``gradient``
    dX = sigma dB + (b - (1/2) A grad(V) + K) dt and
    dK = -(1/2) Gamma grad(V) dt for a smooth confining potential V; no
    reflection happens because the potential wall is impassable.  Steps
    near the wall are sub-divided so no single move exceeds a fixed
    fraction of the inradius, and proposals that would land beyond the
    resolvable wall layer are redrawn.

Noise protocol: path p draws from its own PCG64 stream, spawned as child
p of ``SeedSequence(seed)``.  Per chunk each stream yields the base
normals (one d-vector per step) and, for the gradient family, a reserve
pool consumed by sub-steps and redraws; exhausting the pool rolls the
affected path back to the start of its current step, the host refills
the pool, and the path redoes that step.  Results are reproducible for a
fixed (seed, backend) pair; the reflected-family numba and numpy
backends produce bit-identical trajectories.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import (
    DOM_BALL,
    DOM_INTERVAL,
    FLAG_BOUNDARY_OVERFLOW,
    FLAG_NAMES,
    FLAG_OK,
    FLAG_REFLECT_FAILURE,
    FLAG_WEIGHT_OVERFLOW,
    active_backend,
)
from .coefficients import Potential, PotentialOverflowError
from .skorokhod import SkorokhodError, reflect_step

FAMILIES = ("reflected", "gradient", "driftless_weighted")

MAX_SUBSTEPS = 200
RESAMPLE_CAP = 50
LOG_WEIGHT_CAP = 700.0


def _as_vector(value, d, name):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        raise ValueError("%s must be a finite length-%d vector" % (name, d))
    return v


@dataclass(frozen=True)
class SystemState:
    """One path's instantaneous state: position, inert drift, local time."""

    x: np.ndarray
    k: np.ndarray
    ell: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, float)))
        object.__setattr__(self, "k", np.atleast_1d(np.asarray(self.k, float)))
        if self.x.shape != self.k.shape:
            raise ValueError("state x and k must have matching shapes")


@dataclass(frozen=True)
class GirsanovWeight:
    """Multiplicative reweighting factor, tracked in log space."""

    log_weight: float = 0.0

    @property
    def weight(self):
        return float(np.exp(self.log_weight))


@dataclass(frozen=True)
class SimConfig:
    """Ensemble run description.

    ``dt_base`` is the outer step; the gradient family may sub-divide it
    adaptively (``adaptive``) so that no sub-move exceeds
    ``h_max_fraction`` of the domain inradius.  Snapshots are recorded at
    every ``snap_every``-th step whose time exceeds ``burn_in``.
    """

    family: str
    dt_base: float
    t_end: float
    n_paths: int
    seed: int
    burn_in: float = 0.0
    snap_every: int = 1
    x0: tuple = None
    k0: tuple = None
    chunk_size: int = 4096
    adaptive: bool = True
    h_max_fraction: float = 0.05
    delta_guard: float = None
    max_substeps: int = MAX_SUBSTEPS
    resample_cap: int = RESAMPLE_CAP

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                "family must be one of %s, got %r" % (FAMILIES, self.family)
            )
        if not (self.dt_base > 0.0 and np.isfinite(self.dt_base)):
            raise ValueError("dt_base must be a positive number")
        if not (self.t_end > 0.0 and np.isfinite(self.t_end)):
            raise ValueError("t_end must be a positive number")
        if not (0.0 <= self.burn_in < self.t_end):
            raise ValueError("burn_in must satisfy 0 <= burn_in < t_end")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if int(self.snap_every) < 1:
            raise ValueError("snap_every must be at least 1")
        q = self.t_end / self.dt_base
        if abs(q - round(q)) > 1e-6 * max(1.0, abs(q)):
            raise ValueError("t_end must be an integer multiple of dt_base")
        if self.x0 is not None:
            object.__setattr__(
                self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0))
            )
        if self.k0 is not None:
            object.__setattr__(
                self, "k0", tuple(float(v) for v in np.atleast_1d(self.k0))
            )

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt_base))

    @property
    def first_snapshot_step(self):
        """First recorded step: the first multiple of snap_every whose time
        strictly exceeds burn_in (so the final step is recorded whenever
        snap_every divides n_steps)."""
        q = self.burn_in / self.dt_base
        r = round(q)
        base = (int(r) if abs(q - r) < 1e-6 else int(np.floor(q))) + 1
        se = int(self.snap_every)
        return ((base + se - 1) // se) * se

    @property
    def n_snapshots(self):
        if self.first_snapshot_step > self.n_steps:
            return 0
        return (self.n_steps - self.first_snapshot_step) // int(self.snap_every) + 1

    @property
    def snapshot_times(self):
        idx = self.first_snapshot_step + int(self.snap_every) * np.arange(
            self.n_snapshots
        )
        return idx * self.dt_base

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["x0"] = list(self.x0) if self.x0 is not None else None
        out["k0"] = list(self.k0) if self.k0 is not None else None
        return out


@dataclass
class TrajectoryBatch:
    """Snapshot arrays for an ensemble: shapes (P, S, d) / (P, S) / (P,)."""

    times: np.ndarray
    x: np.ndarray
    k: np.ndarray
    ell: np.ndarray
    flags: np.ndarray
    log_weights: np.ndarray
    diagnostics: dict
    config: SimConfig
    backend: str
    run_info: dict

    @property
    def n_paths(self):
        return self.x.shape[0]

    @property
    def n_snapshots(self):
        return self.x.shape[1]

    @property
    def dim(self):
        return self.x.shape[2]

    @property
    def ok(self):
        """Boolean mask of paths that finished without any flag."""
        return self.flags == FLAG_OK

    @property
    def weights(self):
        if self.log_weights is None:
            return None
        return np.exp(self.log_weights)

    def flag_counts(self):
        return {
            name: int((self.flags == code).sum())
            for code, name in sorted(FLAG_NAMES.items())
            if code != FLAG_OK
        }

    def to_csv(self, path):
        """Write one row per (path, snapshot): path_id,t,x*,k*,ell."""
        P, S, d = self.x.shape
        cols = (
            ["path_id", "t"]
            + ["x%d" % (i + 1) for i in range(d)]
            + ["k%d" % (i + 1) for i in range(d)]
            + ["ell"]
        )
        fmt = ["%d"] + ["%.17g"] * (2 * d + 2)
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for p in range(P):
                block = np.column_stack(
                    [
                        np.full(S, p, dtype=float),
                        self.times,
                        self.x[p],
                        self.k[p],
                        self.ell[p],
                    ]
                )
                np.savetxt(fh, block, fmt=fmt, delimiter=",")

    def manifest(self):
        """Deterministic run record: config echo, seed, versions, counters."""
        info = {
            "config": self.config.as_dict(),
            "backend": self.backend,
            "n_snapshots": int(self.n_snapshots),
            "snapshot_t_first": float(self.times[0]) if len(self.times) else None,
            "snapshot_t_last": float(self.times[-1]) if len(self.times) else None,
            "diagnostics": {k: int(v) for k, v in sorted(self.diagnostics.items())},
            "flag_counts": self.flag_counts(),
            "versions": _version_info(),
        }
        info.update(self.run_info)
        return info

    def write_manifest(self, path):
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _version_info():
    import numpy as _np

    from . import __version__ as _pkg_version

    try:
        import numba as _nb

        numba_version = _nb.__version__
    except ImportError:  # pragma: no cover
        numba_version = None
    return {
        "inertdrift": _pkg_version,
        "numpy": _np.__version__,
        "numba": numba_version,
    }


# ---------------------------------------------------------------------------
# single-step reference operations (arbitrary coefficients, one path)
# ---------------------------------------------------------------------------


def step_reflected(cs, domain, state, dt, noise, use_inert_drift=True,
                   max_step=None):
    """One Euler step of the reflected family from ``state``.

    ``noise`` holds d standard normals; the Brownian increment is
    sqrt(dt) * sigma(x) @ noise.  With ``use_inert_drift=False`` the inert
    drift K is left out of the move (driftless variant) but still absorbs
    v dL on contact.  Contact pushes along the conormal of ``cs`` and adds
    v(x_contact) dL to K, evaluated at the landing point.
    """
    x = np.atleast_1d(np.asarray(state.x, float))
    k = np.atleast_1d(np.asarray(state.k, float))
    z = _as_vector(noise, domain.d, "noise")
    drift = cs.drift_b(x)
    if use_inert_drift:
        drift = drift + k
    inc = np.sqrt(dt) * (cs.sigma(x) @ z) + drift * dt
    x_new, dl = reflect_step(
        domain, x, inc, push_dir=lambda xi: cs.conormal_u(xi), max_step=max_step
    )
    k_new = k + cs.inert_v(x_new) * dl if dl > 0.0 else k
    return SystemState(x=x_new, k=k_new, ell=state.ell + dl, t=state.t + dt)


def girsanov_weight_step(cs, state, weight, dB, dt):
    """One multiplicative update of the reweighting factor.

    ``dB`` is the realized Brownian increment (already scaled by
    sqrt(dt)); the integrand sigma^{-1} K is evaluated at the step start,
    matching the stepping kernels, which makes the reweighted driftless
    chain reproduce the reflected chain's law exactly in discrete time.
    """
    x = np.atleast_1d(np.asarray(state.x, float))
    k = np.atleast_1d(np.asarray(state.k, float))
    dB = _as_vector(dB, x.shape[0], "dB")
    w = np.linalg.solve(cs.sigma(x), k)
    lw = weight.log_weight + float(w @ dB) - 0.5 * float(w @ w) * dt
    return GirsanovWeight(log_weight=lw)


def step_gradient(
    cs,
    potential,
    state,
    dt,
    noise,
    h_max=None,
    delta_guard=None,
    rng=None,
    max_substeps=MAX_SUBSTEPS,
    resample_cap=RESAMPLE_CAP,
):
    """One (possibly sub-divided) step of the gradient family.

    The base step ``dt`` is split so that no sub-move's drift displacement
    exceeds ``h_max`` (default: no cap); proposals leaving the domain or
    landing with smoothed distance below ``delta_guard`` are redrawn.
    Extra normals needed by sub-steps or redraws come from ``rng``; the
    base move uses ``noise`` directly, so with no cap and no redraw this
    is one plain Euler step.  Raises PotentialOverflowError when the
    wall-layer budgets (``max_substeps``, ``resample_cap``, the distance
    floor) are exhausted.
    """
    domain = potential.domain
    d = domain.d
    x = np.atleast_1d(np.asarray(state.x, float)).copy()
    k = np.atleast_1d(np.asarray(state.k, float)).copy()
    z = _as_vector(noise, d, "noise")
    if h_max is None:
        h_max = np.inf
    if delta_guard is None:
        delta_guard = _default_delta_guard(potential)
    gamma_half = 0.5 * cs.gamma

    remaining = float(dt)
    first = True
    nsub = 0
    while remaining > 0.0:
        nsub += 1
        if nsub > max_substeps:
            raise PotentialOverflowError(
                "sub-step budget exhausted near the boundary; refine dt_base"
            )
        gV = potential.grad(x)  # raises on floor/exponent violations
        mu = cs.drift_b(x) - 0.5 * (cs.a_matrix(x) @ gV) + k
        speed = float(np.linalg.norm(mu))
        if speed * remaining <= h_max:
            dts = remaining
        else:
            dts = h_max / speed
        if dts < dt * 1e-12:
            raise PotentialOverflowError(
                "sub-step size collapsed near the boundary; refine dt_base"
            )
        if first:
            zz = z
            first = False
        else:
            if rng is None:
                raise ValueError(
                    "sub-stepping needs extra noise: pass rng= to step_gradient"
                )
            zz = rng.standard_normal(d)
        sig = cs.sigma(x)
        tries = 0
        while True:
            xp = x + (np.sqrt(dts) * (sig @ zz) + mu * dts)
            accept = bool(domain.inside(xp))
            if accept and potential.distance is not None:
                accept = float(potential.distance.value(xp)) >= delta_guard
            if accept:
                break
            tries += 1
            if tries > resample_cap:
                raise PotentialOverflowError(
                    "proposal redraw budget exhausted near the boundary; "
                    "refine dt_base"
                )
            if rng is None:
                raise ValueError(
                    "proposal redraw needs extra noise: pass rng= to step_gradient"
                )
            zz = rng.standard_normal(d)
        k = k - (gamma_half @ gV) * dts
        x = xp
        remaining -= dts
    return SystemState(x=x, k=k, ell=state.ell, t=state.t + dt)


def _default_delta_guard(potential):
    """Resolvable wall layer: states closer than this are resampled.

    The stationary weight exp(-exp(1/(n delta))) at delta = 1/(60 n) is
    exp(-e^60), so the redraw region carries no measurable mass.
    """
    if potential.kind == "regularized_vn":
        guard = 1.0 / (60.0 * potential.n)
        inr = potential.domain.inradius
        if np.isfinite(inr):
            guard = min(guard, 0.25 * inr)
        return guard
    return 10.0 * potential.delta_floor


# ---------------------------------------------------------------------------
# ensemble driver
# ---------------------------------------------------------------------------


def run_ensemble(cs, config, domain=None, potential=None, backend=None):
    """Integrate an ensemble and return its snapshot TrajectoryBatch.

    ``domain`` is required for the reflected families; ``potential`` for
    the gradient family (its domain is used).  ``backend`` picks the
    implementation: "numba" or "numpy" for the chunked constant-
    coefficient kernels, "generic" for the per-path object-mode driver
    that handles arbitrary coefficients; default: the fastest eligible
    one.
    """
    cfg = config
    if cfg.family == "gradient":
        if potential is None:
            raise ValueError("the gradient family needs potential=")
        if domain is not None and domain is not potential.domain:
            raise ValueError("domain and potential.domain disagree")
        domain = potential.domain
    else:
        if domain is None:
            raise ValueError("the reflected families need domain=")
    if cs.domain is not domain:
        # allow equal-but-distinct objects; dimensions must agree
        if cs.domain.d != domain.d:
            raise ValueError("coefficients and domain dimensions disagree")
    d = domain.d

    if cfg.x0 is not None:
        x0 = _as_vector(cfg.x0, d, "x0")
    else:
        x0 = np.atleast_1d(np.asarray(domain.centroid, float))
    if not domain.inside(x0):
        raise ValueError("x0 must lie inside the domain")
    k0 = _as_vector(cfg.k0, d, "k0") if cfg.k0 is not None else np.zeros(d)

    if cfg.family == "gradient":
        guard = (
            cfg.delta_guard
            if cfg.delta_guard is not None
            else _default_delta_guard(potential)
        )
        start_delta = (
            float(potential.distance.value(x0))
            if potential.distance is not None
            else np.inf
        )
        if start_delta < guard:
            raise ValueError(
                "x0 sits inside the resolvable wall layer (smoothed distance "
                "%.3g < guard %.3g)" % (start_delta, guard)
            )
    else:
        guard = None

    eligible = _kernel_family(cfg.family, cs, domain, potential)
    if backend is None:
        backend = active_backend() if eligible else "generic"
    if backend == "numba" and not _kernels.HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is unavailable")
    if backend in ("numba", "numpy") and not eligible:
        raise ValueError(
            "the %s kernels need constant sigma and drift on an interval or "
            "ball; use backend='generic'" % backend
        )
    if backend not in ("numba", "numpy", "generic"):
        raise ValueError("backend must be 'numba', 'numpy', or 'generic'")

    if backend == "generic":
        batch = _run_generic(cs, domain, potential, cfg, x0, k0, guard)
    elif cfg.family == "gradient":
        batch = _run_gradient_kernel(cs, potential, cfg, x0, k0, guard, backend)
    else:
        batch = _run_reflected_kernel(cs, domain, cfg, x0, k0, backend)

    batch.run_info.update(
        {
            "family": cfg.family,
            "coefficients": cs.name,
            "domain": _domain_info(domain),
            "potential": (
                {"kind": potential.kind, "n": potential.n}
                if potential is not None
                else None
            ),
        }
    )
    return batch


def _domain_info(domain):
    info = {"kind": domain.kind, "dim": int(domain.d)}
    if domain.kind == "interval":
        info["lo"] = float(domain.lo)
        info["hi"] = float(domain.hi) if np.isfinite(domain.hi) else "inf"
    elif domain.kind == "ball":
        info["center"] = [float(c) for c in domain.center]
        info["radius"] = float(domain.radius)
    return info


def _kernel_family(family, cs, domain, potential):
    """True when the chunked constant-coefficient kernels apply."""
    if domain.kind not in ("interval", "ball"):
        return False
    if not cs.is_constant_sigma or cs.constant_drift is None:
        return False
    if family == "gradient":
        return (
            potential is not None
            and potential.kind == "regularized_vn"
            and potential.distance is not None
        )
    return cs.inert_field in ("gamma_normal", "a0_conormal")


def _domain_kernel_args(domain):
    if domain.kind == "interval":
        dlo = float(domain.lo)
        dhi = float(domain.hi)
        dmid = (dlo + dhi) / 2.0 if np.isfinite(dhi) else 0.0
        return DOM_INTERVAL, dlo, dhi, dmid, np.zeros(domain.d), float(
            domain.inradius
        )
    return (
        DOM_BALL,
        0.0,
        0.0,
        0.0,
        np.asarray(domain.center, float),
        float(domain.radius),
    )


def _spawn_rngs(seed, n_paths):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_paths)]


def _alloc_outputs(P, S, d):
    out_x = np.full((P, S, d), np.nan)
    out_k = np.full((P, S, d), np.nan)
    out_ell = np.full((P, S), np.nan)
    return out_x, out_k, out_ell


def _push_matrices(cs, ref_point):
    conv = 1.0 if cs.conormal_convention == "full" else 0.5
    A = cs.a_matrix(ref_point)
    UM = conv * A
    if cs.inert_field == "gamma_normal":
        VM = np.asarray(cs.gamma, float)
    else:
        VM = cs.a0 * UM
    return UM, VM


def _run_reflected_kernel(cs, domain, cfg, x0, k0, backend):
    P, d = cfg.n_paths, domain.d
    steps = cfg.n_steps
    S = cfg.n_snapshots
    dt = cfg.dt_base
    sqrt_dt = np.sqrt(dt)
    use_k = cfg.family == "reflected"
    do_weight = cfg.family == "driftless_weighted"

    Smat = cs.sigma(x0)
    SI = np.linalg.inv(Smat)
    b = np.asarray(cs.constant_drift, float)
    UM, VM = _push_matrices(cs, x0)
    dkind, dlo, dhi, dmid, dcenter, dradius = _domain_kernel_args(domain)

    x = np.tile(x0, (P, 1))
    k = np.tile(k0, (P, 1))
    ell = np.zeros(P)
    logw = np.zeros(P)
    flags = np.zeros(P, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    out_x, out_k, out_ell = _alloc_outputs(P, S, d)
    rngs = _spawn_rngs(cfg.seed, P)

    first_snap = cfg.first_snapshot_step
    snap_every = int(cfg.snap_every)
    chunk = int(cfg.chunk_size)
    for start in range(0, steps, chunk):
        C = min(chunk, steps - start)
        z = np.empty((P, C, d))
        for p in range(P):
            z[p] = rngs[p].standard_normal((C, d))
        _kernels.reflected_chunk(
            backend,
            x,
            k,
            ell,
            logw,
            flags,
            z,
            dt,
            sqrt_dt,
            Smat,
            b,
            UM,
            VM,
            SI,
            use_k,
            do_weight,
            dkind,
            dlo,
            dhi,
            dcenter,
            dradius,
            start,
            first_snap,
            snap_every,
            out_x,
            out_k,
            out_ell,
            counters,
        )
    diagnostics = {
        "contacts": int(counters[0]),
        "reflect_failures": int(counters[1]),
        "weight_overflows": int(counters[2]),
        "boundary_overflow_paths": int((flags == FLAG_BOUNDARY_OVERFLOW).sum()),
    }
    return TrajectoryBatch(
        times=cfg.snapshot_times,
        x=out_x,
        k=out_k,
        ell=out_ell,
        flags=flags,
        log_weights=logw if do_weight else None,
        diagnostics=diagnostics,
        config=cfg,
        backend=backend,
        run_info={},
    )


def _run_gradient_kernel(cs, potential, cfg, x0, k0, guard, backend):
    domain = potential.domain
    sd = potential.distance
    P, d = cfg.n_paths, domain.d
    steps = cfg.n_steps
    S = cfg.n_snapshots
    dt = cfg.dt_base

    Smat = cs.sigma(x0)
    b = np.asarray(cs.constant_drift, float)
    A2 = 0.5 * cs.a_matrix(x0)
    NU = 0.5 * np.asarray(cs.gamma, float)
    h_max = (
        cfg.h_max_fraction * domain.inradius if cfg.adaptive else np.inf
    )
    dkind, dlo, dhi, dmid, dcenter, dradius = _domain_kernel_args(domain)
    dcap = float(sd._cap)

    x = np.tile(x0, (P, 1))
    k = np.tile(k0, (P, 1))
    flags = np.zeros(P, dtype=np.int64)
    counters = np.zeros(2, dtype=np.int64)
    out_x, out_k, out_ell = _alloc_outputs(P, S, d)
    rngs = _spawn_rngs(cfg.seed, P)

    first_snap = cfg.first_snapshot_step
    snap_every = int(cfg.snap_every)
    chunk = int(cfg.chunk_size)
    pool_refills = 0
    for start in range(0, steps, chunk):
        C = min(chunk, steps - start)
        pool_len = C
        z = np.empty((P, C, d))
        pool = np.empty((P, pool_len, d))
        for p in range(P):
            z[p] = rngs[p].standard_normal((C, d))
            pool[p] = rngs[p].standard_normal((pool_len, d))
        cursor = np.zeros(P, dtype=np.int64)
        progress = np.zeros(P, dtype=np.int64)
        need = np.zeros(P, dtype=np.int64)
        while True:
            _kernels.gradient_chunk(
                backend,
                sd,
                x,
                k,
                flags,
                z,
                pool,
                cursor,
                progress,
                need,
                dt,
                Smat,
                b,
                A2,
                NU,
                float(potential.n),
                h_max,
                guard,
                potential.delta_floor,
                Potential.EXPONENT_CAP,
                dkind,
                dlo,
                dhi,
                dmid,
                dcap,
                dcenter,
                dradius,
                start,
                first_snap,
                snap_every,
                int(cfg.max_substeps),
                int(cfg.resample_cap),
                out_x,
                out_k,
                out_ell,
                counters,
            )
            idx = np.where(need == 1)[0]
            if len(idx) == 0:
                break
            for p in idx:
                pool[p] = rngs[p].standard_normal((pool_len, d))
                cursor[p] = 0
                need[p] = 0
            pool_refills += len(idx)
    diagnostics = {
        "substeps_total": int(counters[0]),
        "resampled_proposals": int(counters[1]),
        "pool_refills": int(pool_refills),
        "boundary_overflow_paths": int((flags == FLAG_BOUNDARY_OVERFLOW).sum()),
    }
    return TrajectoryBatch(
        times=cfg.snapshot_times,
        x=out_x,
        k=out_k,
        ell=out_ell,
        flags=flags,
        log_weights=None,
        diagnostics=diagnostics,
        config=cfg,
        backend=backend,
        run_info={},
    )


def _run_generic(cs, domain, potential, cfg, x0, k0, guard):
    """Per-path object-mode driver for arbitrary coefficients."""
    P, d = cfg.n_paths, domain.d
    steps = cfg.n_steps
    S = cfg.n_snapshots
    dt = cfg.dt_base
    sqrt_dt = np.sqrt(dt)
    family = cfg.family
    do_weight = family == "driftless_weighted"
    h_max = (
        cfg.h_max_fraction * domain.inradius if cfg.adaptive else np.inf
    )

    flags = np.zeros(P, dtype=np.int64)
    logw = np.zeros(P)
    out_x, out_k, out_ell = _alloc_outputs(P, S, d)
    rngs = _spawn_rngs(cfg.seed, P)
    first_snap = cfg.first_snapshot_step
    snap_every = int(cfg.snap_every)
    contacts = 0

    for p in range(P):
        rng = rngs[p]
        state = SystemState(x=x0.copy(), k=k0.copy())
        for s in range(1, steps + 1):
            z = rng.standard_normal(d)
            try:
                if family == "gradient":
                    state = step_gradient(
                        cs,
                        potential,
                        state,
                        dt,
                        z,
                        h_max=h_max,
                        delta_guard=guard,
                        rng=rng,
                        max_substeps=int(cfg.max_substeps),
                        resample_cap=int(cfg.resample_cap),
                    )
                else:
                    if do_weight:
                        w = np.linalg.solve(cs.sigma(state.x), state.k)
                        dB = sqrt_dt * z
                        logw[p] += float(w @ dB) - 0.5 * float(w @ w) * dt
                        if logw[p] > LOG_WEIGHT_CAP:
                            flags[p] = FLAG_WEIGHT_OVERFLOW
                            break
                    before = state.ell
                    state = step_reflected(
                        cs,
                        domain,
                        state,
                        dt,
                        z,
                        use_inert_drift=(family == "reflected"),
                    )
                    if state.ell > before:
                        contacts += 1
            except PotentialOverflowError:
                flags[p] = FLAG_BOUNDARY_OVERFLOW
                break
            except SkorokhodError:
                flags[p] = FLAG_REFLECT_FAILURE
                break
            if s >= first_snap and (s - first_snap) % snap_every == 0:
                slot = (s - first_snap) // snap_every
                out_x[p, slot] = state.x
                out_k[p, slot] = state.k
                out_ell[p, slot] = state.ell
    diagnostics = {
        "contacts": int(contacts),
        "boundary_overflow_paths": int((flags == FLAG_BOUNDARY_OVERFLOW).sum()),
        "reflect_failure_paths": int((flags == FLAG_REFLECT_FAILURE).sum()),
        "weight_overflow_paths": int((flags == FLAG_WEIGHT_OVERFLOW).sum()),
    }
    return TrajectoryBatch(
        times=cfg.snapshot_times,
        x=out_x,
        k=out_k,
        ell=out_ell,
        flags=flags,
        log_weights=logw if do_weight else None,
        diagnostics=diagnostics,
        config=cfg,
        backend="generic",
        run_info={},
    )
