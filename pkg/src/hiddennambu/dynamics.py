"""Right-hand sides, a fixed-step integrator and the tangent-flow monitor."""

import csv
from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np

from .fields import determinant, gradient, jacobian_matrix

__all__ = [
    "DegenerateChart",
    "hamiltonian_rhs",
    "nambu_rhs",
    "generalized_nambu_rhs",
    "least_action_rhs",
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "flow_volume_jacobian",
    "rhs_jacobian",
    "sup_distance",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


class DegenerateChart(ArithmeticError):
    pass


def _det(m):
    # closed forms for the sizes that dominate run time
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    if n == 2:
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if n == 3:
        return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
                - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
                + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
    return determinant(m)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def hamiltonian_rhs(sys, at):
    """``(dq_k/dt, dp_k/dt) = (dH/dp_k, -dH/dq_k)`` on the interleaved chart."""
    at = np.asarray(at, dtype=float)
    if at.shape[0] != 2 * sys.n:
        raise ValueError("point does not match the system's chart")
    g = gradient(sys.H, at)
    out = np.empty_like(g)
    out[0::2] = g[1::2]
    out[1::2] = -g[0::2]
    return out


def _cofactor_velocity(rows, cols, out, weight=1.0):
    # adds d(w_i, rows...)/d(cols) for every i in cols, expanding along row 0
    for k, i in enumerate(cols):
        minor = rows[:, [c for j, c in enumerate(cols) if j != k]]
        out[i] += weight * (-1) ** k * _det(minor)


def nambu_rhs(nsys, at):
    """``dx_i/dt = {x_i, H~, G~_1, ..., G~_{N-2}}`` summed over multiplets."""
    at = np.asarray(at, dtype=float)
    if at.shape[0] != nsys.dim:
        raise ValueError("point does not match the system's layout")
    rows = jacobian_matrix(nsys.hamiltonians, at)
    out = np.zeros(nsys.dim)
    for block in nsys.layout.blocks:
        _cofactor_velocity(rows, block, out)
    return out


def generalized_nambu_rhs(gsys, at):
    """``dw_i/dt = sum_ab g_ab d(w_i, H~, G~..)/d(x_a, x_b, z..)`` over blocks."""
    at = np.asarray(at, dtype=float)
    if at.shape[0] != gsys.dim:
        raise ValueError("point does not match the system")
    out = np.zeros(gsys.dim)
    for block in gsys.blocks:
        g = np.asarray(block.metric(at), dtype=float)
        rows = jacobian_matrix((gsys.hamiltonian,) + block.constraints, at)
        X = block.x
        for a in range(len(X)):
            for b in range(len(X)):
                if a == b or g[a, b] == 0.0:
                    continue
                _cofactor_velocity(rows, (X[a], X[b]) + block.z, out, g[a, b])
    return out


def least_action_rhs(vmap, H, at):
    """Triplet equations from varying ``(x, y, z)`` in the canonical action.

    Each velocity component is a difference of ``H~`` derivatives weighted by
    the chart Jacobians ``d(x, y)/d(q, p)``, ``d(y, z)/d(q, p)`` and
    ``d(z, x)/d(q, p)``, evaluated through ``vmap.inverse``.
    """
    if vmap.dim != 3 or vmap.n != 1:
        raise ValueError("least-action form is implemented for one triplet")
    at = np.asarray(at, dtype=float)
    chart = vmap.to_chart(at)
    P = vmap.poisson_matrix(chart)
    jxy, jyz, jzx = P[0, 1], P[1, 2], P[2, 0]
    scale = max(1.0, float(np.max(np.abs(vmap.jacobian(chart)))) ** 2)
    if max(abs(jxy), abs(jyz), abs(jzx)) <= 1e-14 * scale:
        raise DegenerateChart("fully degenerate chart")
    hx, hy, hz = gradient(H, at)
    return np.array([
        hy * jxy - hz * jzx,
        hz * jyz - hx * jxy,
        hx * jzx - hy * jyz,
    ])


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    dt: float = 1e-3
    steps: int = 1000
    variational: bool = False

    def __post_init__(self):
        if self.method not in ("rk4", "explicit-euler"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not math.isfinite(self.dt * self.steps):
            raise ValueError("dt * steps must be finite")

    @classmethod
    def span(cls, t, dt, **kw):
        return cls(dt=dt, steps=max(1, int(round(t / dt))), **kw)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    error: Optional[str] = None
    last_good: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self):
        return self.states[-1]

    def drift(self, name):
        d = np.asarray(self.diagnostics[name])
        return float(np.max(np.abs(d - d[0])))

    def mapped(self, func):
        """Apply ``func`` to every state (e.g. a variable map)."""
        return Trajectory(self.times, np.array([func(s) for s in self.states]),
                          {}, self.error, self.last_good)


def rhs_jacobian(rhs, at):
    """Central-difference Jacobian ``d rhs_i / d x_j``."""
    at = np.asarray(at, dtype=float)
    d = at.shape[0]
    h = np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(at))
    A = np.empty((d, d))
    for j in range(d):
        xp, xm = at.copy(), at.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        A[:, j] = (np.asarray(rhs(xp)) - np.asarray(rhs(xm))) / (xp[j] - xm[j])
    return A


def integrate(rhs, start, cfg, diagnostics=None, jacobian=None):
    """Fixed-step trajectory of ``dx/dt = rhs(x)``.

    ``diagnostics`` maps names to scalar functions of the state, recorded at
    every step.  With ``cfg.variational`` the tangent flow ``dM/dt = A M``
    is co-integrated (``A`` from ``jacobian`` or central differences) and
    ``det M`` is recorded as the ``"volume"`` diagnostic.  A non-finite state
    truncates the trajectory and sets ``error`` and ``last_good``.
    """
    x = np.array(start, dtype=float)
    d = x.shape[0]
    v0 = np.asarray(rhs(x), dtype=float)
    if v0.shape != x.shape or not np.all(np.isfinite(v0)):
        raise ValueError("rhs must be finite at the start point")
    diagnostics = dict(diagnostics or {})
    jac = jacobian or (lambda s: rhs_jacobian(rhs, s))

    if cfg.variational:
        def f(s):
            xs, M = s[:d], s[d:].reshape(d, d)
            return np.concatenate([np.asarray(rhs(xs), dtype=float),
                                   (jac(xs) @ M).ravel()])
        s = np.concatenate([x, np.eye(d).ravel()])
    else:
        f = lambda s: np.asarray(rhs(s), dtype=float)
        s = x

    dt = cfg.dt
    states = np.empty((cfg.steps + 1, d))
    states[0] = x
    diag = {k: np.empty(cfg.steps + 1) for k in diagnostics}
    if cfg.variational:
        diag["volume"] = np.empty(cfg.steps + 1)
        diag["volume"][0] = 1.0
    for k, fn in diagnostics.items():
        diag[k][0] = fn(x)

    error = None
    last = cfg.steps
    for n in range(1, cfg.steps + 1):
        with np.errstate(all="ignore"):
            if cfg.method == "rk4":
                k1 = f(s)
                k2 = f(s + 0.5 * dt * k1)
                k3 = f(s + 0.5 * dt * k2)
                k4 = f(s + dt * k3)
                s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                s = s + dt * f(s)
        if not np.all(np.isfinite(s)):
            error = f"non-finite state at step {n}"
            last = n - 1
            break
        states[n] = s[:d]
        for key, fn in diagnostics.items():
            diag[key][n] = fn(s[:d])
        if cfg.variational:
            diag["volume"][n] = determinant(s[d:].reshape(d, d))

    times = dt * np.arange(last + 1)
    return Trajectory(times, states[:last + 1],
                      {k: v[:last + 1] for k, v in diag.items()},
                      error, last if error else None)


def flow_volume_jacobian(rhs, start, t, cfg, jacobian=None):
    """``det`` of the tangent-flow matrix after time ``t`` (``cfg.dt`` steps)."""
    if not cfg.variational:
        raise ValueError("flow volume needs a variational configuration")
    steps = max(1, int(round(t / cfg.dt)))
    run = IntegratorConfig(cfg.method, t / steps, steps, True)
    traj = integrate(rhs, start, run, jacobian=jacobian)
    if traj.error:
        raise ArithmeticError(traj.error)
    return float(traj.diagnostics["volume"][-1])


def sup_distance(a, b):
    """Sup-norm distance between two state arrays (or trajectories)."""
    sa = a.states if isinstance(a, Trajectory) else np.asarray(a)
    sb = b.states if isinstance(b, Trajectory) else np.asarray(b)
    if sa.shape != sb.shape:
        raise ValueError("trajectories differ in shape")
    return float(np.max(np.abs(sa - sb)))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj, path, names=None):
    """Columns ``t, coords..., diagnostics...`` with 17 significant digits."""
    d = traj.states.shape[1]
    names = list(names) if names else [f"w{i}" for i in range(d)]
    if len(names) != d:
        raise ValueError("one name per coordinate")
    diag = sorted(traj.diagnostics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + names + diag)
        for i, t in enumerate(traj.times):
            row = [t] + list(traj.states[i]) + [traj.diagnostics[k][i] for k in diag]
            w.writerow(["%.17g" % v for v in row])


def read_trajectory_csv(path, n_coords=None):
    """Inverse of :func:`write_trajectory_csv`.

    Without ``n_coords`` every non-``t`` column is read as a coordinate.
    Returns ``(trajectory, coordinate names)``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    if header[0] != "t":
        raise ValueError("first column must be t")
    n = len(header) - 1 if n_coords is None else int(n_coords)
    names = header[1:1 + n]
    diag = {k: body[:, 1 + n + j] for j, k in enumerate(header[1 + n:])}
    return Trajectory(body[:, 0], body[:, 1:1 + n], diag), names
