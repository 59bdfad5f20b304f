"""TDOA multilateration: Levenberg-Marquardt snapshot solver and particle filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .channel import C


_LOG_TINY = float(np.log(np.finfo(float).tiny))


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorSet:
    positions: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 3:
            raise ValueError("anchor positions must be 3D")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise ValueError("reference_index out of range")
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def reference(self) -> np.ndarray:
        return self.positions[self.reference_index]

    def check(self, dim: int = 2) -> None:
        """Raise GeometryError for too few or degenerate anchors."""
        need = 3 if dim == 2 else 4
        if len(self) < need:
            raise GeometryError(f"{dim}D solving needs at least {need} anchors")
        rel = self.positions[:, :dim] - self.positions[0, :dim]
        if np.linalg.matrix_rank(rel, tol=1e-9) < dim:
            raise GeometryError("anchors are collinear" if dim == 2 else "anchors are coplanar")


@dataclass(frozen=True)
class PositionEstimate:
    position: np.ndarray
    residual_rms: float
    iterations: int
    covariance_proxy: np.ndarray
    converged: bool = True
    status: str = "ok"


def _full_position(p, height):
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 2:
        return np.array([p[0], p[1], height])
    return p


def _pairs(meas, anchors: AnchorSet) -> np.ndarray:
    idx = np.empty((len(meas), 2), dtype=int)
    for k, m in enumerate(meas):
        ref, i = m.rx_pair
        if ref != anchors.reference_index or not 0 <= i < len(anchors) or i == ref:
            raise ValueError(f"measurement pair {m.rx_pair} does not reference anchor "
                             f"{anchors.reference_index} and a valid anchor")
        idx[k] = (ref, i)
    return idx


def tdoa_residuals(p, anchors: AnchorSet, meas, height: float | None = None) -> np.ndarray:
    """Range-difference residuals c*tdoa - (|p - a_i| - |p - a_ref|) in metres."""
    if height is None:
        height = float(anchors.positions[:, 2].mean())
    x = _full_position(p, height)
    idx = _pairs(meas, anchors)
    tdoa = np.array([m.tdoa for m in meas], dtype=float)
    d = np.linalg.norm(x[None, :] - anchors.positions, axis=1)
    return C * tdoa - (d[idx[:, 1]] - d[idx[:, 0]])


def tdoa_jacobian(p, anchors: AnchorSet, meas, height: float | None = None) -> np.ndarray:
    """d residual / d p for the free coordinates of ``p``."""
    if height is None:
        height = float(anchors.positions[:, 2].mean())
    dim = np.asarray(p).size
    x = _full_position(p, height)
    idx = _pairs(meas, anchors)
    diff = x[None, :] - anchors.positions
    unit = diff / np.linalg.norm(diff, axis=1)[:, None]
    return -(unit[idx[:, 1]] - unit[idx[:, 0]])[:, :dim]


def solve_position_lsq(meas, anchors: AnchorSet, initial, *, dim: int = 2,
                       height: float | None = None, max_iter: int = 100, step_tol: float = 1e-6,
                       meas_sigma: float | None = None) -> PositionEstimate:
    """Levenberg-Marquardt fit of the TDOA range-difference model.

    The covariance proxy is (J^T J)^-1 scaled by ``meas_sigma**2`` when given,
    otherwise by the residual variance.
    """
    anchors.check(dim)
    if len(meas) < dim:
        raise GeometryError(f"need at least {dim} measurements, got {len(meas)}")
    if height is None:
        height = float(anchors.positions[:, 2].mean())
    p = np.asarray(initial, dtype=float).reshape(-1)[:dim].copy()
    lam = 1e-3
    r = tdoa_residuals(p, anchors, meas, height)
    cost = float(r @ r)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        J = tdoa_jacobian(p, anchors, meas, height)
        g = J.T @ r
        H = J.T @ J
        if np.linalg.matrix_rank(H) < dim:
            raise GeometryError("normal matrix is singular at the current iterate")
        step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
        r_new = tdoa_residuals(p + step, anchors, meas, height)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            p = p + step
            r, cost = r_new, cost_new
            lam /= 10
            if np.linalg.norm(step) < step_tol:
                converged = True
                break
        else:
            lam *= 10
            if lam > 1e12:
                converged = True
                break
    J = tdoa_jacobian(p, anchors, meas, height)
    dof = len(meas) - dim
    if meas_sigma is not None:
        var = meas_sigma ** 2
    else:
        var = cost / dof if dof > 0 else 0.0
    cov = np.linalg.pinv(J.T @ J) * var
    cov = 0.5 * (cov + cov.T)
    return PositionEstimate(_full_position(p, height)[:3] if dim == 3 else p,
                            float(np.sqrt(cost / len(meas))), it, cov, converged,
                            "ok" if converged else "max_iter")


@dataclass(frozen=True)
class PfParams:
    n_particles: int = 2000
    process_noise: float = 0.5
    meas_sigma: float = 0.02
    dim: int = 2
    height: float | None = None


@dataclass
class ParticleSet:
    """Particles as rows [position..., velocity...] with normalised weights."""

    states: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator = field(repr=False)
    region: tuple = ()
    status: str = "ok"

    def __post_init__(self):
        if self.states.shape[0] == 0:
            raise ValueError("particle set must be non-empty")

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :self.dim]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, self.dim:]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.positions


def pf_init(anchors: AnchorSet, n_particles: int, prior_region, seed, dim: int = 2) -> ParticleSet:
    """Uniform positions over ``prior_region = (lo, hi)``, zero velocity."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    lo = np.asarray(prior_region[0], float)[:dim]
    hi = np.asarray(prior_region[1], float)[:dim]
    if np.any(hi < lo):
        raise ValueError("empty prior region")
    rng = np.random.default_rng(seed)
    pos = lo + (hi - lo) * rng.random((n_particles, dim))
    states = np.hstack([pos, np.zeros((n_particles, dim))])
    w = np.full(n_particles, 1.0 / n_particles)
    return ParticleSet(states, w, rng, (lo, hi))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    u = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="left")


def pf_step(ps: ParticleSet, meas, anchors: AnchorSet, dt: float,
            params: PfParams = PfParams()) -> tuple[ParticleSet, PositionEstimate]:
    """Constant-velocity predict, TDOA likelihood update, systematic resampling."""
    rng = ps.rng
    dim = ps.dim
    n = ps.states.shape[0]
    height = params.height
    if height is None:
        height = float(anchors.positions[:, 2].mean())
    accel = params.process_noise * rng.standard_normal((n, dim))
    pos = ps.positions + ps.velocities * dt + 0.5 * accel * dt ** 2
    vel = ps.velocities + accel * dt
    states = np.hstack([pos, vel])
    status = "ok"
    logw = np.log(np.maximum(ps.weights, 1e-300))
    if len(meas):
        idx = _pairs(meas, anchors)
        tdoa = np.array([m.tdoa for m in meas])
        full = pos if dim == 3 else np.hstack([pos, np.full((n, 1), height)])
        d = np.linalg.norm(full[:, None, :] - anchors.positions[None, :, :], axis=2)
        res = C * tdoa[None, :] - (d[:, idx[:, 1]] - d[:, idx[:, 0]])
        loglik = -np.sum(res ** 2, axis=1) / (2 * params.meas_sigma ** 2)
        logw = logw + loglik
        # every likelihood would underflow in linear terms: the measurement is
        # inconsistent with the whole cloud, so start over
        lost = not np.max(loglik) > _LOG_TINY
    else:
        lost = False
    if lost or not np.any(np.isfinite(logw)):
        lo, hi = ps.region
        states[:, :dim] = lo + (hi - lo) * rng.random((n, dim))
        states[:, dim:] = 0.0
        w = np.full(n, 1.0 / n)
        status = "reinitialized"
    else:
        w = np.exp(logw - logsumexp(logw))
        w /= w.sum()
    new = ParticleSet(states, w, rng, ps.region, status)
    if new.ess < n / 2:
        keep = systematic_resample(w, rng)
        new = ParticleSet(states[keep].copy(), np.full(n, 1.0 / n), rng, ps.region, status)
    est_pos = new.mean()
    dev = new.positions - est_pos
    cov = (new.weights[:, None] * dev).T @ dev
    rms = 0.0
    if len(meas):
        rms = float(np.sqrt(np.mean(tdoa_residuals(est_pos, anchors, meas, height) ** 2)))
    return new, PositionEstimate(est_pos, rms, 1, cov, True, status)
