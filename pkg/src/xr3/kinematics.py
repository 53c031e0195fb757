"""Kinematic chains of revolute joints: forward kinematics and
damped-least-squares inverse kinematics.

A chain is an ordered base-to-tip list of revolute joints. Joint i
contributes ``parent_offset_i * Rot(axis_i, q_i)``; the chain ends with a
fixed ``tip_offset``. All functions are pure and deterministic: identical
inputs give bit-identical outputs.

The solver is Levenberg-style damped least squares with a fixed damping
factor, per-iteration step clamping, and joint-limit projection after
every step. When the seed attempt does not converge, a fixed ladder of
low-discrepancy restart seeds inside the limit box is tried; the ladder
is part of the solver configuration, so results stay deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .transforms import Transform


@dataclass(frozen=True)
class RevoluteJoint:
    parent_offset: Transform
    axis: np.ndarray
    limit_lo: float
    limit_hi: float
    name: str = ""

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise ValueError(f"joint {self.name!r}: zero axis")
        object.__setattr__(self, "axis", a / n)
        if self.limit_lo > self.limit_hi:
            raise ValueError(f"joint {self.name!r}: limit_lo > limit_hi")


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[RevoluteJoint, ...]
    tip_offset: Transform = field(default_factory=Transform.identity)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if not self.joints:
            raise ValueError(f"chain {self.name!r}: no joints")
        # flat arrays for the solver hot path
        n = len(self.joints)
        off_p = np.empty((n, 3))
        off_r = np.empty((n, 3, 3))
        axes = np.empty((n, 3))
        for i, j in enumerate(self.joints):
            off_p[i] = j.parent_offset.position
            off_r[i] = quat.to_matrix(j.parent_offset.orientation)
            axes[i] = j.axis
        object.__setattr__(self, "_off_p", off_p)
        object.__setattr__(self, "_off_r", off_r)
        object.__setattr__(self, "_axes", axes)
        object.__setattr__(self, "_tip_p", self.tip_offset.position.copy())
        object.__setattr__(self, "_tip_r", quat.to_matrix(self.tip_offset.orientation))
        object.__setattr__(self, "_lo", np.array([j.limit_lo for j in self.joints]))
        object.__setattr__(self, "_hi", np.array([j.limit_hi for j in self.joints]))
        reach = sum(float(np.linalg.norm(p)) for p in off_p)
        reach += float(np.linalg.norm(self.tip_offset.position))
        object.__setattr__(self, "_max_reach", reach)

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def limits_lo(self) -> np.ndarray:
        return self._lo.copy()

    @property
    def limits_hi(self) -> np.ndarray:
        return self._hi.copy()

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=np.float64), self._lo, self._hi)


@dataclass(frozen=True)
class IkSolverConfig:
    damping: float = 0.05
    max_iterations: int = 100
    pos_tol: float = 1e-3
    rot_tol: float = 8.7e-3  # 0.5 degrees
    step_clamp: float = 0.2
    restarts: int = 512  # basin-hopping attempt budget after the caller's seed

    def __post_init__(self):
        for name in ("damping", "max_iterations", "pos_tol", "rot_tol",
                     "step_clamp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    pos_err: float
    rot_err: float
    converged: bool
    iterations: int


def _check_length(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(chain.joints),):
        raise ValueError(
            f"chain {chain.name!r}: config length {q.shape} != "
            f"{len(chain.joints)} joints")
    return q


def _axis_rot(axis: np.ndarray, angle: float, out: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis, written into ``out``."""
    x = axis[0]
    y = axis[1]
    z = axis[2]
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    out[0, 0] = t * x * x + c
    out[0, 1] = t * x * y - s * z
    out[0, 2] = t * x * z + s * y
    out[1, 0] = t * x * y + s * z
    out[1, 1] = t * y * y + c
    out[1, 2] = t * y * z - s * x
    out[2, 0] = t * x * z - s * y
    out[2, 1] = t * y * z + s * x
    out[2, 2] = t * z * z + c
    return out


def _fk_arrays(chain: KinematicChain, q: np.ndarray):
    """Joint origins (n,3), world joint axes (n,3), tip position, tip
    rotation matrix."""
    n = len(chain.joints)
    origins = np.empty((n, 3))
    axes_w = np.empty((n, 3))
    p = np.zeros(3)
    r = np.eye(3)
    rod = np.empty((3, 3))
    for i in range(n):
        p = p + r @ chain._off_p[i]
        r = r @ chain._off_r[i]
        origins[i] = p
        axes_w[i] = r @ chain._axes[i]
        r = r @ _axis_rot(chain._axes[i], q[i], rod)
    tip_p = p + r @ chain._tip_p
    tip_r = r @ chain._tip_r
    return origins, axes_w, tip_p, tip_r


def _fk_tip(chain: KinematicChain, q: np.ndarray):
    """Tip position and rotation matrix only (cheaper than _fk_arrays)."""
    n = len(chain.joints)
    p = np.zeros(3)
    r = np.eye(3)
    rod = np.empty((3, 3))
    for i in range(n):
        p = p + r @ chain._off_p[i]
        r = (r @ chain._off_r[i]) @ _axis_rot(chain._axes[i], q[i], rod)
    return p + r @ chain._tip_p, r @ chain._tip_r


def joint_frames(chain: KinematicChain, q) -> list[Transform]:
    """Pose of every joint frame (after its rotation) in the base frame,
    plus the tip pose as last element. Length = n_joints + 1."""
    q = _check_length(chain, q)
    frames = []
    t = Transform.identity()
    for joint, angle in zip(chain.joints, q):
        t = t.compose(joint.parent_offset).compose(
            Transform(orientation=quat.from_axis_angle(joint.axis, angle)))
        frames.append(t)
    frames.append(t.compose(chain.tip_offset))
    return frames


def forward_kinematics(chain: KinematicChain, q) -> Transform:
    """Base-frame pose of the chain tip at configuration q."""
    q = _check_length(chain, q)
    _, _, tip_p, tip_r = _fk_arrays(chain, q)
    return Transform(tip_p, quat.from_matrix(tip_r))


def chain_jacobian(chain: KinematicChain, q) -> tuple[np.ndarray, Transform]:
    """Geometric Jacobian (6 x n, rows = [linear; angular]) at q, plus the
    tip pose, both in the chain base frame."""
    q = _check_length(chain, q)
    origins, axes_w, tip_p, tip_r = _fk_arrays(chain, q)
    jac = np.empty((6, len(chain.joints)))
    jac[:3] = np.cross(axes_w, tip_p - origins).T
    jac[3:] = axes_w.T
    return jac, Transform(tip_p, quat.from_matrix(tip_r))


def _rotvec_between(r_target: np.ndarray, r_current: np.ndarray) -> np.ndarray:
    """Rotation vector of r_target @ r_current.T (base-frame error)."""
    m = r_target @ r_current.T
    cos_a = (m[0, 0] + m[1, 1] + m[2, 2] - 1.0) * 0.5
    cos_a = min(1.0, max(-1.0, cos_a))
    ang = math.acos(cos_a)
    if ang < 1e-12:
        return np.zeros(3)
    v = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    s = 2.0 * math.sin(ang)
    if s < 1e-9:  # near pi: extract axis from the symmetric part
        d = np.array([m[0, 0], m[1, 1], m[2, 2]])
        k = int(np.argmax(d))
        axis = np.sqrt(np.maximum((d + 1.0) / 2.0, 0.0))
        axis[(k + 1) % 3] = (m[k, (k + 1) % 3] + m[(k + 1) % 3, k]) / (4.0 * axis[k])
        axis[(k + 2) % 3] = (m[k, (k + 2) % 3] + m[(k + 2) % 3, k]) / (4.0 * axis[k])
        axis = axis / np.linalg.norm(axis)
        if v @ axis < 0.0:
            axis = -axis
        return axis * ang
    return v * (ang / s)


def _restart_seeds(chain: KinematicChain, count: int) -> list[np.ndarray]:
    """Fixed Halton points inside the limit box (seed ladder)."""
    if count <= 0:
        return []
    n = len(chain.joints)
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29][:n]
    lo, hi = chain._lo, chain._hi
    seeds = []
    for k in range(1, count + 1):
        u = np.empty(n)
        for d, p in enumerate(primes):
            f, r, i = 1.0, 0.0, k
            while i > 0:
                f /= p
                r += f * (i % p)
                i //= p
            u[d] = r
        seeds.append(lo + u * (hi - lo))
    return seeds


_ROT_SCALE = 0.3  # meters per radian: puts rotation error in length units


def _err_terms(tip_p, tip_r, target_p, target_r):
    p_err = target_p - tip_p
    pos_err = math.sqrt(p_err @ p_err)
    if target_r is None:
        return p_err, None, pos_err, 0.0, pos_err
    r_err = _rotvec_between(target_r, tip_r)
    rot_err = math.sqrt(r_err @ r_err)
    metric = math.hypot(pos_err, _ROT_SCALE * rot_err)
    return p_err, r_err, pos_err, rot_err, metric


def _solve(chain: KinematicChain, q0: np.ndarray, cfg: IkSolverConfig,
           target_p: np.ndarray, target_r: np.ndarray | None) -> IkResult:
    lo, hi = chain._lo, chain._hi
    lam2 = cfg.damping * cfg.damping
    q = q0.copy()
    n = len(q)
    m = 3 if target_r is None else 6
    jac = np.empty((m, n))
    err = np.empty(m)

    best_q = q.copy()
    best_pos = math.inf
    best_rot = math.inf
    best_score = math.inf

    origins, axes_w, tip_p, tip_r = _fk_arrays(chain, q)
    p_err, r_err, pos_err, rot_err, metric = _err_terms(tip_p, tip_r,
                                                        target_p, target_r)

    for it in range(cfg.max_iterations + 1):
        score = pos_err / cfg.pos_tol + rot_err / cfg.rot_tol
        if score < best_score:
            best_score, best_pos, best_rot = score, pos_err, rot_err
            best_q = q.copy()
        if pos_err <= cfg.pos_tol and rot_err <= cfg.rot_tol:
            return IkResult(q.copy(), pos_err, rot_err, True, it)
        if it == cfg.max_iterations:
            break

        lever = tip_p - origins
        a0, a1, a2 = axes_w[:, 0], axes_w[:, 1], axes_w[:, 2]
        l0, l1, l2 = lever[:, 0], lever[:, 1], lever[:, 2]
        jac[0] = a1 * l2 - a2 * l1
        jac[1] = a2 * l0 - a0 * l2
        jac[2] = a0 * l1 - a1 * l0
        err[:3] = p_err
        if target_r is not None:
            jac[3:] = axes_w.T * _ROT_SCALE
            err[3:] = r_err * _ROT_SCALE
        w = jac @ jac.T
        w[np.diag_indices(m)] += lam2
        dq = jac.T @ np.linalg.solve(w, err)
        np.clip(dq, -cfg.step_clamp, cfg.step_clamp, out=dq)

        # accept the first step size that shrinks the combined error; a
        # step that cannot improve after halving means the basin around
        # this stationary point is exhausted
        improved = False
        alpha = 1.0
        for _ in range(6):
            q_try = np.clip(q + alpha * dq, lo, hi)
            o2, a2, tp2, tr2 = _fk_arrays(chain, q_try)
            terms = _err_terms(tp2, tr2, target_p, target_r)
            if terms[4] < metric:
                q = q_try
                origins, axes_w, tip_p, tip_r = o2, a2, tp2, tr2
                p_err, r_err, pos_err, rot_err, metric = terms
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break

    return IkResult(best_q, best_pos, best_rot, False, cfg.max_iterations)


def _score(res: IkResult, cfg: IkSolverConfig) -> float:
    return res.pos_err / cfg.pos_tol + res.rot_err / cfg.rot_tol


_KICK_SCALES = (0.05, 0.12, 0.25, 0.5)


def _solve_global(chain: KinematicChain, seed: np.ndarray,
                  cfg: IkSolverConfig, target_p: np.ndarray,
                  target_r: np.ndarray | None) -> IkResult:
    """Local solve from the caller's seed; on failure, a deterministic
    basin-hopping loop (kicks around the best configuration found,
    interleaved with fixed low-discrepancy fresh seeds) up to
    ``cfg.restarts`` extra attempts. The kick stream is seeded from the
    target and seed bytes, so identical inputs explore identically.
    """
    best = _solve(chain, chain.clamp(seed), cfg, target_p, target_r)
    if best.converged or cfg.restarts == 0:
        return best

    # a target beyond total reach cannot converge; skip the global search
    if float(np.linalg.norm(target_p)) > chain._max_reach:
        return best

    material = target_p.tobytes() + seed.tobytes()
    if target_r is not None:
        material += target_r.tobytes()
    digest = np.frombuffer(material, dtype=np.uint8)
    rng = np.random.default_rng(int(np.sum(digest * np.arange(1, digest.size + 1))))

    lo, hi = chain._lo, chain._hi
    span = hi - lo
    ladder = _restart_seeds(chain, max(2, cfg.restarts // 4))
    h = 0
    for attempt in range(cfg.restarts):
        if attempt % 4 == 3 and h < len(ladder):
            q0 = ladder[h]
            h += 1
        else:
            s = _KICK_SCALES[attempt % len(_KICK_SCALES)]
            q0 = np.clip(best.q + s * span * (rng.random(len(span)) * 2.0 - 1.0),
                         lo, hi)
        res = _solve(chain, q0, cfg, target_p, target_r)
        if res.converged:
            return res
        if _score(res, cfg) < _score(best, cfg):
            best = res
    return best


def solve_ik_pose(chain: KinematicChain, target: Transform, seed,
                  cfg: IkSolverConfig = IkSolverConfig()) -> IkResult:
    """Damped-least-squares IK on the full 6-DoF tip pose.

    Non-convergence is not an error: the best configuration seen is
    returned with ``converged=False``. The returned q always lies within
    joint limits.
    """
    if not np.all(np.isfinite(target.position)):
        raise ValueError("target position not finite")
    seed = _check_length(chain, seed)
    target_r = quat.to_matrix(target.orientation)
    return _solve_global(chain, seed, cfg, target.position, target_r)


def solve_ik_position(chain: KinematicChain, target_pos, seed,
                      cfg: IkSolverConfig = IkSolverConfig()) -> IkResult:
    """Position-only damped-least-squares IK (orientation free)."""
    target_pos = np.asarray(target_pos, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(target_pos)):
        raise ValueError("target position not finite")
    seed = _check_length(chain, seed)
    return _solve_global(chain, seed, cfg, target_pos, None)
