"""Recover hand parameters from ground-truth supervision by descent on the mesh losses.

Gradients come from central finite differences evaluated as one batched
call; steps are accepted by a backtracking (halving) Armijo line search, so
the accepted loss sequence never increases. The loss weights span 10-400 and
the 2D term dominates the curvature, so the default search direction is the
gradient preconditioned by the Gauss-Newton matrix of the squared terms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .aggregation import decode_batch, decode_param_vector, encode_param_vector
from .errors import DegenerateAlignment, InitializationError
from .hand_model import HANDS, PARAM_DIM, HandParams, posed_joints_masked, skin_mesh
from .losses import MESH_TERMS, LossWeights, Similarity, joint_errors, similarity_fit, vertex_errors
from .synth import Scene

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 300
    step: float = 1e-2
    max_halvings: int = 20
    fd_step: float = 1e-4
    tol: float = 1e-7
    grad_tol: float = 1e-9
    armijo: float = 1e-4
    spectral: bool = True
    method: str = "gauss_newton"
    damping: float = 1e-9
    terms: tuple = MESH_TERMS

    def __post_init__(self):
        for name in ("max_iters", "step", "max_halvings", "fd_step", "tol", "grad_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.method not in ("gauss_newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        unknown = set(self.terms) - set(MESH_TERMS)
        if unknown:
            raise ValueError(f"fitting supports only mesh terms {MESH_TERMS}, got {sorted(unknown)}")


class SceneObjective:
    """Weighted mesh loss of the concatenated raw 109-vectors of a scene's hands."""

    def __init__(self, scene: Scene, weights: LossWeights = LossWeights(), terms=MESH_TERMS):
        self.scene = scene
        self.weights = weights
        self.terms = tuple(t for t in MESH_TERMS if t in terms)
        self.hands = [h for h in HANDS if h in scene.hands]
        self.dim = PARAM_DIM * len(self.hands)

    def pack(self, params: Mapping[str, HandParams]) -> np.ndarray:
        return np.concatenate([encode_param_vector(params[h]) for h in self.hands])

    def unpack(self, x) -> dict:
        return {h: decode_param_vector(x[i * PARAM_DIM:(i + 1) * PARAM_DIM], h) for i, h in enumerate(self.hands)}

    def _joints(self, X):
        out = []
        for i, h in enumerate(self.hands):
            pose, shape, camera = decode_batch(X[..., i * PARAM_DIM:(i + 1) * PARAM_DIM])
            joints, valid = posed_joints_masked(self.scene.rigs[h], pose, shape)
            out.append((pose, shape, camera, joints, valid))
        return out

    def alignments(self, x) -> dict:
        """Similarity transforms aligning the prediction at ``x`` to the ground truth."""
        result = {}
        for h, (_, _, _, joints, _) in zip(self.hands, self._joints(x[None])):
            result[h] = similarity_fit(joints[0], self.scene.hands[h].joints3d)
        return result

    def term_values(self, X, alignments: Optional[Mapping[str, Similarity]] = None) -> dict:
        """Per-term losses for a batch (B, dim); invalid rotations give +inf."""
        return self.evaluate(X, alignments)[0]

    def evaluate(self, X, alignments: Optional[Mapping[str, Similarity]] = None):
        """Per-term losses and the stacked residuals of the squared terms.

        The mano, pj2d and bone terms are sums of squared residuals; their
        residual vectors (B, m) feed the Gauss-Newton metric.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = self.weights
        values = {t: np.zeros(len(X)) for t in self.terms}
        residuals = []
        for h, (pose, shape, camera, joints, valid) in zip(self.hands, self._joints(X)):
            gt = self.scene.hands[h]
            rig = self.scene.rigs[h]
            joints = np.where(valid[:, None, None], joints, gt.joints3d)
            block = []
            if "mano" in values:
                block.append(np.sqrt(w.w_pose) * (pose - gt.params.pose6d).reshape(len(X), -1))
                block.append(np.sqrt(w.w_shape) * (shape - gt.params.shape))
            if "j3d" in values:
                r = (joints - joints[:, :1]) - (gt.joints3d - gt.joints3d[:1])
                values["j3d"] += w.w_j3d * np.linalg.norm(r, axis=-1).mean(-1)
            if "paj3d" in values:
                sim = alignments[h] if alignments is not None else similarity_fit(
                    joints, np.broadcast_to(gt.joints3d, joints.shape))
                aligned = sim.apply(joints)
                values["paj3d"] += w.w_paj3d * np.linalg.norm(aligned - gt.joints3d, axis=-1).mean(-1)
            if "pj2d" in values:
                proj = camera[:, None, :1] * joints[..., :2] + camera[:, None, 1:]
                block.append(np.sqrt(w.w_pj2d) * (proj - gt.joints2d).reshape(len(X), -1))
            if "bone" in values:
                edges = np.asarray(rig.bone_edges)
                bl = np.linalg.norm(joints[:, edges[:, 1]] - joints[:, edges[:, 0]], axis=-1)
                block.append(np.sqrt(w.w_bl) * (bl - gt.bones))
            sq = iter(block)
            if "mano" in values:
                values["mano"] += (next(sq) ** 2).sum(-1) + (next(sq) ** 2).sum(-1)
            if "pj2d" in values:
                values["pj2d"] += (next(sq) ** 2).sum(-1)
            if "bone" in values:
                values["bone"] += (next(sq) ** 2).sum(-1)
            for t in values:
                values[t] = np.where(valid, values[t], np.inf)
            residuals.extend(block)
        res = np.concatenate(residuals, axis=-1) if residuals else np.zeros((len(X), 0))
        return values, res

    def __call__(self, X, alignments=None) -> np.ndarray:
        values = self.term_values(X, alignments)
        total = np.zeros(len(np.atleast_2d(X)))
        for t in self.terms:
            total = total + values[t]
        return total

    def _probe(self, x, h: float):
        try:
            align = self.alignments(x) if "paj3d" in self.terms else None
        except DegenerateAlignment:
            align = None
        eye = np.eye(self.dim) * h
        values, res = self.evaluate(np.concatenate([x + eye, x - eye]), align)
        total = np.zeros(2 * self.dim)
        for t in self.terms:
            total = total + values[t]
        return total, res

    def gradient(self, x, h: float) -> np.ndarray:
        """Central differences, all probes in one batch; the alignment is held fixed."""
        f, _ = self._probe(x, h)
        return (f[:self.dim] - f[self.dim:]) / (2 * h)

    def gradient_and_metric(self, x, h: float):
        """Gradient plus the Gauss-Newton matrix 2 J^T J of the squared residuals, from one probe batch."""
        f, res = self._probe(x, h)
        g = (f[:self.dim] - f[self.dim:]) / (2 * h)
        jac = (res[:self.dim] - res[self.dim:]).T / (2 * h)  # (m, dim)
        return g, 2.0 * jac.T @ jac


@dataclass
class FitResult:
    params: dict
    trace: list
    metrics: dict
    reason: str
    grad_norm: float
    terms: tuple = field(default=MESH_TERMS)


def hand_metrics(scene: Scene, params: Mapping[str, HandParams]) -> dict:
    """MPJPE, PA-MPJPE, MPVPE, PA-MPVPE (mm) per hand and their mean."""
    out = {}
    for h, state in scene.hands.items():
        rig = scene.rigs[h]
        mesh = skin_mesh(rig, params[h])
        joints = rig.joint_regressor @ mesh
        mpjpe_mm, pa_mm = joint_errors(joints, state.joints3d)
        mpvpe_mm, pav_mm = vertex_errors(mesh, state.mesh, joints[0], state.joints3d[0])
        out[h] = {"mpjpe": mpjpe_mm, "pa_mpjpe": pa_mm, "mpvpe": mpvpe_mm, "pa_mpvpe": pav_mm}
    if out:
        out["mean"] = {k: float(np.mean([out[h][k] for h in scene.hands])) for k in next(iter(out.values()))}
    return out


def _damped_solve(metric, g, damping):
    mu = damping * max(float(np.mean(np.diag(metric))), 1e-12)
    return np.linalg.solve(metric + mu * np.eye(len(g)), g)


def fit_scene(scene: Scene, init: Mapping[str, HandParams], cfg: FitConfig = FitConfig(),
              weights: LossWeights = LossWeights()) -> FitResult:
    """Descend the active mesh terms from ``init`` toward the scene's ground truth.

    ``method="gauss_newton"`` scales the finite-difference gradient by the
    inverse Gauss-Newton matrix of the squared residual terms and starts each
    line search at a unit step; ``method="gradient"`` is steepest descent
    starting at ``cfg.step`` (Barzilai-Borwein step guesses when
    ``cfg.spectral``). Both halve the step until the Armijo condition holds.
    """
    objective = SceneObjective(scene, weights, cfg.terms)
    missing = [h for h in objective.hands if h not in init]
    if missing:
        raise ValueError(f"no initial parameters for {missing}")
    x = objective.pack(init)
    values = objective.term_values(x)
    f = float(sum(values[t][0] for t in objective.terms))
    if not np.isfinite(f):
        raise InitializationError(f"loss at initialization is not finite ({f})")

    def record(i, vals, total):
        row = {"iteration": i, "total": float(total)}
        row.update({t: float(vals[t][0]) for t in objective.terms})
        return row

    trace = [record(0, values, f)]
    step = cfg.step
    prev = None  # (displacement, gradient) of the last accepted step
    reason = "max_iters"
    gnorm = np.inf
    for it in range(1, cfg.max_iters + 1):
        if cfg.method == "gauss_newton":
            g, metric = objective.gradient_and_metric(x, cfg.fd_step)
        else:
            g = objective.gradient(x, cfg.fd_step)
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(gnorm):
            reason = "nonfinite_gradient"
            break
        if gnorm <= cfg.grad_tol:
            reason = "gradient"
            break
        if cfg.method == "gauss_newton":
            direction = -_damped_solve(metric, g, cfg.damping)
            alpha = 1.0
        else:
            if cfg.spectral and prev is not None:
                s, g_prev = prev
                sy = float(s @ (g - g_prev))
                step = float(np.clip(s @ s / sy, 1e-12, 1e6)) if sy > 0 else min(2 * step, 1e6)
            direction = -g
            alpha = step
        slope = float(g @ direction)
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            x_new = x + alpha * direction
            vals_new = objective.term_values(x_new)
            f_new = float(sum(vals_new[t][0] for t in objective.terms))
            if np.isfinite(f_new) and f_new <= f + cfg.armijo * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            reason = "line_search"
            break
        decrease = f - f_new
        prev = (x_new - x, g)
        step = alpha if cfg.spectral else cfg.step
        f_old = f
        x, f = x_new, f_new
        trace.append(record(it, vals_new, f))
        log.debug("iter %d loss %.6g step %.3g |g| %.3g", it, f, alpha, gnorm)
        if decrease <= cfg.tol * abs(f_old):
            reason = "stalled"
            break

    params = objective.unpack(x)
    metrics = {"initial": hand_metrics(scene, init), "final": hand_metrics(scene, params)}
    return FitResult(params, trace, metrics, reason, gnorm, objective.terms)
