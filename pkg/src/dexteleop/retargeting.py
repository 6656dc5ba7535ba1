"""Hand pose retargeting: human keypoint vectors -> robot hand joint positions.

The mapping solves, at every frame t,

    min_q  sum_i || alpha * v_i - f_i(q) ||^2  +  beta * || q - q_prev ||^2
    s.t.   lower <= q <= upper

where v_i is a difference vector between two human hand landmarks, f_i(q) is
the matching difference vector between two robot links (forward kinematics in
the hand base frame), alpha scales away the human/robot hand size difference,
and the beta term keeps consecutive solutions temporally smooth.

The solver is a projected quasi-Newton descent: BFGS-approximated curvature,
backtracking line search on the clamped step, warm-started from the previous
frame's solution. It is deterministic and guarantees the returned objective
never exceeds the warm start's.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, SolverDiverged, UnknownLink
from .kinematics import JointConfig, RobotModel, config_values, fk_all, point_jacobian

# MediaPipe 21-landmark names, index = position in the keypoint array.
LANDMARK_NAMES = [
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
    "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
]
LANDMARK_INDEX = {name: i for i, name in enumerate(LANDMARK_NAMES)}


def landmark_index(ref) -> int:
    """Accept a landmark name or a raw index in [0, 20]."""
    if isinstance(ref, str):
        try:
            return LANDMARK_INDEX[ref]
        except KeyError:
            raise ValueError(f"unknown hand landmark {ref!r}") from None
    idx = int(ref)
    if not 0 <= idx <= 20:
        raise ValueError(f"landmark index {idx} outside [0, 20]")
    return idx


@dataclass(frozen=True)
class VectorPair:
    """One matched keypoint vector: human landmark pair <-> robot link pair."""

    human: Tuple[int, int]      # (from, to) landmark indices
    robot: Tuple[str, str]      # (from, to) link names


@dataclass
class SolverSettings:
    max_iterations: int = 50
    gradient_tolerance: float = 1e-5
    step_tolerance: float = 1e-7


@dataclass
class RetargetConfig:
    vector_pairs: List[VectorPair]
    alpha: float = 1.0
    beta: float = 0.05
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if not self.vector_pairs:
            raise ValueError("need at least one vector pair")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        for pair in self.vector_pairs:
            for idx in pair.human:
                if not 0 <= idx <= 20:
                    raise ValueError(f"landmark index {idx} outside [0, 20]")

    def validate_against(self, model: RobotModel):
        for pair in self.vector_pairs:
            for link in pair.robot:
                if link not in model.link_index:
                    raise UnknownLink(f"retarget pair references unknown link {link!r}")

    @staticmethod
    def from_json(text: str) -> "RetargetConfig":
        raw = json.loads(text)
        pairs = [VectorPair((landmark_index(p["human"][0]), landmark_index(p["human"][1])),
                            (p["robot"][0], p["robot"][1]))
                 for p in raw["vector_pairs"]]
        solver = SolverSettings(**raw.get("solver", {}))
        return RetargetConfig(pairs, raw.get("alpha", 1.0), raw.get("beta", 0.05), solver)

    def to_json(self) -> str:
        return json.dumps({
            "vector_pairs": [{"human": [LANDMARK_NAMES[p.human[0]], LANDMARK_NAMES[p.human[1]]],
                              "robot": list(p.robot)} for p in self.vector_pairs],
            "alpha": self.alpha,
            "beta": self.beta,
            "solver": {"max_iterations": self.solver.max_iterations,
                       "gradient_tolerance": self.solver.gradient_tolerance,
                       "step_tolerance": self.solver.step_tolerance},
        }, indent=1)


@dataclass
class HumanVectors:
    vectors: np.ndarray  # (n_pairs, 3)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("human vectors must be finite")


@dataclass
class RetargetState:
    q_prev: JointConfig = None
    initialized: bool = False


def compute_human_vectors(keypoints_local: np.ndarray, config: RetargetConfig) -> HumanVectors:
    """vectors[i] = keypoints[to] - keypoints[from] for each configured pair."""
    kp = np.asarray(keypoints_local, dtype=float).reshape(21, 3)
    out = np.empty((len(config.vector_pairs), 3))
    for i, pair in enumerate(config.vector_pairs):
        out[i] = kp[pair.human[1]] - kp[pair.human[0]]
    return HumanVectors(out)


def _link_positions_and_pairs(model: RobotModel, config: RetargetConfig):
    links = []
    for pair in config.vector_pairs:
        links.extend(pair.robot)
    return sorted(set(links))


def _objective_value(vals, v, q_prev_vals, config, model):
    fk = fk_all(model, vals)
    total = config.beta * float(np.sum((vals - q_prev_vals) ** 2))
    for i, pair in enumerate(config.vector_pairs):
        f_i = (fk.link_pos[model.link_index[pair.robot[1]]]
               - fk.link_pos[model.link_index[pair.robot[0]]])
        r = config.alpha * v.vectors[i] - f_i
        total += float(r @ r)
    return total


def objective(q, v: HumanVectors, q_prev, config: RetargetConfig,
              model: RobotModel) -> Tuple[float, np.ndarray]:
    """Objective value and analytic gradient at q.

    gradient = sum_i -2 * J_i^T (alpha v_i - f_i(q)) + 2 beta (q - q_prev),
    with J_i the positional Jacobian difference of the pair's two links.
    """
    vals = config_values(model, q)
    q_prev_vals = config_values(model, q_prev)
    if len(v.vectors) != len(config.vector_pairs):
        raise DimensionMismatch("human vectors do not match configured pairs")
    fk = fk_all(model, vals)
    total = config.beta * float(np.sum((vals - q_prev_vals) ** 2))
    grad = 2.0 * config.beta * (vals - q_prev_vals)
    jac_cache = {}
    for link in _link_positions_and_pairs(model, config):
        jac_cache[link] = point_jacobian(model, fk, link)
    for i, pair in enumerate(config.vector_pairs):
        from_link, to_link = pair.robot
        f_i = fk.link_pos[model.link_index[to_link]] - fk.link_pos[model.link_index[from_link]]
        r = config.alpha * v.vectors[i] - f_i
        total += float(r @ r)
        jac_i = jac_cache[to_link] - jac_cache[from_link]
        grad -= 2.0 * (jac_i.T @ r)
    return total, grad


def _projected_gradient(vals, grad, lower, upper):
    pg = grad.copy()
    at_lower = vals <= lower + 1e-12
    at_upper = vals >= upper - 1e-12
    pg[at_lower & (pg > 0)] = 0.0
    pg[at_upper & (pg < 0)] = 0.0
    return pg


def retarget(state: RetargetState, v: HumanVectors, config: RetargetConfig,
             model: RobotModel) -> JointConfig:
    """One retargeting solve, warm-started from the previous frame's solution.

    The first call initializes the warm start to the mid-range configuration.
    The result is always within joint limits and its objective never exceeds
    the objective at the warm start.
    """
    if not state.initialized:
        state.q_prev = model.midrange_config()
        state.initialized = True
    lower, upper = model.lower, model.upper
    q_prev_vals = np.clip(config_values(model, state.q_prev), lower, upper)

    vals = q_prev_vals.copy()
    f, grad = objective(vals, v, q_prev_vals, config, model)
    if not np.isfinite(f):
        raise SolverDiverged("objective is non-finite at the warm start")

    n = model.dof
    hinv = np.eye(n)
    settings = config.solver
    for _ in range(settings.max_iterations):
        pg = _projected_gradient(vals, grad, lower, upper)
        if np.linalg.norm(pg) < settings.gradient_tolerance:
            break
        direction = -(hinv @ grad)
        if grad @ direction > -1e-14:  # curvature model unusable; steepest descent
            hinv = np.eye(n)
            direction = -grad

        step = 1.0
        accepted = False
        for _ in range(30):
            trial = np.clip(vals + step * direction, lower, upper)
            s = trial - vals
            if np.abs(s).max() < 1e-16:
                step *= 0.5
                continue
            f_trial = _objective_value(trial, v, q_prev_vals, config, model)
            if not np.isfinite(f_trial):
                raise SolverDiverged("objective became non-finite during line search")
            if f_trial <= f + 1e-4 * float(grad @ s):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if step == 1.0:
            # Full step accepted: greedily expand while descent keeps paying off,
            # which walks out of flat saddle valleys in few iterations.
            for _ in range(30):
                wider = np.clip(vals + 2.0 * step * direction, lower, upper)
                s_w = wider - vals
                if np.abs(s_w - s).max() < 1e-16:
                    break
                f_wider = _objective_value(wider, v, q_prev_vals, config, model)
                if not (np.isfinite(f_wider) and f_wider < f_trial
                        and f_wider <= f + 1e-4 * float(grad @ s_w)):
                    break
                step *= 2.0
                trial, s, f_trial = wider, s_w, f_wider

        _, grad_new = objective(trial, v, q_prev_vals, config, model)
        y = grad_new - grad
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            outer = np.outer(s, y)
            hinv = ((np.eye(n) - rho * outer) @ hinv @ (np.eye(n) - rho * outer.T)
                    + rho * np.outer(s, s))
        else:
            # Negative curvature: restart with a gradient-scaled metric.
            scale = float(np.linalg.norm(s)) / max(float(np.linalg.norm(grad_new)), 1e-12)
            hinv = np.eye(n) * max(scale, 1.0)
        vals, f, grad = trial, f_trial, grad_new
        if np.linalg.norm(s) < settings.step_tolerance:
            break

    result = JointConfig(np.clip(vals, lower, upper))
    state.q_prev = result.copy()
    return result


def default_vector_pairs(palm_link: str, tip_links: Sequence[str]) -> List[VectorPair]:
    """Wrist->fingertip pairs for each finger plus thumb->index/middle tip pairs.

    `tip_links` must be ordered thumb, index, middle, ring, pinky (any prefix
    of that order works for hands with fewer fingers).
    """
    fingers = ["thumb_tip", "index_tip", "middle_tip", "ring_tip", "pinky_tip"]
    pairs = [VectorPair((LANDMARK_INDEX["wrist"], LANDMARK_INDEX[fingers[i]]),
                        (palm_link, tip))
             for i, tip in enumerate(tip_links)]
    if len(tip_links) >= 3:
        for other, idx in (("index_tip", 1), ("middle_tip", 2)):
            pairs.append(VectorPair((LANDMARK_INDEX["thumb_tip"], LANDMARK_INDEX[other]),
                                    (tip_links[0], tip_links[idx])))
    return pairs
