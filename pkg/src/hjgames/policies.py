"""State-feedback policies extracted from value representations.

Gradient policies are bang-bang: the evader maximizes grad V . g(x) u, the
pursuer minimizes grad V . w(x) d, each channel at a box face (center on
ties). A policy may evaluate its value source in reduced coordinates (e.g.
the two-car game reduced to pursuer-in-evader-frame) via a state map; the
input boxes of the reduced and full game must then coincide.

The follow-filtered pursuer plays the pursuit game whenever the achievable
pursuit Hamiltonian magnitude at full horizon clears a threshold and falls
back to the follow-game policy otherwise. Sign convention: both branches
minimize their respective value along w(x), which is the pursuer's
payoff-aligned reading of the filter rule.
"""

from __future__ import annotations

import dataclasses
import hashlib
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError
from .grids import ValueGrid, interpolate, load_grid
from .mpc import SamplerConfig, _estimate_chunk
from .nets import ValueNetwork, bang_bang_inputs, load_checkpoint
from .problems import (
    GameProblem,
    clamp_inputs,
    flow_terms,
    get_problem,
    get_state_reduction,
)

Array = np.ndarray

POLICY_KINDS = ("grid_gradient", "net_gradient", "mpc_online", "follow_filtered", "scripted", "external")
ROLES = ("evader", "pursuer")


class NetValueSource:
    """Gradient/value queries backed by a ValueNetwork."""

    def __init__(self, net: ValueNetwork):
        self.net = net
        self.horizon = net.horizon
        self.problem_name = net.problem_name

    def value(self, x, tau):
        return self.net.value(x, tau)

    def gradient(self, x, tau) -> Array:
        _, _, grad_x = self.net.eval_with_gradient(x, tau)
        return grad_x


class GridValueSource:
    """Gradient/value queries backed by a solved grid; gradients are central
    differences of the interpolant with one node spacing, probes clamped into
    the grid box (periodic dims wrap instead)."""

    def __init__(self, grid: ValueGrid):
        self.grid = grid
        self.horizon = grid.horizon
        self.problem_name = grid.problem_name

    def _clamp(self, x: Array) -> Array:
        out = np.array(x, dtype=float, copy=True)
        for d, ax in enumerate(self.grid.spec.axes):
            if not ax.periodic:
                out[..., d] = np.clip(out[..., d], ax.lo, ax.hi)
        return out

    def value(self, x, tau):
        t = float(np.clip(self.horizon - float(tau), 0.0, self.horizon))
        vals = interpolate(self.grid, self._clamp(np.atleast_2d(np.asarray(x, float))), t)
        return vals if np.asarray(x).ndim > 1 else float(vals[0])

    def gradient(self, x, tau) -> Array:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        t = float(np.clip(self.horizon - float(np.max(np.asarray(tau))), 0.0, self.horizon))
        grad = np.zeros_like(x2)
        for d, ax in enumerate(self.grid.spec.axes):
            step = ax.spacing
            hi = x2.copy()
            lo = x2.copy()
            hi[:, d] += step
            lo[:, d] -= step
            v_hi = interpolate(self.grid, self._clamp(hi), t)
            v_lo = interpolate(self.grid, self._clamp(lo), t)
            grad[:, d] = (v_hi - v_lo) / (2.0 * step)
        return grad if np.asarray(x).ndim > 1 else grad[0]


class Policy:
    """Base: action(x, tau) -> input vector for this policy's player."""

    kind = "abstract"

    def __init__(self, role: str):
        if role not in ROLES:
            raise ConfigError(f"unknown role '{role}'")
        self.role = role

    def action(self, x, tau) -> Array:
        raise NotImplementedError


class GradientPolicy(Policy):
    """Bang-bang policy from a value source's spatial gradient."""

    def __init__(
        self,
        role: str,
        source,
        problem: GameProblem,
        state_map: Callable[[Array], Array] | None = None,
        input_problem: GameProblem | None = None,
    ):
        super().__init__(role)
        self.kind = "grid_gradient" if isinstance(source, GridValueSource) else "net_gradient"
        self.source = source
        self.problem = problem
        self.state_map = state_map
        self.input_problem = input_problem or problem
        if state_map is not None and input_problem is None:
            raise ConfigError("a state map needs the reduced problem for its input matrices")
        full, red = problem.dynamics, self.input_problem.dynamics
        if not (
            np.array_equal(full.control_box.lower, red.control_box.lower)
            and np.array_equal(full.control_box.upper, red.control_box.upper)
            and np.array_equal(full.disturbance_box.lower, red.disturbance_box.lower)
            and np.array_equal(full.disturbance_box.upper, red.disturbance_box.upper)
        ):
            raise ConfigError("reduced and full game input boxes must coincide")

    def action(self, x, tau) -> Array:
        x = np.asarray(x, dtype=float)
        x_eval = self.state_map(x) if self.state_map is not None else x
        tau_q = float(np.clip(tau, 0.0, self.source.horizon))
        grad = self.source.gradient(x_eval, tau_q)
        _, g, w = flow_terms(self.input_problem.dynamics, x_eval)
        _, _, u_star, d_star = bang_bang_inputs(grad, g, w, self.input_problem)
        return u_star if self.role == "evader" else d_star


class FollowFilteredPolicy(Policy):
    """Pursuer that switches from the pursuit game to the follow game when the
    achievable pursuit Hamiltonian magnitude at full horizon drops below eps."""

    kind = "follow_filtered"

    def __init__(
        self,
        pursuit_source,
        follow_source,
        problem: GameProblem,
        epsilon: float = 1e-3,
        state_map: Callable[[Array], Array] | None = None,
        input_problem: GameProblem | None = None,
    ):
        super().__init__("pursuer")
        if follow_source is None:
            raise ConfigError("follow_filtered policy needs a follow value source")
        self.pursuit = GradientPolicy("pursuer", pursuit_source, problem, state_map, input_problem)
        self.follow = GradientPolicy("pursuer", follow_source, problem, state_map, input_problem)
        self.epsilon = float(epsilon)
        self.problem = problem
        self.state_map = state_map
        self.input_problem = input_problem or problem

    def achievable_magnitude(self, x) -> Array:
        """|grad V(x, T) . w(x) d*| at the pursuit-optimal bang-bang d."""
        x = np.asarray(x, dtype=float)
        x_eval = self.state_map(x) if self.state_map is not None else x
        grad = self.pursuit.source.gradient(x_eval, self.pursuit.source.horizon)
        _, _, w = flow_terms(self.input_problem.dynamics, x_eval)
        s_d = np.einsum("...i,...ij->...j", grad, w)
        box = self.input_problem.dynamics.disturbance_box
        return np.abs(np.abs(s_d) @ box.half_width + s_d @ box.center)

    def pursuit_branch(self, x) -> Array:
        return self.achievable_magnitude(x) >= self.epsilon

    def action(self, x, tau) -> Array:
        # Both the branch rule and the action use the full-horizon slice.
        x = np.asarray(x, dtype=float)
        horizon = self.pursuit.source.horizon
        if x.ndim == 1:
            branch = bool(self.pursuit_branch(x))
            chosen = self.pursuit if branch else self.follow
            return chosen.action(x, horizon)
        branch = self.pursuit_branch(x)
        pursuit_actions = self.pursuit.action(x, horizon)
        follow_actions = self.follow.action(x, horizon)
        return np.where(branch[..., None], pursuit_actions, follow_actions)


class ScriptedPolicy(Policy):
    """Wraps a plain function of (x, tau); output is clamped into the box."""

    kind = "scripted"

    def __init__(self, role: str, fn: Callable[[Array, float], Array], problem: GameProblem):
        super().__init__(role)
        self.fn = fn
        self.problem = problem

    def action(self, x, tau) -> Array:
        box = (
            self.problem.dynamics.control_box
            if self.role == "evader"
            else self.problem.dynamics.disturbance_box
        )
        out = np.asarray(self.fn(np.asarray(x, dtype=float), tau), dtype=float)
        return clamp_inputs(box, out)


class ExternalPolicy(Policy):
    """Holds the latest externally supplied input (e.g. a human player);
    defaults to the box center until one arrives."""

    kind = "external"

    def __init__(self, role: str, problem: GameProblem):
        super().__init__(role)
        self.problem = problem
        box = problem.dynamics.control_box if role == "evader" else problem.dynamics.disturbance_box
        self.box = box
        self.current = box.center.copy()

    def set_input(self, value) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != (self.box.dim,):
            raise ContractError(f"input must have {self.box.dim} channels")
        self.current = clamp_inputs(self.box, value)

    def action(self, x, tau) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim > 1:
            return np.broadcast_to(self.current, x.shape[:-1] + self.current.shape).copy()
        return self.current.copy()


class MpcOnlinePolicy(Policy):
    """Sampling-MPC policy: refines an input sequence from the current state
    each query and plays its first action. Deterministic: the per-query rng
    is derived from (seed, state bytes, tau)."""

    kind = "mpc_online"

    def __init__(
        self,
        role: str,
        net: ValueNetwork,
        problem: GameProblem,
        config: SamplerConfig,
        seed: int = 0,
    ):
        super().__init__(role)
        self.net = net
        self.problem = problem
        self.config = config
        self.seed = int(seed)

    def _rng_for(self, x: Array, tau: float) -> np.random.Generator:
        digest = hashlib.sha256(
            np.asarray(x, dtype="<f8").tobytes() + np.float64(tau).tobytes()
        ).digest()
        key = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(np.random.SeedSequence((self.seed, key)))

    def action(self, x, tau) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim > 1:
            return np.stack([self.action(xi, tau) for xi in x])
        perspective = "control" if self.role == "evader" else "disturbance"
        tau_q = float(np.clip(tau, self.config.dt, self.net.horizon))
        h = max(1, round(min(self.config.refinement_horizon, tau_q) / self.config.dt))
        cfg = dataclasses.replace(self.config, horizon_steps=h)
        _, _, _, _, mu = _estimate_chunk(
            self.problem,
            self.net,
            x[None, :],
            np.array([tau_q]),
            [self._rng_for(x, tau_q)],
            cfg,
            perspective,
            grad_tau=None,
            objective="avoid",
        )
        return mu[0, 0].copy()


# --------------------------------------------------------------------------
# Spec operation surface
# --------------------------------------------------------------------------

def evader_action(policy: Policy, x, tau) -> Array:
    if policy.role != "evader":
        raise ConfigError("policy role is not evader")
    return policy.action(x, tau)


def pursuer_action(policy: Policy, x, tau) -> Array:
    if policy.role != "pursuer":
        raise ConfigError("policy role is not pursuer")
    return policy.action(x, tau)


def follow_filtered_action(policy: FollowFilteredPolicy, x, tau) -> Array:
    if not isinstance(policy, FollowFilteredPolicy):
        raise ConfigError("follow_filtered_action needs a follow-filtered policy")
    return policy.action(x, tau)


def train_follow_value(problem: GameProblem, arch, config, out_dir=None, net=None):
    """Follow-game training: the full pipeline with max-aggregated rollout
    costs and the max-form VI residual (Player I still maximizes)."""
    from .training import TrainConfig, train

    if not isinstance(config, TrainConfig):
        raise ConfigError("train_follow_value expects a TrainConfig")
    follow_cfg = dataclasses.replace(config, objective="follow")
    return train(problem, arch, follow_cfg, out_dir=out_dir, net=net)


# --------------------------------------------------------------------------
# Descriptors (matchup configs)
# --------------------------------------------------------------------------

def _load_source(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"VGRD":
        return GridValueSource(load_grid(path))
    if magic == b"VNET":
        return NetValueSource(load_checkpoint(path))
    raise ConfigError(f"{path} is neither a grid nor a checkpoint file")


def _resolve_state_map(source, problem: GameProblem):
    """Reduced-coordinate wiring when the source was built for a reduction."""
    if source.problem_name and source.problem_name != problem.name:
        reduced_name, state_map = get_state_reduction(problem.name)
        if source.problem_name != reduced_name:
            raise ConfigError(
                f"source is for '{source.problem_name}', expected '{problem.name}' or '{reduced_name}'"
            )
        return state_map, get_problem(reduced_name)
    return None, None


def make_policy(descriptor: dict, problem: GameProblem) -> Policy:
    """Build a policy from a serialized descriptor.

    Keys: kind, role, source (path), follow_source (path, follow_filtered),
    epsilon (follow_filtered), name (scripted: 'center'), seed and sampler
    keys (mpc_online).
    """
    desc = dict(descriptor)
    kind = desc.pop("kind", None)
    if kind not in POLICY_KINDS:
        raise ConfigError(f"unknown policy kind '{kind}'")
    role = desc.pop("role", None)
    if kind == "follow_filtered":
        role = role or "pursuer"
        if role != "pursuer":
            raise ConfigError("follow_filtered is a pursuer policy")
    if kind in ("grid_gradient", "net_gradient"):
        source = _load_source(desc.pop("source"))
        expected = GridValueSource if kind == "grid_gradient" else NetValueSource
        if not isinstance(source, expected):
            raise ConfigError(f"policy kind '{kind}' does not match the source file type")
        state_map, input_problem = _resolve_state_map(source, problem)
        if desc:
            raise ConfigError(f"unknown policy descriptor keys: {sorted(desc)}")
        return GradientPolicy(role, source, problem, state_map, input_problem)
    if kind == "follow_filtered":
        pursuit = _load_source(desc.pop("source"))
        follow = _load_source(desc.pop("follow_source"))
        epsilon = float(desc.pop("epsilon", 1e-3))
        state_map, input_problem = _resolve_state_map(pursuit, problem)
        if desc:
            raise ConfigError(f"unknown policy descriptor keys: {sorted(desc)}")
        return FollowFilteredPolicy(pursuit, follow, problem, epsilon, state_map, input_problem)
    if kind == "mpc_online":
        net = load_checkpoint(desc.pop("source"))
        seed = int(desc.pop("seed", 0))
        sampler = desc.pop("sampler", {})
        if desc:
            raise ConfigError(f"unknown policy descriptor keys: {sorted(desc)}")
        return MpcOnlinePolicy(role, net, problem, SamplerConfig(**sampler), seed=seed)
    if kind == "scripted":
        name = desc.pop("name", "center")
        if desc:
            raise ConfigError(f"unknown policy descriptor keys: {sorted(desc)}")
        if name == "center":
            box = (
                problem.dynamics.control_box
                if role == "evader"
                else problem.dynamics.disturbance_box
            )
            return ScriptedPolicy(role, lambda x, tau: np.broadcast_to(box.center, x.shape[:-1] + (box.dim,)), problem)
        raise ConfigError(f"unknown scripted policy '{name}'")
    if kind == "external":
        if desc:
            raise ConfigError(f"unknown policy descriptor keys: {sorted(desc)}")
        return ExternalPolicy(role, problem)
    raise ConfigError(f"unhandled policy kind '{kind}'")
