"""Sampling-based MPC dataset generation from both players' perspectives.

One player's input sequence is sampled and refined over K rounds of N rollouts
(best-rollout incumbent assignment by default, MPPI weighting as an option);
the other player plays the bang-bang policy induced by the current value
network's gradient, evaluated at a fixed time-to-go to stay in distribution
with curriculum training. Rollout cost is the running min of the boundary
function (max for the follow game), bootstrapped with the network value when
the rollout ends before time-to-go runs out.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ContractError, EstimationError
from .nets import MpcBatch, ValueNetwork, bang_bang_inputs
from .problems import GameProblem, clamp_inputs, euler_step, flow_terms

Array = np.ndarray
log = logging.getLogger(__name__)

MAGIC = b"MPCD"
FORMAT_VERSION = 1

PERSPECTIVES = ("control", "disturbance")
OBJECTIVES = ("avoid", "follow")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the sampling-based estimator (Alg. 1 inputs)."""

    dataset_size: int = 1000
    horizon_steps: int = 10
    dt: float = 0.02
    rollouts: int = 100
    refinements: int = 10
    control_noise: tuple = (0.0, None)  # (mean, sigma); sigma None -> box half-width
    disturbance_noise: tuple = (0.0, None)
    refinement_horizon: float = 0.2
    sigma_decay: float = 1.0
    incumbent: str = "best"  # "best" | "mppi"
    mppi_temperature: float = 1.0

    def __post_init__(self):
        if self.rollouts < 1 or self.refinements < 1 or self.horizon_steps < 1:
            raise ConfigError("sampler needs N >= 1, K >= 1, H >= 1")
        if self.dt <= 0:
            raise ConfigError("sampler dt must be positive")
        if not 0 < self.sigma_decay <= 1:
            raise ConfigError("sigma_decay must be in (0, 1]")
        if self.incumbent not in ("best", "mppi"):
            raise ConfigError(f"unknown incumbent mode '{self.incumbent}'")

    def noise_for(self, problem: GameProblem, perspective: str) -> tuple[Array, Array]:
        box = (
            problem.dynamics.control_box
            if perspective == "control"
            else problem.dynamics.disturbance_box
        )
        mu_cfg, sigma_cfg = self.control_noise if perspective == "control" else self.disturbance_noise
        mu = np.broadcast_to(np.asarray(mu_cfg, dtype=float), (box.dim,)).copy()
        if sigma_cfg is None:
            sigma = box.half_width.copy()
        else:
            sigma = np.broadcast_to(np.asarray(sigma_cfg, dtype=float), (box.dim,)).copy()
        return mu, sigma


@dataclass(frozen=True)
class MpcSample:
    x: Array
    tau: float
    v_hat: float


@dataclass(frozen=True, eq=False)
class MpcDataset:
    """Value estimates from one sampling perspective."""

    problem_name: str
    perspective: str
    x: Array
    tau: Array
    v_hat: Array
    source_checkpoint: str
    config: dict
    n_failed_points: int = 0
    n_discarded_rollouts: int = 0

    def __post_init__(self):
        if self.perspective not in PERSPECTIVES:
            raise ConfigError(f"unknown perspective '{self.perspective}'")
        if not (len(self.x) == len(self.tau) == len(self.v_hat)):
            raise ContractError("dataset arrays must share a length")
        if len(self.v_hat) and not np.all(np.isfinite(self.v_hat)):
            raise ContractError("v_hat entries must be finite")

    def __len__(self) -> int:
        return len(self.v_hat)

    def samples(self):
        for i in range(len(self)):
            yield MpcSample(self.x[i], float(self.tau[i]), float(self.v_hat[i]))

    def batch(self, indices=None) -> MpcBatch:
        if indices is None:
            return MpcBatch(self.x, self.tau, self.v_hat)
        return MpcBatch(self.x[indices], self.tau[indices], self.v_hat[indices])


def checkpoint_id(net: ValueNetwork) -> str:
    digest = hashlib.sha1(net.parameters_vector().astype("<f8").tobytes()).hexdigest()[:12]
    return f"{net.problem_name or 'net'}-step{net.train_step}-{digest}"


def opponent_from_gradient(net: ValueNetwork, problem: GameProblem, x, tau, role: str) -> Array:
    """Bang-bang input of the gradient-driven player at fixed time-to-go tau.

    role "control": u* = argmax grad.g(x)u; role "disturbance": d* = argmin grad.w(x)d.
    """
    if role not in PERSPECTIVES:
        raise ConfigError(f"unknown role '{role}'")
    x = np.asarray(x, dtype=float)
    _, _, grad_x = net.eval_with_gradient(x, tau)
    f, g, w = flow_terms(problem.dynamics, x)
    _, _, u_star, d_star = bang_bang_inputs(grad_x, g, w, problem)
    return u_star if role == "control" else d_star


def _rollout_costs(
    problem: GameProblem,
    net: ValueNetwork,
    x0: Array,
    taus: Array,
    sequences: Array,
    perspective: str,
    dt: float,
    grad_taus: Array,
    objective: str = "avoid",
    record_trajectory: bool = False,
):
    """Roll B joint trajectories; the sampled player follows sequences
    (B, H, m), the opponent plays the gradient policy. Returns (costs (B,),
    valid mask (B,), trajectory (B, H+1, n) or None).

    Rows whose time-to-go is exhausted before H steps freeze early; duplicate
    boundary values from frozen rows cannot change a running min/max.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    taus = np.broadcast_to(np.asarray(taus, dtype=float), (x0.shape[0],))
    grad_taus = np.broadcast_to(np.asarray(grad_taus, dtype=float), (x0.shape[0],))
    b, h_max = sequences.shape[0], sequences.shape[1]
    if x0.shape[0] != b:
        raise ContractError("sequences and states disagree on batch size")
    combine = np.fmin if objective == "avoid" else np.fmax
    steps_alive = np.minimum(h_max, np.floor(taus / dt + 1e-9).astype(int))

    x = x0.copy()
    cost = problem.boundary(x)
    valid = np.isfinite(x).all(axis=1)
    traj = [x.copy()] if record_trajectory else None
    opponent_role = "disturbance" if perspective == "control" else "control"
    for h in range(h_max):
        active = (h < steps_alive) & valid
        if not np.any(active):
            if record_trajectory:
                traj.append(x.copy())
            continue
        opp = opponent_from_gradient(net, problem, x, grad_taus, opponent_role)
        own = sequences[:, h, :]
        u, d = (own, opp) if perspective == "control" else (opp, own)
        stepped = euler_step(problem.dynamics, x, u, d, dt)
        x = np.where(active[:, None], stepped, x)
        finite = np.isfinite(x).all(axis=1)
        newly_bad = active & ~finite
        valid &= finite | ~active
        x = np.where(finite[:, None], x, 0.0)  # keep the array clean for later math
        if np.any(newly_bad):
            valid[newly_bad] = False
        ell = problem.boundary(x)
        cost = np.where(active & valid, combine(cost, ell), cost)
        if record_trajectory:
            traj.append(x.copy())

    tau_rem = taus - steps_alive * dt
    needs_bootstrap = tau_rem > 1e-9
    # A rollout that left the (advisory) state box has escaped the arena; the
    # network's value there is a clamped-edge extrapolation, and bootstrapping
    # with it feeds the net's own edge error back into the labels.
    angular = problem.dynamics.angular_dims
    checked = [i for i in range(problem.state_dim) if i not in angular]
    lo = problem.state_bounds[checked, 0]
    hi = problem.state_bounds[checked, 1]
    in_box = np.all((x[:, checked] >= lo - 1e-9) & (x[:, checked] <= hi + 1e-9), axis=1)
    needs_bootstrap &= in_box
    if np.any(needs_bootstrap):
        togo = net.value(x, np.maximum(tau_rem, 0.0))
        togo = np.atleast_1d(togo)
        cost = np.where(needs_bootstrap & valid, combine(cost, togo), cost)
    return cost, valid, (np.stack(traj, axis=1) if record_trajectory else None)


def rollout_cost(
    problem: GameProblem,
    net: ValueNetwork,
    x0,
    tau0: float,
    input_sequence,
    perspective: str,
    dt: float | None = None,
    grad_tau: float | None = None,
    objective: str = "avoid",
):
    """Cost and trajectory of a single sampled-player rollout (running min of
    the boundary values incl. the start state, bootstrapped with the network
    value if time-to-go outlasts the sequence)."""
    seq = np.asarray(input_sequence, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    dt = 0.02 if dt is None else dt
    costs, valid, traj = _rollout_costs(
        problem,
        net,
        np.atleast_2d(np.asarray(x0, dtype=float)),
        np.array([tau0]),
        seq[None, :, :],
        perspective,
        dt,
        np.array([tau0 if grad_tau is None else grad_tau]),
        objective,
        record_trajectory=True,
    )
    if not valid[0]:
        raise EstimationError("rollout diverged to a non-finite state")
    return float(costs[0]), traj[0]


def _estimate_chunk(
    problem: GameProblem,
    net: ValueNetwork,
    x0s: Array,
    taus: Array,
    rngs: list,
    config: SamplerConfig,
    perspective: str,
    grad_tau: float | None,
    objective: str,
    return_trace: bool = False,
):
    """Refine value estimates for a chunk of points in lockstep.

    Incumbent updates are applied in rollout-index order after each round,
    matching a sequential scan of that round's rollouts.
    """
    p = x0s.shape[0]
    n, k, h = config.rollouts, config.refinements, config.horizon_steps
    box = (
        problem.dynamics.control_box
        if perspective == "control"
        else problem.dynamics.disturbance_box
    )
    mu0, sigma0 = config.noise_for(problem, perspective)
    mu = np.broadcast_to(mu0, (p, h, box.dim)).copy()
    worst = -np.inf if perspective == "control" else np.inf
    better = np.greater if perspective == "control" else np.less
    j_star = np.full(p, worst)
    have = np.zeros(p, dtype=bool)
    # Opponent gradients are evaluated at the trainer's fixed time when given,
    # otherwise at each point's own time-to-go.
    grad_taus = taus if grad_tau is None else np.full(p, float(grad_tau))
    discarded = 0
    traces = [[] for _ in range(p)] if return_trace else None

    for round_idx in range(k):
        sigma_k = sigma0 * (config.sigma_decay**round_idx)
        noise = np.stack([rngs[i].normal(size=(n, h, box.dim)) for i in range(p)])
        seqs = clamp_inputs(box, mu[:, None, :, :] + sigma_k * noise)
        flat_seqs = seqs.reshape(p * n, h, box.dim)
        flat_x0 = np.repeat(x0s, n, axis=0)
        flat_tau = np.repeat(taus, n)
        costs, valid, _ = _rollout_costs(
            problem, net, flat_x0, flat_tau, flat_seqs, perspective, config.dt,
            np.repeat(grad_taus, n), objective,
        )
        costs = costs.reshape(p, n)
        valid = valid.reshape(p, n)
        discarded += int(np.count_nonzero(~valid))
        for i in range(p):
            row_costs = costs[i]
            row_valid = valid[i]
            if return_trace:
                run = j_star[i]
                for jj in range(n):
                    if row_valid[jj] and better(row_costs[jj], run):
                        run = row_costs[jj]
                    traces[i].append(run)
            if not np.any(row_valid):
                continue
            masked = np.where(row_valid, row_costs, worst)
            best_idx = int(np.argmax(masked) if perspective == "control" else np.argmin(masked))
            if better(masked[best_idx], j_star[i]):
                j_star[i] = masked[best_idx]
                if config.incumbent == "best":
                    mu[i] = seqs[i, best_idx]
                have[i] = True
            if config.incumbent == "mppi":
                scale = 1.0 if perspective == "control" else -1.0
                logits = scale * np.where(row_valid, row_costs, -np.inf) / config.mppi_temperature
                logits -= logits.max()
                weights = np.exp(logits)
                weights /= weights.sum()
                mu[i] = np.einsum("r,rhm->hm", weights, seqs[i])
    return j_star, have, discarded, traces, mu


def estimate_value(
    problem: GameProblem,
    net: ValueNetwork,
    x0,
    tau0: float,
    config: SamplerConfig,
    perspective: str,
    seed: int = 0,
    grad_tau: float | None = None,
    objective: str = "avoid",
    return_trace: bool = False,
):
    """Refined sampling estimate of the game value at one state/time."""
    if perspective not in PERSPECTIVES:
        raise ConfigError(f"unknown perspective '{perspective}'")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    j_star, have, _, traces, _ = _estimate_chunk(
        problem,
        net,
        np.atleast_2d(np.asarray(x0, dtype=float)),
        np.array([float(tau0)]),
        [rng],
        config,
        perspective,
        grad_tau,
        objective,
        return_trace=return_trace,
    )
    if not have[0]:
        raise EstimationError("every rollout was discarded; no estimate available")
    if return_trace:
        return float(j_star[0]), np.array(traces[0])
    return float(j_star[0])


def collect_dataset(
    problem: GameProblem,
    net: ValueNetwork,
    config: SamplerConfig,
    perspective: str,
    time_window: tuple[float, float],
    seed: int = 0,
    grad_tau: float | None = None,
    objective: str = "avoid",
    chunk_size: int = 64,
) -> MpcDataset:
    """Label uniformly sampled states/times with refined value estimates.

    Each point gets its own rng derived from (seed, point index), so results
    do not depend on chunking and failed points are skipped deterministically.
    """
    if perspective not in PERSPECTIVES:
        raise ConfigError(f"unknown perspective '{perspective}'")
    tau_lo, tau_hi = float(time_window[0]), float(time_window[1])
    if not (0.0 <= tau_lo <= tau_hi <= problem.horizon + 1e-9):
        raise ConfigError(f"time window {time_window} outside [0, {problem.horizon}]")

    m = config.dataset_size
    xs = np.empty((m, problem.state_dim))
    taus = np.empty(m)
    rngs = []
    for j in range(m):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), j)))
        xs[j] = problem.sample_states(rng, ())
        taus[j] = rng.uniform(tau_lo, tau_hi)
        rngs.append(rng)

    v_hats = np.empty(m)
    ok = np.zeros(m, dtype=bool)
    discarded = 0
    for start in range(0, m, chunk_size):
        stop = min(start + chunk_size, m)
        j_star, have, disc, _, _ = _estimate_chunk(
            problem,
            net,
            xs[start:stop],
            taus[start:stop],
            rngs[start:stop],
            config,
            perspective,
            grad_tau,
            objective,
        )
        v_hats[start:stop] = j_star
        ok[start:stop] = have
        discarded += disc
    n_failed = int(np.count_nonzero(~ok))
    if n_failed:
        log.warning("mpc collection skipped %d/%d points (all rollouts discarded)", n_failed, m)
    cfg = asdict(config)
    return MpcDataset(
        problem_name=problem.name,
        perspective=perspective,
        x=xs[ok],
        tau=taus[ok],
        v_hat=v_hats[ok],
        source_checkpoint=checkpoint_id(net),
        config=cfg,
        n_failed_points=n_failed,
        n_discarded_rollouts=discarded,
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def save_dataset(dataset: MpcDataset, path: str) -> None:
    header = {
        "problem": dataset.problem_name,
        "perspective": dataset.perspective,
        "source_checkpoint": dataset.source_checkpoint,
        "config": dataset.config,
        "count": len(dataset),
        "state_dim": int(dataset.x.shape[1]) if len(dataset) else 0,
        "n_failed_points": dataset.n_failed_points,
        "n_discarded_rollouts": dataset.n_discarded_rollouts,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    rows = np.concatenate([dataset.x, dataset.tau[:, None], dataset.v_hat[:, None]], axis=1)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(rows.astype("<f4").tobytes())


def load_dataset(path: str) -> MpcDataset:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path} is not an MPC dataset file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported dataset version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        count, state_dim = header["count"], header["state_dim"]
        rows = np.frombuffer(fh.read(4 * count * (state_dim + 2)), dtype="<f4").astype(float)
    rows = rows.reshape(count, state_dim + 2)
    cfg = dict(header["config"])
    for key in ("control_noise", "disturbance_noise"):
        if key in cfg and isinstance(cfg[key], list):
            cfg[key] = tuple(cfg[key])
    return MpcDataset(
        problem_name=header["problem"],
        perspective=header["perspective"],
        x=rows[:, :state_dim],
        tau=rows[:, state_dim],
        v_hat=rows[:, state_dim + 1],
        source_checkpoint=header["source_checkpoint"],
        config=cfg,
        n_failed_points=header["n_failed_points"],
        n_discarded_rollouts=header["n_discarded_rollouts"],
    )
