"""Curriculum training of the value network.

PDE-residual and boundary self-supervision run from the start over a
time-to-go window that widens linearly to the full horizon; after a warmup
fraction, sampling-MPC datasets from both player perspectives supervise the
value directly and are recollected with the current network at a fixed
cadence. One epoch is one gradient step on freshly sampled points.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, ContractError, NumericalError
from .grids import ValueGrid, compare_fields, evaluate_on_grid, window_mask
from .mpc import MpcDataset, SamplerConfig, collect_dataset
from .nets import (
    LossBatch,
    NetworkArch,
    ValueNetwork,
    loss_terms,
    save_checkpoint,
)
from .problems import GameProblem

Array = np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """Every trainer knob; unknown keys in config files are rejected."""

    total_epochs: int
    learning_rate: float = 2e-5
    curriculum_fraction: float = 0.5
    warmup_fraction: float = 0.3
    refresh_interval: int | None = None  # None -> 10% of total_epochs
    pde_batch: int = 1024
    boundary_batch: int = 256
    mpc_batch: int = 256
    lambda_pde: float = 1.0
    lambda_boundary: float | None = None  # None -> balanced against the PDE term once at start
    lambda_ft: float = 100.0
    mpc_supervision: bool = True  # False -> vanilla self-supervised baseline
    mpc: SamplerConfig = field(default_factory=lambda: SamplerConfig(dataset_size=1000))
    objective: str = "avoid"
    seed: int = 0
    checkpoint_interval: int | None = None
    log_interval: int = 250
    deterministic: bool = True

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be at least 1")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.curriculum_fraction <= 1:
            raise ConfigError("curriculum_fraction must lie in (0, 1]")
        if self.objective not in ("avoid", "follow"):
            raise ConfigError(f"unknown objective '{self.objective}'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        mpc_cfg = data.pop("mpc", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if mpc_cfg is not None:
            mpc_known = {f.name for f in dataclasses.fields(SamplerConfig)}
            extra = set(mpc_cfg) - mpc_known
            if extra:
                raise ConfigError(f"unknown mpc config keys: {sorted(extra)}")
            for key in ("control_noise", "disturbance_noise"):
                if key in mpc_cfg and isinstance(mpc_cfg[key], list):
                    mpc_cfg[key] = tuple(mpc_cfg[key])
            data["mpc"] = SamplerConfig(**mpc_cfg)
        return cls(**data)


@dataclass
class TrainState:
    """Mutable loop state, exposed for inspection and tests."""

    epoch: int = 0
    t_curr: float = 0.0
    lambda_boundary: float = 1.0
    datasets: dict = field(default_factory=dict)  # perspective -> MpcDataset
    dataset_epochs: dict = field(default_factory=dict)  # perspective -> collection epoch


@dataclass
class TrainResult:
    net: ValueNetwork
    metrics: list
    checkpoints: list
    state: TrainState


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def train(
    problem: GameProblem,
    arch: NetworkArch | None,
    config: TrainConfig,
    out_dir: str | None = None,
    net: ValueNetwork | None = None,
) -> TrainResult:
    """Run the full curriculum; returns the trained network and metrics log."""
    if config.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(config.seed)

    if net is None:
        net = ValueNetwork.initialize(problem, arch=arch, seed=config.seed)
    horizon = problem.horizon
    total = config.total_epochs
    curriculum_epochs = max(1, round(config.curriculum_fraction * total))
    warmup_epoch = max(1, round(config.warmup_fraction * total))
    refresh = config.refresh_interval or max(1, round(0.1 * total))
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xC011)))

    state = TrainState()
    metrics: list[dict] = []
    checkpoints: list[str] = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        metrics_fh = open(metrics_path, "w", encoding="utf-8")
    else:
        metrics_fh = None

    # Balance the boundary term against the PDE term once, on a probe batch
    # spanning the full horizon, so neither dominates at the start.
    if config.lambda_boundary is None:
        probe_x = problem.sample_states(rng, config.pde_batch)
        probe_tau = rng.uniform(0.0, horizon, size=config.pde_batch)
        probe_b = problem.sample_states(rng, max(config.boundary_batch, 2))
        terms = loss_terms(
            net,
            problem,
            LossBatch(pde_x=probe_x, pde_tau=probe_tau, boundary_x=probe_b),
            config.objective,
        )
        pde_mag = float(terms["pde"].detach())
        bdy_mag = float(terms["boundary"].detach())
        state.lambda_boundary = float(np.clip(pde_mag / max(bdy_mag, 1e-9), 1e-3, 1e3))
    else:
        state.lambda_boundary = float(config.lambda_boundary)

    optimizer = torch.optim.Adam(net.torch_parameters, lr=config.learning_rate)

    def collect_both(epoch: int, t_curr: float) -> None:
        h_steps = max(1, round(min(config.mpc.refinement_horizon, t_curr) / config.mpc.dt))
        sampler = dataclasses.replace(config.mpc, horizon_steps=h_steps)
        for k, perspective in enumerate(("control", "disturbance")):
            ds = collect_dataset(
                problem,
                net,
                sampler,
                perspective,
                time_window=(0.0, t_curr),
                seed=_derived_seed(config.seed, epoch, k),
                grad_tau=t_curr,
                objective=config.objective,
            )
            state.datasets[perspective] = ds
            state.dataset_epochs[perspective] = epoch

    for epoch in range(total):
        state.epoch = epoch
        t_curr = horizon * min(1.0, (epoch + 1) / curriculum_epochs)
        if t_curr < state.t_curr:
            raise ContractError("curriculum bound must be nondecreasing")
        state.t_curr = t_curr

        if config.mpc_supervision and config.mpc.dataset_size > 0 and epoch >= warmup_epoch:
            if not state.datasets or (epoch - warmup_epoch) % refresh == 0:
                collect_both(epoch, t_curr)

        pde_x = problem.sample_states(rng, config.pde_batch)
        pde_tau = rng.uniform(0.0, t_curr, size=config.pde_batch)
        boundary_x = problem.sample_states(rng, config.boundary_batch)
        mpc_batches = []
        for perspective in ("control", "disturbance"):
            ds = state.datasets.get(perspective)
            if ds is None or len(ds) == 0:
                continue
            idx = rng.integers(0, len(ds), size=min(config.mpc_batch, len(ds)))
            mpc_batches.append(ds.batch(idx))
        batch = LossBatch(
            pde_x=pde_x,
            pde_tau=pde_tau,
            boundary_x=boundary_x,
            mpc=tuple(mpc_batches),
            lambda_pde=config.lambda_pde,
            lambda_boundary=state.lambda_boundary,
            lambda_ft=config.lambda_ft,
        )
        terms = loss_terms(net, problem, batch, config.objective)
        weighted = {
            "loss_pde": config.lambda_pde * terms["pde"],
            "loss_boundary": state.lambda_boundary * terms["boundary"],
        }
        for k, perspective in enumerate(("control", "disturbance")):
            key = f"mpc_{k}"
            if key in terms:
                weighted[f"loss_mpc_{perspective}"] = config.lambda_ft * terms[key]
        loss = sum(weighted.values())
        if not torch.isfinite(loss):
            dump = {k: float(v.detach()) for k, v in weighted.items()}
            if out_dir:
                save_checkpoint(net, os.path.join(out_dir, "crash.vnet"))
            raise NumericalError(
                f"non-finite loss at epoch {epoch} (t_curr={t_curr:.4f}): {dump}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        net.train_step += 1

        if epoch % config.log_interval == 0 or epoch == total - 1:
            record = {"epoch": epoch, "t_curr": t_curr}
            components = {k: float(v.detach()) for k, v in weighted.items()}
            record.update(components)
            record["loss_total"] = sum(components.values())
            record["lambda_boundary"] = state.lambda_boundary
            record["datasets"] = {
                p: d.source_checkpoint for p, d in state.datasets.items()
            }
            metrics.append(record)
            if metrics_fh:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_fh.flush()

        if out_dir and config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
            path = os.path.join(out_dir, f"checkpoint_{epoch + 1:08d}.vnet")
            save_checkpoint(net, path)
            checkpoints.append(path)

    if out_dir:
        final_path = os.path.join(out_dir, "final.vnet")
        save_checkpoint(net, final_path)
        checkpoints.append(final_path)
        if metrics_fh:
            metrics_fh.close()
    return TrainResult(net=net, metrics=metrics, checkpoints=checkpoints, state=state)


def evaluate_checkpoint(
    net: ValueNetwork,
    grid: ValueGrid,
    window=None,
    level: float = 0.0,
) -> dict:
    """IOU/volume/value-gap report of a network against a grid ground truth
    at full time-to-go."""
    if net.problem_name and grid.problem_name and net.problem_name != grid.problem_name:
        raise ContractError(
            f"network is for '{net.problem_name}' but grid is for '{grid.problem_name}'"
        )
    horizon = grid.horizon
    field_values = evaluate_on_grid(lambda xs: net.value(xs, horizon), grid.spec)
    cmp = compare_fields(grid, field_values, level=level, window=window)
    mask = window_mask(grid.spec, window)
    gap = np.abs(field_values - grid.final_slice())[mask]
    return {
        "iou": cmp.iou,
        "vol_ref": cmp.vol_ref,
        "vol_cand": cmp.vol_cand,
        "max_gap": float(gap.max()),
        "mean_gap": float(gap.mean()),
        "window_nodes": cmp.window_nodes,
        "level": level,
    }
