"""Heavy artifacts for the acceptance suite, built once and cached on disk.

Every builder is keyed by a hash of its full configuration, so editing a
config invalidates the cache entry. Override the cache root with
HJGAMES_ACCEPTANCE_CACHE.
"""

import dataclasses
import hashlib
import json
import os
from pathlib import Path

from hjgames.grids import grid_spec_for, load_grid, save_grid, solve_hji_vi
from hjgames.mpc import SamplerConfig
from hjgames.nets import ValueNetwork, load_checkpoint, save_checkpoint
from hjgames.policies import train_follow_value
from hjgames.problems import get_problem
from hjgames.training import TrainConfig, train

CACHE_ROOT = Path(os.environ.get("HJGAMES_ACCEPTANCE_CACHE", Path(__file__).parent.parent / ".cache" / "acceptance"))


def _key(payload) -> str:
    return hashlib.sha1(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:10]


def _cache_path(name: str, payload, suffix: str) -> Path:
    CACHE_ROOT.mkdir(parents=True, exist_ok=True)
    return CACHE_ROOT / f"{name}_{_key(payload)}{suffix}"


def cached_grid(name: str, problem_name: str, counts, store_slices: int = 65):
    problem = get_problem(problem_name)
    payload = {"problem": problem_name, "counts": list(counts), "store": store_slices, "fmt": 1}
    path = _cache_path(name, payload, ".vgrd")
    if path.exists():
        return load_grid(str(path))
    spec = grid_spec_for(problem, counts)
    grid = solve_hji_vi(problem, spec, store_slices=store_slices)
    save_grid(grid, str(path))
    return grid


def cached_training(name: str, problem_name: str, arch: dict, config: TrainConfig, objective: str = "avoid"):
    problem = get_problem(problem_name)
    payload = {
        "problem": problem_name,
        "arch": arch,
        "config": dataclasses.asdict(config),
        "objective": objective,
        "fmt": 1,
    }
    path = _cache_path(name, payload, ".vnet")
    if path.exists():
        return load_checkpoint(str(path))
    net = ValueNetwork.initialize(problem, seed=config.seed, **arch)
    runner = train_follow_value if objective == "follow" else train
    result = runner(problem, None, config, net=net)
    save_checkpoint(result.net, str(path))
    return result.net


REL_ARCH = {"width": 128, "hidden_layers": 3, "omega0": 10.0}
SMALL_ARCH = {"width": 64, "hidden_layers": 2, "omega0": 10.0}

REL_SAMPLER = SamplerConfig(
    dataset_size=1500, horizon_steps=10, dt=0.02, rollouts=100, refinements=10,
    refinement_horizon=0.2,
)

MADR_REL_CONFIG = TrainConfig(
    total_epochs=50000,
    learning_rate=3e-4,
    curriculum_fraction=0.5,
    warmup_fraction=0.3,
    refresh_interval=5000,
    pde_batch=1024,
    boundary_batch=256,
    mpc_batch=256,
    lambda_ft=100.0,
    mpc=REL_SAMPLER,
    seed=0,
    log_interval=2500,
)

VANILLA_REL_CONFIG = dataclasses.replace(MADR_REL_CONFIG, mpc_supervision=False)

FOLLOW_REL_CONFIG = dataclasses.replace(
    MADR_REL_CONFIG,
    total_epochs=30000,
    lambda_ft=10.0,
    refresh_interval=5000,
    mpc=dataclasses.replace(REL_SAMPLER, dataset_size=1000, rollouts=50, refinements=6),
)

MADR_CYLINDER_CONFIG = dataclasses.replace(
    MADR_REL_CONFIG,
    total_epochs=40000,
    refresh_interval=4000,
    mpc=dataclasses.replace(REL_SAMPLER, dataset_size=1200),
)

INTEGRATOR_CONFIG = TrainConfig(
    total_epochs=20000,
    learning_rate=3e-4,
    curriculum_fraction=0.5,
    warmup_fraction=0.3,
    refresh_interval=2000,
    pde_batch=512,
    boundary_batch=256,
    mpc_batch=128,
    mpc=SamplerConfig(dataset_size=400, horizon_steps=10, dt=0.02, rollouts=50, refinements=5),
    seed=0,
    log_interval=2500,
)


def rel_grid_base():
    return cached_grid("rel_base", "dubins3d_rel", [101, 101, 60])


def rel_grid_oracle():
    """The refined DP oracle used for set-recovery comparisons."""
    return cached_grid("rel_oracle", "dubins3d_rel", [151, 151, 90])


def integrator_net():
    return cached_training("integrator_madr", "integrator1d", SMALL_ARCH, INTEGRATOR_CONFIG)


def madr_rel_net():
    return cached_training("rel_madr", "dubins3d_rel", REL_ARCH, MADR_REL_CONFIG)


def vanilla_rel_net():
    return cached_training("rel_vanilla", "dubins3d_rel", REL_ARCH, VANILLA_REL_CONFIG)


def follow_rel_net():
    return cached_training("rel_follow", "dubins3d_rel", REL_ARCH, FOLLOW_REL_CONFIG, objective="follow")


def madr_cylinder_net():
    return cached_training("cyl_madr", "dubins3d_cylinder", REL_ARCH, MADR_CYLINDER_CONFIG)
