"""Command-line entry point exposing all workflows.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import numpy as np

from .arena import matchup as run_matchup
from .arena import rollout_table, safe_band_states, save_rollout, simulate_episode
from .errors import ConfigError, NumericalError
from .grids import GridSpec, grid_spec_for, load_grid, save_grid, solve_hji_vi
from .mpc import SamplerConfig, collect_dataset, save_dataset
from .nets import NetworkArch, load_checkpoint, save_checkpoint
from .policies import GridValueSource, NetValueSource, make_policy, train_follow_value
from .problems import get_problem, get_state_reduction, load_problem
from .training import TrainConfig, evaluate_checkpoint, train

CONFIG_DIR_ENV = "HJGAMES_CONFIG_DIR"


def _resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    base = os.environ.get(CONFIG_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    raise ConfigError(f"config file '{path}' not found (looked in . and ${CONFIG_DIR_ENV})")


def _read_json(path: str) -> dict:
    with open(_resolve_config_path(path), "r", encoding="utf-8") as fh:
        return json.load(fh)


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(2)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _parse_counts(text: str) -> list[int]:
    try:
        return [int(part) for part in text.replace("x", ",").split(",") if part]
    except ValueError:
        raise ConfigError(f"cannot parse grid point counts from '{text}'") from None


def _parse_arch(problem, text: str | None, omega0: float) -> NetworkArch | None:
    if text is None:
        return None
    try:
        layers, width = text.lower().split("x")
        return NetworkArch(problem.state_dim + 1, int(layers), int(width), omega0)
    except ValueError:
        raise ConfigError(f"cannot parse architecture '{text}' (expected LAYERSxWIDTH)") from None


def _parse_window(text: str | None):
    if text is None:
        return None
    window = json.loads(text)
    return [tuple(w) if w is not None else None for w in window]


@click.group()
def main() -> None:
    """Zero-sum differential game lab: grids, value learning, policies, arena."""


@main.command("solve-grid")
@click.option("--problem", "problem_name", required=True, help="registry name or config path")
@click.option("--grid", "grid_counts", required=True, help="node counts, e.g. 101,101,60")
@click.option("--dt", type=float, default=None, help="time step (default: stable step)")
@click.option("--store-slices", type=int, default=65, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_exit_codes
def solve_grid_cmd(problem_name, grid_counts, dt, store_slices, out_path):
    """Compute a ground-truth value grid by backward time-stepping."""
    problem = load_problem(problem_name)
    spec = grid_spec_for(problem, _parse_counts(grid_counts), dt=dt)
    click.echo(f"solving {problem.name} on {spec.shape} nodes, dt={spec.dt:g}")
    grid = solve_hji_vi(problem, spec, store_slices=store_slices)
    save_grid(grid, out_path)
    click.echo(f"wrote {out_path} ({grid.times.shape[0]} slices)")


@main.command("train")
@click.option("--problem", "problem_name", required=True)
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--arch", "arch_text", default=None, help="LAYERSxWIDTH, e.g. 3x128")
@click.option("--omega0", type=float, default=30.0, show_default=True)
@click.option("--objective", type=click.Choice(["avoid", "follow"]), default="avoid", show_default=True)
@click.option("--eval-grid", "eval_grid_path", default=None, type=click.Path())
@click.option("--eval-window", default=None, help="JSON per-dim window for the report")
@_exit_codes
def train_cmd(problem_name, config_path, out_dir, arch_text, omega0, objective, eval_grid_path, eval_window):
    """Train a value network (avoid game, or the follow game variant)."""
    problem = load_problem(problem_name)
    config = TrainConfig.from_dict(_read_json(config_path))
    arch = _parse_arch(problem, arch_text, omega0)
    runner = train_follow_value if objective == "follow" else train
    result = runner(problem, arch, config, out_dir=out_dir)
    click.echo(f"trained {result.net.train_step} steps; checkpoints: {result.checkpoints}")
    if eval_grid_path:
        grid = load_grid(eval_grid_path)
        report = evaluate_checkpoint(result.net, grid, window=_parse_window(eval_window))
        report_path = os.path.join(out_dir, "eval_report.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
        click.echo(f"eval: iou={report['iou']:.4f} vol={report['vol_cand']:.4f} (ref {report['vol_ref']:.4f})")


@main.command("collect-mpc")
@click.option("--problem", "problem_name", required=True)
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--perspective", type=click.Choice(["control", "disturbance"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(), help="SamplerConfig JSON")
@click.option("--tau-lo", type=float, default=0.0, show_default=True)
@click.option("--tau-hi", type=float, default=None, help="default: problem horizon")
@click.option("--grad-tau", type=float, default=None, help="fixed gradient-evaluation time")
@click.option("--seed", type=int, default=0, show_default=True)
@_exit_codes
def collect_mpc_cmd(problem_name, net_path, perspective, out_path, config_path, tau_lo, tau_hi, grad_tau, seed):
    """Label sampled states with refined rollout value estimates."""
    problem = load_problem(problem_name)
    net = load_checkpoint(net_path)
    cfg = SamplerConfig(**_read_json(config_path)) if config_path else SamplerConfig()
    window = (tau_lo, problem.horizon if tau_hi is None else tau_hi)
    dataset = collect_dataset(problem, net, cfg, perspective, window, seed=seed, grad_tau=grad_tau)
    save_dataset(dataset, out_path)
    click.echo(f"wrote {out_path}: {len(dataset)} samples ({dataset.n_failed_points} failed points)")


@main.command("eval-brt")
@click.option("--candidate", "candidate_path", required=True, type=click.Path(exists=True), help="checkpoint or grid")
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True), help="reference grid")
@click.option("--window", default=None, help="JSON per-dim window, e.g. [[-1.5,1.5],[-1.5,1.5],null]")
@click.option("--level", type=float, default=0.0, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@_exit_codes
def eval_brt_cmd(candidate_path, reference_path, window, level, out_path):
    """Compare an unsafe set against the grid ground truth (IOU, volumes)."""
    reference = load_grid(reference_path)
    window_spec = _parse_window(window)
    with open(candidate_path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"VNET":
        net = load_checkpoint(candidate_path)
        report = evaluate_checkpoint(net, reference, window=window_spec, level=level)
    elif magic == b"VGRD":
        from .grids import compare_fields, window_mask

        cand_grid = load_grid(candidate_path)
        if cand_grid.spec.shape != reference.spec.shape:
            raise ConfigError("candidate and reference grids must share a node layout")
        cmp = compare_fields(reference, cand_grid.final_slice(), level=level, window=window_spec)
        gap = np.abs(cand_grid.final_slice() - reference.final_slice())[window_mask(reference.spec, window_spec)]
        report = {
            "iou": cmp.iou,
            "vol_ref": cmp.vol_ref,
            "vol_cand": cmp.vol_cand,
            "max_gap": float(gap.max()),
            "mean_gap": float(gap.mean()),
            "window_nodes": cmp.window_nodes,
            "level": level,
        }
    else:
        raise ConfigError(f"{candidate_path} is neither a checkpoint nor a grid")
    click.echo(json.dumps(report, sort_keys=True, indent=2))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)


@main.command("matchup")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--export-rollouts", type=int, default=0, show_default=True, help="sample rollouts per cell")
@_exit_codes
def matchup_cmd(config_path, out_dir, export_rollouts):
    """Run a cross-product policy matchup from a JSON config.

    Config keys: problem, evaders, pursuers (name -> policy descriptor),
    episodes, duration, dt, seed, boundary_mode, band, band_source (grid path
    used to define the safe initial band).
    """
    cfg = _read_json(config_path)
    problem = load_problem(cfg.pop("problem"))
    episodes = int(cfg.pop("episodes", 100))
    duration = float(cfg.pop("duration", 2 * problem.horizon))
    dt = float(cfg.pop("dt", 0.02))
    seed = int(cfg.pop("seed", 0))
    boundary_mode = cfg.pop("boundary_mode", "terminate")
    band = tuple(cfg.pop("band", (0.0, 0.1)))
    band_source_path = cfg.pop("band_source")
    evader_descs = cfg.pop("evaders")
    pursuer_descs = cfg.pop("pursuers")
    if cfg:
        raise ConfigError(f"unknown matchup config keys: {sorted(cfg)}")

    band_grid = load_grid(band_source_path)
    source = GridValueSource(band_grid)
    if band_grid.problem_name != problem.name:
        reduced_name, state_map = get_state_reduction(problem.name)
        if band_grid.problem_name != reduced_name:
            raise ConfigError("band_source grid does not match the problem or its reduction")
        value_fn = lambda xs: source.value(state_map(xs), band_grid.horizon)  # noqa: E731
    else:
        value_fn = lambda xs: source.value(xs, band_grid.horizon)  # noqa: E731
    states = safe_band_states(problem, value_fn, episodes, seed=seed, band=band)

    evaders = {name: make_policy(desc, problem) for name, desc in evader_descs.items()}
    pursuers = {name: make_policy(desc, problem) for name, desc in pursuer_descs.items()}
    table = run_matchup(problem, evaders, pursuers, states, duration, dt, boundary_mode=boundary_mode)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "matchup.json"), "w", encoding="utf-8") as fh:
        json.dump(table.to_json_dict(), fh, sort_keys=True, indent=2)
    with open(os.path.join(out_dir, "matchup.txt"), "w", encoding="utf-8") as fh:
        fh.write(table.to_text())
    click.echo(table.to_text())

    if export_rollouts > 0:
        for en, ep in evaders.items():
            for pn, pp in pursuers.items():
                for k in range(min(export_rollouts, states.shape[0])):
                    rec = simulate_episode(problem, ep, pp, states[k], duration, dt, boundary_mode=boundary_mode)
                    stem = os.path.join(out_dir, f"rollout_{en}_vs_{pn}_{k:03d}")
                    save_rollout(rec, stem + ".json")
                    with open(stem + ".txt", "w", encoding="utf-8") as fh:
                        fh.write(rollout_table(rec))


@main.command("play-serve")
@click.option("--problem", "problem_name", required=True)
@click.option("--policy", "policy_desc", required=True, help="machine policy descriptor JSON (inline or @file)")
@click.option("--role", type=click.Choice(["evader", "pursuer"]), default="evader", show_default=True, help="human role")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--dt", type=float, default=0.02, show_default=True)
@click.option("--static", "static_dir", default=None, type=click.Path(), help="built web client directory")
@click.option("--seed", type=int, default=0, show_default=True)
@_exit_codes
def play_serve_cmd(problem_name, policy_desc, role, host, port, dt, static_dir, seed):
    """Serve the interactive arena (websocket + static client assets)."""
    import uvicorn

    from .server import build_app

    problem = load_problem(problem_name)
    if policy_desc.startswith("@"):
        desc = _read_json(policy_desc[1:])
    else:
        desc = json.loads(policy_desc)

    def factory(machine_role: str):
        machine_desc = dict(desc)
        machine_desc.setdefault("role", machine_role)
        machine_desc["role"] = machine_role
        return make_policy(machine_desc, problem)

    app = build_app(problem, factory, default_role=role, dt=dt, static_dir=static_dir, seed=seed)
    click.echo(f"serving {problem.name} on http://{host}:{port} (human: {role})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
