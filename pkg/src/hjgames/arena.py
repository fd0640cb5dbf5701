"""Episode simulation between policy pairs, matchup tables, and safe-rate
evaluation.

Inputs are applied simultaneously at every step (the continuous game's
information pattern at small dt). Policies receive the remaining episode
duration as time-to-go and clamp it to their own trained horizon, so long
episodes reuse the full-horizon value in receding fashion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .policies import Policy
from .problems import GameProblem, clamp_inputs, euler_step, eval_boundary

Array = np.ndarray

BOUNDARY_MODES = ("terminate", "clamp")


@dataclass(frozen=True)
class Outcome:
    kind: str  # captured | out_of_bounds | survived | aborted
    time: float | None = None
    player: str | None = None
    detail: str = ""


@dataclass(eq=False)
class RolloutRecord:
    """One simulated episode: step-indexed states, inputs and boundary values."""

    problem_name: str
    dt: float
    times: Array
    states: Array
    evader_inputs: Array
    pursuer_inputs: Array
    ell: Array
    outcome: Outcome

    @property
    def cost(self) -> float:
        """Running minimum of the boundary values (the episode objective)."""
        return float(np.min(self.ell))

    @property
    def capture_fraction(self) -> float:
        """Fraction of recorded steps spent in the failure set."""
        return float(np.mean(self.ell <= 0.0))

    def to_json_dict(self) -> dict:
        return {
            "problem": self.problem_name,
            "dt": self.dt,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "evader_inputs": self.evader_inputs.tolist(),
            "pursuer_inputs": self.pursuer_inputs.tolist(),
            "ell": self.ell.tolist(),
            "outcome": {
                "kind": self.outcome.kind,
                "time": self.outcome.time,
                "player": self.outcome.player,
                "detail": self.outcome.detail,
            },
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RolloutRecord":
        out = data["outcome"]
        return cls(
            problem_name=data["problem"],
            dt=float(data["dt"]),
            times=np.asarray(data["times"], dtype=float),
            states=np.asarray(data["states"], dtype=float),
            evader_inputs=np.asarray(data["evader_inputs"], dtype=float),
            pursuer_inputs=np.asarray(data["pursuer_inputs"], dtype=float),
            ell=np.asarray(data["ell"], dtype=float),
            outcome=Outcome(out["kind"], out["time"], out["player"], out.get("detail", "")),
        )


def save_rollout(record: RolloutRecord, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record.to_json_dict(), fh, sort_keys=True)


def load_rollout(path: str) -> RolloutRecord:
    with open(path, "r", encoding="utf-8") as fh:
        return RolloutRecord.from_json_dict(json.load(fh))


def rollout_table(record: RolloutRecord) -> str:
    """Step-per-row text export for plotting."""
    n = record.states.shape[1]
    mu = record.evader_inputs.shape[1] if record.evader_inputs.size else 0
    md = record.pursuer_inputs.shape[1] if record.pursuer_inputs.size else 0
    header = (
        ["t"]
        + [f"x{i}" for i in range(n)]
        + [f"u{i}" for i in range(mu)]
        + [f"d{i}" for i in range(md)]
        + ["ell"]
    )
    lines = ["\t".join(header)]
    for k in range(record.times.shape[0]):
        row = [f"{record.times[k]:.6f}"]
        row += [f"{v:.9g}" for v in record.states[k]]
        if k < record.evader_inputs.shape[0]:
            row += [f"{v:.9g}" for v in record.evader_inputs[k]]
            row += [f"{v:.9g}" for v in record.pursuer_inputs[k]]
        else:
            row += [""] * (mu + md)
        row.append(f"{record.ell[k]:.9g}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _clamp_to_arena(problem: GameProblem, x: Array) -> Array:
    out = np.array(x, copy=True)
    angular = problem.dynamics.angular_dims
    for i in range(problem.state_dim):
        if i in angular:
            continue
        out[..., i] = np.clip(out[..., i], problem.state_bounds[i, 0], problem.state_bounds[i, 1])
    return out


def simulate_episode(
    problem: GameProblem,
    evader: Policy,
    pursuer: Policy,
    x0,
    duration: float,
    dt: float = 0.02,
    boundary_mode: str = "terminate",
    stop_on_capture: bool = True,
    tau_mode: str = "remaining",
) -> RolloutRecord:
    """Sense-act loop at fixed dt with simultaneous input application.

    boundary_mode "terminate" ends the episode when a player leaves the arena
    (the leaving player is recorded); "clamp" slides along the walls instead,
    for long-horizon runs in a physically bounded arena. tau_mode "horizon"
    queries policies at the full trained horizon every step (open-ended
    session semantics) instead of the remaining episode duration.
    """
    if dt <= 0 or duration <= 0:
        raise ConfigError("duration and dt must be positive")
    if boundary_mode not in BOUNDARY_MODES:
        raise ConfigError(f"unknown boundary mode '{boundary_mode}'")
    x = np.asarray(x0, dtype=float).copy()
    n_steps = int(round(duration / dt))
    times = [0.0]
    states = [x.copy()]
    ell0 = float(eval_boundary(problem, x))
    ells = [ell0]
    e_inputs, p_inputs = [], []
    outcome: Outcome | None = None
    first_capture = 0.0 if ell0 <= 0.0 else None
    if first_capture is not None and stop_on_capture:
        outcome = Outcome("captured", 0.0)
        n_steps = 0

    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box
    for k in range(n_steps):
        t = k * dt
        tau = problem.horizon if tau_mode == "horizon" else duration - t
        try:
            u = clamp_inputs(ubox, np.asarray(evader.action(x, tau), dtype=float))
            d = clamp_inputs(dbox, np.asarray(pursuer.action(x, tau), dtype=float))
        except Exception as exc:  # noqa: BLE001 - diagnostic outcome by contract
            outcome = Outcome("aborted", t, detail=f"policy failure: {exc}")
            break
        x = euler_step(problem.dynamics, x, u, d, dt)
        if boundary_mode == "clamp":
            x = _clamp_to_arena(problem, x)
        t_next = (k + 1) * dt
        e_inputs.append(u)
        p_inputs.append(d)
        times.append(t_next)
        states.append(x.copy())
        ell = float(eval_boundary(problem, x))
        ells.append(ell)
        if ell <= 0.0 and first_capture is None:
            first_capture = t_next
            if stop_on_capture:
                outcome = Outcome("captured", t_next)
                break
        oob_player = problem.out_of_bounds_player(x) if boundary_mode == "terminate" else None
        if oob_player is not None:
            # an earlier capture still owns the outcome (min ell <= 0)
            if first_capture is not None:
                outcome = Outcome("captured", first_capture)
            else:
                outcome = Outcome("out_of_bounds", t_next, player=oob_player)
            break
    if outcome is None:
        if first_capture is not None:
            outcome = Outcome("captured", first_capture)
        else:
            outcome = Outcome("survived", times[-1])
    return RolloutRecord(
        problem_name=problem.name,
        dt=dt,
        times=np.asarray(times),
        states=np.asarray(states),
        evader_inputs=np.asarray(e_inputs).reshape(len(e_inputs), ubox.dim),
        pursuer_inputs=np.asarray(p_inputs).reshape(len(p_inputs), dbox.dim),
        ell=np.asarray(ells),
        outcome=outcome,
    )


@dataclass(frozen=True)
class BatchResult:
    min_ell: Array
    capture_time: Array  # nan when never captured
    oob: Array  # bool, episode ended by leaving the arena
    capture_steps: Array  # steps spent in the failure set
    total_steps: int

    @property
    def captured(self) -> Array:
        return np.isfinite(self.capture_time)

    @property
    def capture_fraction(self) -> Array:
        return self.capture_steps / max(1, self.total_steps + 1)


def simulate_batch(
    problem: GameProblem,
    evader: Policy,
    pursuer: Policy,
    x0s: Array,
    duration: float,
    dt: float = 0.02,
    boundary_mode: str = "terminate",
    stop_on_capture: bool = True,
) -> BatchResult:
    """Lockstep batched episodes (policies are queried on the whole batch)."""
    if boundary_mode not in BOUNDARY_MODES:
        raise ConfigError(f"unknown boundary mode '{boundary_mode}'")
    x = np.array(x0s, dtype=float, copy=True)
    b = x.shape[0]
    n_steps = int(round(duration / dt))
    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box
    ell = eval_boundary(problem, x)
    min_ell = ell.copy()
    capture_time = np.where(ell <= 0.0, 0.0, np.nan)
    capture_steps = (ell <= 0.0).astype(int)
    oob = np.zeros(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    if stop_on_capture:
        active &= ~(ell <= 0.0)

    angular = problem.dynamics.angular_dims
    checked = [i for i in range(problem.state_dim) if i not in angular]
    lo = problem.state_bounds[checked, 0]
    hi = problem.state_bounds[checked, 1]

    for k in range(n_steps):
        if not np.any(active):
            break
        t = k * dt
        tau = duration - t
        u = clamp_inputs(ubox, np.asarray(evader.action(x, tau), dtype=float))
        d = clamp_inputs(dbox, np.asarray(pursuer.action(x, tau), dtype=float))
        stepped = euler_step(problem.dynamics, x, u, d, dt)
        if boundary_mode == "clamp":
            stepped = _clamp_to_arena(problem, stepped)
        x = np.where(active[:, None], stepped, x)
        ell = eval_boundary(problem, x)
        min_ell = np.where(active, np.minimum(min_ell, ell), min_ell)
        hit = active & (ell <= 0.0)
        newly = hit & ~np.isfinite(capture_time)
        capture_time[newly] = (k + 1) * dt
        capture_steps += (hit).astype(int)
        if stop_on_capture:
            active &= ~hit
        if boundary_mode == "terminate":
            outside = ~np.all((x[:, checked] >= lo) & (x[:, checked] <= hi), axis=1)
            left = active & outside
            oob |= left
            active &= ~left
    return BatchResult(
        min_ell=min_ell,
        capture_time=capture_time,
        oob=oob,
        capture_steps=capture_steps,
        total_steps=n_steps,
    )


# --------------------------------------------------------------------------
# Matchups
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchupTable:
    evader_names: tuple
    pursuer_names: tuple
    capture_rate: Array  # percent
    mean_time_to_capture: Array  # seconds, nan when no captures
    episodes: int

    def cell(self, evader: str, pursuer: str) -> dict:
        i = self.evader_names.index(evader)
        j = self.pursuer_names.index(pursuer)
        return {
            "capture_rate": float(self.capture_rate[i, j]),
            "mean_time_to_capture": float(self.mean_time_to_capture[i, j]),
            "episodes": self.episodes,
        }

    def to_json_dict(self) -> dict:
        return {
            "evaders": list(self.evader_names),
            "pursuers": list(self.pursuer_names),
            "capture_rate_percent": self.capture_rate.tolist(),
            "mean_time_to_capture": [
                [None if not np.isfinite(v) else float(v) for v in row]
                for row in self.mean_time_to_capture
            ],
            "episodes": self.episodes,
        }

    def to_text(self) -> str:
        width = max([len(n) for n in self.evader_names + self.pursuer_names] + [8]) + 2
        head = "evader \\ pursuer".ljust(20) + "".join(n.rjust(width) for n in self.pursuer_names)
        lines = [head]
        for i, en in enumerate(self.evader_names):
            row = en.ljust(20)
            for j in range(len(self.pursuer_names)):
                row += f"{self.capture_rate[i, j]:.0f}%".rjust(width)
            lines.append(row)
        return "\n".join(lines) + "\n"


def safe_band_states(
    problem: GameProblem,
    value_fn,
    n: int,
    seed: int,
    band: tuple[float, float] = (0.0, 0.1),
    max_tries: int = 500,
    batch: int = 4096,
) -> Array:
    """Rejection-sample initial states whose full-horizon value lies in the band."""
    lo, hi = band
    if not lo < hi:
        raise ConfigError("empty safe band")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5AFE)))
    found = []
    total = 0
    for _ in range(max_tries):
        xs = problem.sample_states(rng, batch)
        vals = np.asarray(value_fn(xs))
        keep = xs[(vals > lo) & (vals < hi)]
        if len(keep):
            found.append(keep)
            total += len(keep)
        if total >= n:
            break
    if total < n:
        raise ConfigError(
            f"safe band {band} yielded only {total}/{n} states; is the band empty?"
        )
    return np.concatenate(found)[:n]


def matchup(
    problem: GameProblem,
    evaders: dict,
    pursuers: dict,
    init_states: Array,
    duration: float,
    dt: float = 0.02,
    boundary_mode: str = "terminate",
) -> MatchupTable:
    """Cross-product capture table over one shared set of initial states."""
    init_states = np.asarray(init_states, dtype=float)
    if init_states.ndim != 2 or init_states.shape[0] == 0:
        raise ConfigError("matchup needs a nonempty (episodes, state_dim) array")
    e_names = tuple(evaders)
    p_names = tuple(pursuers)
    rates = np.zeros((len(e_names), len(p_names)))
    mean_times = np.full((len(e_names), len(p_names)), np.nan)
    for i, en in enumerate(e_names):
        for j, pn in enumerate(p_names):
            result = simulate_batch(
                problem,
                evaders[en],
                pursuers[pn],
                init_states,
                duration,
                dt,
                boundary_mode=boundary_mode,
            )
            captured = result.captured
            rates[i, j] = 100.0 * float(np.mean(captured))
            if np.any(captured):
                mean_times[i, j] = float(np.mean(result.capture_time[captured]))
    return MatchupTable(
        evader_names=e_names,
        pursuer_names=p_names,
        capture_rate=rates,
        mean_time_to_capture=mean_times,
        episodes=init_states.shape[0],
    )


# --------------------------------------------------------------------------
# Safe rate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SafeRateReport:
    rate: float  # percent of predicted-safe states that stayed safe
    predicted: Array  # V(x0, T)
    actual: Array  # min ell along the adversarial rollout
    n_states: int

    @property
    def cost_gaps(self) -> Array:
        """actual - predicted; negative entries overestimated safety."""
        return self.actual - self.predicted

    def gap_mass_below(self, threshold: float) -> float:
        return float(np.mean(self.cost_gaps < threshold))

    def histogram(self, bins: int = 41, span: tuple[float, float] = (-0.5, 0.5)):
        counts, edges = np.histogram(self.cost_gaps, bins=bins, range=span)
        return counts, edges


def safe_rate(
    problem: GameProblem,
    net,
    n_states: int,
    adversary: Policy,
    seed: int = 0,
    dt: float = 0.02,
    duration: float | None = None,
    evader: Policy | None = None,
    boundary_mode: str = "terminate",
) -> SafeRateReport:
    """Roll predicted-safe states against an adversary and compare outcomes.

    States are sampled uniformly with V(x, T) > 0; the evader defaults to the
    network's own gradient policy; rate counts episodes whose running min of
    the boundary values stayed positive.
    """
    from .policies import GradientPolicy, NetValueSource

    horizon = duration if duration is not None else problem.horizon
    source = NetValueSource(net)
    state_map = None
    input_problem = None
    if evader is None:
        evader = GradientPolicy("evader", source, problem, state_map, input_problem)
    value_fn = lambda xs: net.value(xs, net.horizon)  # noqa: E731
    states = safe_band_states(
        problem, value_fn, n_states, seed, band=(0.0, np.inf)
    )
    predicted = np.asarray(net.value(states, net.horizon))
    result = simulate_batch(
        problem, evader, adversary, states, horizon, dt, boundary_mode=boundary_mode,
        stop_on_capture=False,
    )
    actual = result.min_ell
    rate = 100.0 * float(np.mean(actual > 0.0))
    return SafeRateReport(rate=rate, predicted=predicted, actual=actual, n_states=n_states)
