"""Live game service for the browser arena.

One session per websocket connection: the human drives one player through
held inputs (box center until the first message), the machine policy drives
the other, and the server advances the simulation at a fixed tick period,
emitting JSON state snapshots. A lockstep mode advances exactly one tick per
input message instead, which makes record/replay comparisons exact.

Wire protocol (JSON text frames):
  server -> client: {"type": "hello", ...}   once, on connect
                    {"type": "state", "tick": int, "t": float, "state": [...],
                     "players": {...}, "ell": float, "value": float | null,
                     "outcome": {...} | null}
                    {"type": "error", "message": str}
  client -> server: {"type": "input", "channels": [...]}
                    {"type": "reset"}
                    {"type": "role", "value": "evader" | "pursuer"}
"""

from __future__ import annotations

import asyncio
import itertools
import json
import os

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .arena import Outcome
from .errors import ConfigError
from .policies import ExternalPolicy, Policy
from .problems import GameProblem, clamp_inputs, euler_step, eval_boundary

_session_counter = itertools.count(1)


def sample_start_state(problem: GameProblem, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    """Uniform in-bounds state with a safety margin on the boundary value."""
    for _ in range(10000):
        x = problem.sample_states(rng, ())
        if float(eval_boundary(problem, x)) > margin:
            return x
    raise ConfigError("could not sample a start state clear of the failure set")


class Session:
    """Single game session; stepping mirrors the offline simulator exactly."""

    def __init__(
        self,
        problem: GameProblem,
        machine_policy: Policy,
        human_role: str = "evader",
        dt: float = 0.02,
        seed: int = 0,
    ):
        if human_role not in ("evader", "pursuer"):
            raise ConfigError(f"unknown role '{human_role}'")
        self.session_id = next(_session_counter)
        self.problem = problem
        self.machine = machine_policy
        self.human_role = human_role
        self.dt = float(dt)
        self.seed = int(seed)
        self.tick = 0
        self.outcome: Outcome | None = None
        self.human = ExternalPolicy(human_role, problem)
        self._resets = 0
        self.x = sample_start_state(
            problem, np.random.default_rng(np.random.SeedSequence((self.seed, self._resets)))
        )
        self._check_initial()

    def _check_initial(self) -> None:
        if float(eval_boundary(self.problem, self.x)) <= 0.0:
            self.outcome = Outcome("captured", 0.0)

    @property
    def t(self) -> float:
        return self.tick * self.dt

    def set_role(self, role: str) -> None:
        if role not in ("evader", "pursuer"):
            raise ConfigError(f"unknown role '{role}'")
        if role != self.human_role:
            if self.machine.role == role:
                raise ConfigError(f"machine policy also plays {role}")
            self.human_role = role
            self.human = ExternalPolicy(role, self.problem)
        self.reset()

    def set_input(self, channels) -> None:
        self.human.set_input(np.asarray(channels, dtype=float))

    def reset(self) -> None:
        self._resets += 1
        self.tick = 0
        self.outcome = None
        self.x = sample_start_state(
            self.problem, np.random.default_rng(np.random.SeedSequence((self.seed, self._resets)))
        )
        self._check_initial()

    def step(self) -> None:
        """Advance one tick (no-op once an outcome is set, until reset).

        Sessions are open-ended, so policies are queried at the full trained
        horizon (receding use of the finite-horizon value).
        """
        if self.outcome is not None:
            return
        problem = self.problem
        tau = problem.horizon
        evader = self.human if self.human_role == "evader" else self.machine
        pursuer = self.human if self.human_role == "pursuer" else self.machine
        try:
            u = clamp_inputs(problem.dynamics.control_box, np.asarray(evader.action(self.x, tau), dtype=float))
            d = clamp_inputs(problem.dynamics.disturbance_box, np.asarray(pursuer.action(self.x, tau), dtype=float))
        except Exception as exc:  # noqa: BLE001 - surfaced as a session outcome
            self.outcome = Outcome("aborted", self.t, detail=f"policy failure: {exc}")
            return
        self.x = euler_step(problem.dynamics, self.x, u, d, self.dt)
        self.tick += 1
        ell = float(eval_boundary(problem, self.x))
        if ell <= 0.0:
            self.outcome = Outcome("captured", self.t)
            return
        oob_player = problem.out_of_bounds_player(self.x)
        if oob_player is not None:
            self.outcome = Outcome("out_of_bounds", self.t, player=oob_player)

    def machine_value(self) -> float | None:
        """Live safety-margin readout from the machine's value source."""
        policy = getattr(self.machine, "pursuit", self.machine)  # follow filter -> pursuit value
        source = getattr(policy, "source", None)
        if source is None:
            return None
        x_eval = self.x
        if getattr(policy, "state_map", None) is not None:
            x_eval = policy.state_map(self.x)
        try:
            return float(source.value(x_eval, source.horizon))
        except Exception:  # noqa: BLE001 - display-only overlay
            return None

    def snapshot(self) -> dict:
        players = {}
        for layout in self.problem.players:
            players[layout.name] = {
                "position": [float(self.x[i]) for i in layout.position_dims] if layout.position_dims else None,
                "heading": float(self.x[layout.heading_dim]) if layout.heading_dim is not None else None,
            }
        outcome = None
        if self.outcome is not None:
            outcome = {
                "kind": self.outcome.kind,
                "time": self.outcome.time,
                "player": self.outcome.player,
                "detail": self.outcome.detail,
            }
        return {
            "type": "state",
            "tick": self.tick,
            "t": self.t,
            "state": [float(v) for v in self.x],
            "players": players,
            "ell": float(eval_boundary(self.problem, self.x)),
            "value": self.machine_value(),
            "outcome": outcome,
        }

    def hello(self) -> dict:
        return {
            "type": "hello",
            "problem": self.problem.name,
            "human_role": self.human_role,
            "dt": self.dt,
            "horizon": self.problem.horizon,
            "bounds": self.problem.state_bounds.tolist(),
            "players": {
                layout.name: {
                    "state_dims": list(layout.state_dims),
                    "position_dims": list(layout.position_dims) if layout.position_dims else None,
                    "heading_dim": layout.heading_dim,
                }
                for layout in self.problem.players
            },
            "input_channels": {
                "evader": {
                    "lower": self.problem.dynamics.control_box.lower.tolist(),
                    "upper": self.problem.dynamics.control_box.upper.tolist(),
                },
                "pursuer": {
                    "lower": self.problem.dynamics.disturbance_box.lower.tolist(),
                    "upper": self.problem.dynamics.disturbance_box.upper.tolist(),
                },
            },
        }


def build_app(
    problem: GameProblem,
    machine_policy_factory,
    default_role: str = "evader",
    dt: float = 0.02,
    static_dir: str | None = None,
    seed: int = 0,
):
    """FastAPI app serving the arena assets and the session websocket.

    machine_policy_factory(role) must return a policy for the machine side
    when the human plays `role`.
    """
    app = FastAPI(title="hjgames arena")

    @app.websocket("/ws")
    async def ws_endpoint(socket: WebSocket):
        params = socket.query_params
        role = params.get("role", default_role)
        lockstep = params.get("lockstep", "0") in ("1", "true")
        session_seed = int(params.get("seed", seed))
        try:
            machine = machine_policy_factory("pursuer" if role == "evader" else "evader")
            session = Session(problem, machine, human_role=role, dt=dt, seed=session_seed)
        except ConfigError as exc:
            await socket.close(code=4400, reason=str(exc))
            return
        await socket.accept()
        await socket.send_json(session.hello())
        await socket.send_json(session.snapshot())

        async def tick_loop():
            while True:
                await asyncio.sleep(session.dt)
                session.step()
                try:
                    await socket.send_json(session.snapshot())
                except Exception:  # noqa: BLE001 - connection gone
                    return

        ticker = None if lockstep else asyncio.create_task(tick_loop())
        try:
            while True:
                raw = await socket.receive_text()
                try:
                    msg = json.loads(raw)
                    kind = msg.get("type")
                    if kind == "input":
                        session.set_input(msg["channels"])
                        if lockstep:
                            session.step()
                            await socket.send_json(session.snapshot())
                    elif kind == "reset":
                        session.reset()
                        await socket.send_json(session.snapshot())
                    elif kind == "role":
                        session.set_role(msg["value"])
                        await socket.send_json(session.hello())
                        await socket.send_json(session.snapshot())
                    else:
                        raise ConfigError(f"unknown message type {kind!r}")
                except WebSocketDisconnect:
                    raise
                except Exception as exc:  # noqa: BLE001 - session preserved by contract
                    await socket.send_json({"type": "error", "message": str(exc)})
        except WebSocketDisconnect:
            pass
        finally:
            if ticker is not None:
                ticker.cancel()

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="arena")
    else:

        @app.get("/")
        async def index() -> HTMLResponse:
            return HTMLResponse(
                "<html><body><h1>hjgames arena</h1>"
                "<p>No web client build found. Point --static at the built "
                "frontend (frontend/dist) or connect to /ws directly.</p>"
                "</body></html>"
            )

    return app
