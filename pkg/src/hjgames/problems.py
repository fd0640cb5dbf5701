"""Control/disturbance-affine game models and the built-in problem registry.

All dynamics callbacks are vectorized over leading batch dimensions: a state
array of shape (..., n) yields drift (..., n), control matrix (..., n, m_u)
and disturbance matrix (..., n, m_d). Player I (control u) maximizes the
safety objective, Player II (disturbance d) minimizes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError

Array = np.ndarray

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angles into the canonical chart (-pi, pi]."""
    return theta - TWO_PI * np.ceil((np.asarray(theta, dtype=float) - math.pi) / TWO_PI)


@dataclass(frozen=True, eq=False)
class InputBox:
    """Axis-aligned box of admissible inputs for one player."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractError(f"input box bounds must be matching vectors, got {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ContractError("input box has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> Array:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> Array:
        return 0.5 * (self.upper - self.lower)

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size=()) -> Array:
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        return rng.uniform(self.lower, self.upper, size=shape + (self.dim,))


def clamp_inputs(box: InputBox, v) -> Array:
    """Per-coordinate clamp of v into the box (broadcasts over leading dims)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != box.dim:
        raise ContractError(f"input has {v.shape[-1]} channels, box has {box.dim}")
    return np.clip(v, box.lower, box.upper)


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Affine-in-inputs dynamics xdot = drift(x) + control_matrix(x) u + disturbance_matrix(x) d."""

    state_dim: int
    control_box: InputBox
    disturbance_box: InputBox
    drift: Callable[[Array], Array]
    control_matrix: Callable[[Array], Array]
    disturbance_matrix: Callable[[Array], Array]
    angular_dims: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "angular_dims", frozenset(int(i) for i in self.angular_dims))
        for i in self.angular_dims:
            if not 0 <= i < self.state_dim:
                raise ContractError(f"angular dim {i} outside state of dim {self.state_dim}")


def flow_terms(model: DynamicsModel, x) -> tuple[Array, Array, Array]:
    """Evaluate the affine decomposition (f, g, w) at x; full flow is f + g u + w d."""
    x = np.asarray(x, dtype=float)
    n = model.state_dim
    if x.shape[-1] != n:
        raise ContractError(f"state has dim {x.shape[-1]}, model expects {n}")
    batch = x.shape[:-1]
    f = np.asarray(model.drift(x), dtype=float)
    g = np.asarray(model.control_matrix(x), dtype=float)
    w = np.asarray(model.disturbance_matrix(x), dtype=float)
    if f.shape != batch + (n,):
        raise ContractError(f"drift shape {f.shape} != {batch + (n,)}")
    if g.shape != batch + (n, model.control_box.dim):
        raise ContractError(f"control matrix shape {g.shape} != {batch + (n, model.control_box.dim)}")
    if w.shape != batch + (n, model.disturbance_box.dim):
        raise ContractError(f"disturbance matrix shape {w.shape} != {batch + (n, model.disturbance_box.dim)}")
    return f, g, w


def euler_step(model: DynamicsModel, x, u, d, dt: float) -> Array:
    """One explicit Euler step; angular dims are wrapped to (-pi, pi] afterwards.

    Callers are expected to clamp u and d into their boxes beforehand.
    """
    if dt <= 0:
        raise ContractError(f"step size must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    f, g, w = flow_terms(model, x)
    if u.shape[-1] != model.control_box.dim:
        raise ContractError(f"control has {u.shape[-1]} channels, expected {model.control_box.dim}")
    if d.shape[-1] != model.disturbance_box.dim:
        raise ContractError(f"disturbance has {d.shape[-1]} channels, expected {model.disturbance_box.dim}")
    xdot = f + np.einsum("...ij,...j->...i", g, u) + np.einsum("...ij,...j->...i", w, d)
    out = x + xdot * dt
    for i in model.angular_dims:
        out[..., i] = wrap_angle(out[..., i])
    return out


@dataclass(frozen=True, eq=False)
class BoundaryFn:
    """Signed-distance style boundary function; failure set is {x : fn(x) <= 0}."""

    fn: Callable[[Array], Array]
    lipschitz_bound: float = 1.0

    def __call__(self, x) -> Array:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True, eq=False)
class PlayerLayout:
    """Which state dims belong to a player, for OOB attribution and rendering."""

    name: str
    state_dims: tuple
    position_dims: tuple | None = None
    heading_dim: int | None = None


@dataclass(frozen=True, eq=False)
class GameProblem:
    """One zero-sum avoid game: dynamics, boundary function, horizon, arena box."""

    name: str
    dynamics: DynamicsModel
    boundary: BoundaryFn
    horizon: float
    state_bounds: Array
    players: tuple = ()

    def __post_init__(self):
        bounds = np.asarray(self.state_bounds, dtype=float)
        if bounds.shape != (self.dynamics.state_dim, 2):
            raise ContractError(f"state bounds shape {bounds.shape} != ({self.dynamics.state_dim}, 2)")
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ContractError("state bounds must be nonempty in every dimension")
        if self.horizon <= 0:
            raise ContractError("horizon must be positive")
        object.__setattr__(self, "state_bounds", bounds)
        object.__setattr__(self, "players", tuple(self.players))

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def lower_bounds(self) -> Array:
        return self.state_bounds[:, 0]

    @property
    def upper_bounds(self) -> Array:
        return self.state_bounds[:, 1]

    def sample_states(self, rng: np.random.Generator, size) -> Array:
        shape = (size,) if np.isscalar(size) else tuple(size)
        return rng.uniform(self.lower_bounds, self.upper_bounds, size=shape + (self.state_dim,))

    def out_of_bounds_player(self, x) -> str | None:
        """Name of the first player whose non-angular dims left the arena, else None."""
        x = np.asarray(x, dtype=float)
        angular = self.dynamics.angular_dims
        checked = [i for i in range(self.state_dim) if i not in angular]
        if not self.players:
            for i in checked:
                if x[i] < self.state_bounds[i, 0] or x[i] > self.state_bounds[i, 1]:
                    return "state"
            return None
        for player in self.players:
            for i in player.state_dims:
                if i in angular:
                    continue
                if x[i] < self.state_bounds[i, 0] or x[i] > self.state_bounds[i, 1]:
                    return player.name
        return None

    def clamp_to_bounds(self, x) -> Array:
        return np.clip(np.asarray(x, dtype=float), self.lower_bounds, self.upper_bounds)


def eval_boundary(problem: GameProblem, x) -> Array:
    """Boundary value l(x); negative iff x is in the failure set."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != problem.state_dim:
        raise ContractError(f"state has dim {x.shape[-1]}, problem expects {problem.state_dim}")
    return problem.boundary(x)


# --------------------------------------------------------------------------
# Built-in problems
# --------------------------------------------------------------------------

DUBINS_SPEED = 0.5
DUBINS_TURN_MAX = 1.9
CAPTURE_RADIUS = 0.36
PILLAR_RADIUS = 0.5
WIND_MAX = 0.2


def _constant_matrix(template: Array) -> Callable[[Array], Array]:
    template = np.asarray(template, dtype=float)

    def matrix(x: Array) -> Array:
        return np.broadcast_to(template, x.shape[:-1] + template.shape)

    return matrix


def _make_dubins6d() -> GameProblem:
    v = DUBINS_SPEED

    def drift(x):
        f = np.zeros_like(x)
        f[..., 0] = v * np.cos(x[..., 2])
        f[..., 1] = v * np.sin(x[..., 2])
        f[..., 3] = v * np.cos(x[..., 5])
        f[..., 4] = v * np.sin(x[..., 5])
        return f

    g = np.zeros((6, 1))
    g[2, 0] = 1.0
    w = np.zeros((6, 1))
    w[5, 0] = 1.0

    def ell(x):
        return np.hypot(x[..., 0] - x[..., 3], x[..., 1] - x[..., 4]) - CAPTURE_RADIUS

    dyn = DynamicsModel(
        state_dim=6,
        control_box=InputBox([-DUBINS_TURN_MAX], [DUBINS_TURN_MAX]),
        disturbance_box=InputBox([-DUBINS_TURN_MAX], [DUBINS_TURN_MAX]),
        drift=drift,
        control_matrix=_constant_matrix(g),
        disturbance_matrix=_constant_matrix(w),
        angular_dims=frozenset({2, 5}),
    )
    bounds = np.array([[-3, 3], [-2, 2], [-math.pi, math.pi], [-3, 3], [-2, 2], [-math.pi, math.pi]], dtype=float)
    players = (
        PlayerLayout("evader", (0, 1, 2), (0, 1), 2),
        PlayerLayout("pursuer", (3, 4, 5), (3, 4), 5),
    )
    return GameProblem(
        name="dubins6d",
        dynamics=dyn,
        boundary=BoundaryFn(ell, lipschitz_bound=math.sqrt(2.0)),
        horizon=3.0,
        state_bounds=bounds,
        players=players,
    )


def _make_dubins3d_rel() -> GameProblem:
    v = DUBINS_SPEED

    def drift(x):
        f = np.zeros_like(x)
        f[..., 0] = -v + v * np.cos(x[..., 2])
        f[..., 1] = v * np.sin(x[..., 2])
        return f

    def control_matrix(x):
        # Evader turn rate rotates the relative frame: (y_r, -x_r, -1) column.
        g = np.zeros(x.shape[:-1] + (3, 1))
        g[..., 0, 0] = x[..., 1]
        g[..., 1, 0] = -x[..., 0]
        g[..., 2, 0] = -1.0
        return g

    w = np.zeros((3, 1))
    w[2, 0] = 1.0

    def ell(x):
        return np.hypot(x[..., 0], x[..., 1]) - CAPTURE_RADIUS

    dyn = DynamicsModel(
        state_dim=3,
        control_box=InputBox([-DUBINS_TURN_MAX], [DUBINS_TURN_MAX]),
        disturbance_box=InputBox([-DUBINS_TURN_MAX], [DUBINS_TURN_MAX]),
        drift=drift,
        control_matrix=control_matrix,
        disturbance_matrix=_constant_matrix(w),
        angular_dims=frozenset({2}),
    )
    bounds = np.array([[-3, 3], [-3, 3], [-math.pi, math.pi]], dtype=float)
    return GameProblem(
        name="dubins3d_rel",
        dynamics=dyn,
        boundary=BoundaryFn(ell, lipschitz_bound=1.0),
        horizon=3.0,
        state_bounds=bounds,
    )


def _make_integrator1d() -> GameProblem:
    dyn = DynamicsModel(
        state_dim=1,
        control_box=InputBox([-1.0], [1.0]),
        disturbance_box=InputBox([-0.5], [0.5]),
        drift=lambda x: np.zeros_like(x),
        control_matrix=_constant_matrix(np.ones((1, 1))),
        disturbance_matrix=_constant_matrix(np.ones((1, 1))),
    )

    def ell(x):
        return np.abs(x[..., 0]) - 0.2

    return GameProblem(
        name="integrator1d",
        dynamics=dyn,
        boundary=BoundaryFn(ell, lipschitz_bound=1.0),
        horizon=1.0,
        state_bounds=np.array([[-1.0, 1.0]]),
    )


def integrator1d_value(x, tau=None):
    """Analytic value of the integrator fixture: the evader outruns the
    disturbance, so V(x, tau) = l(x) for every time-to-go."""
    x = np.asarray(x, dtype=float)
    if x.ndim and x.shape[-1] == 1:
        x = x[..., 0]
    return np.abs(x) - 0.2


def _make_dubins3d_cylinder() -> GameProblem:
    v = DUBINS_SPEED

    def drift(x):
        f = np.zeros_like(x)
        f[..., 0] = v * np.cos(x[..., 2])
        f[..., 1] = v * np.sin(x[..., 2])
        return f

    g = np.zeros((3, 1))
    g[2, 0] = 1.0
    w = np.zeros((3, 2))
    w[0, 0] = 1.0
    w[1, 1] = 1.0

    def ell(x):
        return np.hypot(x[..., 0], x[..., 1]) - PILLAR_RADIUS

    dyn = DynamicsModel(
        state_dim=3,
        control_box=InputBox([-DUBINS_TURN_MAX], [DUBINS_TURN_MAX]),
        disturbance_box=InputBox([-WIND_MAX, -WIND_MAX], [WIND_MAX, WIND_MAX]),
        drift=drift,
        control_matrix=_constant_matrix(g),
        disturbance_matrix=_constant_matrix(w),
        angular_dims=frozenset({2}),
    )
    bounds = np.array([[-2, 2], [-2, 2], [-math.pi, math.pi]], dtype=float)
    players = (PlayerLayout("evader", (0, 1, 2), (0, 1), 2),)
    return GameProblem(
        name="dubins3d_cylinder",
        dynamics=dyn,
        boundary=BoundaryFn(ell, lipschitz_bound=1.0),
        horizon=1.0,
        state_bounds=bounds,
        players=players,
    )


_REGISTRY: dict[str, Callable[[], GameProblem]] = {
    "dubins6d": _make_dubins6d,
    "dubins3d_rel": _make_dubins3d_rel,
    "integrator1d": _make_integrator1d,
    "dubins3d_cylinder": _make_dubins3d_cylinder,
}


def available_problems() -> list[str]:
    return sorted(_REGISTRY)


def register_problem(name: str, factory: Callable[[], GameProblem], overwrite: bool = False) -> None:
    if name in _REGISTRY and not overwrite:
        raise ConfigError(f"problem '{name}' already registered")
    _REGISTRY[name] = factory


def get_problem(name: str) -> GameProblem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown problem '{name}'; available: {', '.join(available_problems())}") from None
    return factory()


# --------------------------------------------------------------------------
# State reductions (full game -> grid-solvable coordinates)
# --------------------------------------------------------------------------

def dubins_relative_state(x6) -> Array:
    """Map a two-car joint state onto pursuer coordinates in the evader frame."""
    x6 = np.asarray(x6, dtype=float)
    dx = x6[..., 3] - x6[..., 0]
    dy = x6[..., 4] - x6[..., 1]
    th = x6[..., 2]
    c, s = np.cos(th), np.sin(th)
    return np.stack([c * dx + s * dy, -s * dx + c * dy, wrap_angle(x6[..., 5] - th)], axis=-1)


# full problem name -> (reduced problem name, state map)
STATE_REDUCTIONS: dict[str, tuple[str, Callable[[Array], Array]]] = {
    "dubins6d": ("dubins3d_rel", dubins_relative_state),
}


def get_state_reduction(name: str) -> tuple[str, Callable[[Array], Array]]:
    try:
        return STATE_REDUCTIONS[name]
    except KeyError:
        raise ConfigError(f"no state reduction registered for problem '{name}'") from None


# --------------------------------------------------------------------------
# Custom problems from config files
# --------------------------------------------------------------------------

def _channel_matrix(state_dim: int, dims: Sequence[int]) -> Array:
    m = np.zeros((state_dim, len(dims)))
    for j, i in enumerate(dims):
        if not 0 <= int(i) < state_dim:
            raise ConfigError(f"channel dim {i} outside state of dim {state_dim}")
        m[int(i), j] = 1.0
    return m


def _boundary_from_config(cfg: Mapping, state_dim: int) -> BoundaryFn:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind in ("circle", "cylinder"):
        dims = tuple(cfg.pop("dims", (0, 1)))
        radius = float(cfg.pop("radius"))
        center = np.asarray(cfg.pop("center", np.zeros(len(dims))), dtype=float)
        if cfg:
            raise ConfigError(f"unknown boundary keys: {sorted(cfg)}")

        def ell(x):
            sq = np.zeros(x.shape[:-1])
            for j, i in enumerate(dims):
                sq = sq + (x[..., i] - center[j]) ** 2
            return np.sqrt(sq) - radius

        return BoundaryFn(ell, lipschitz_bound=1.0)
    if kind == "players_distance":
        dims_a = tuple(cfg.pop("dims_a"))
        dims_b = tuple(cfg.pop("dims_b"))
        radius = float(cfg.pop("radius"))
        if len(dims_a) != len(dims_b):
            raise ConfigError("players_distance needs matching dim lists")
        if cfg:
            raise ConfigError(f"unknown boundary keys: {sorted(cfg)}")

        def ell(x):
            sq = np.zeros(x.shape[:-1])
            for i, j in zip(dims_a, dims_b):
                sq = sq + (x[..., i] - x[..., j]) ** 2
            return np.sqrt(sq) - radius

        return BoundaryFn(ell, lipschitz_bound=math.sqrt(2.0))
    raise ConfigError(f"unknown boundary kind '{kind}' (circle, cylinder, players_distance)")


def problem_from_config(cfg: Mapping) -> GameProblem:
    """Build a GameProblem from a parsed JSON config; unknown keys are errors."""
    cfg = dict(cfg)
    try:
        name = str(cfg.pop("name"))
        state_dim = int(cfg.pop("dimension"))
        drift_cfg = dict(cfg.pop("drift"))
        control_box = InputBox(**cfg.pop("control_box"))
        disturbance_box = InputBox(**cfg.pop("disturbance_box"))
        boundary_cfg = cfg.pop("boundary")
        horizon = float(cfg.pop("horizon"))
        bounds = np.asarray(cfg.pop("bounds"), dtype=float)
    except KeyError as exc:
        raise ConfigError(f"problem config missing key {exc}") from None
    angular_dims = frozenset(int(i) for i in cfg.pop("angular_dims", ()))
    if cfg:
        raise ConfigError(f"unknown problem config keys: {sorted(cfg)}")

    family = drift_cfg.pop("family", None)
    if family == "integrator":
        control_dims = drift_cfg.pop("control_dims")
        disturbance_dims = drift_cfg.pop("disturbance_dims")
        if drift_cfg:
            raise ConfigError(f"unknown drift keys: {sorted(drift_cfg)}")
        drift = lambda x: np.zeros_like(x)  # noqa: E731
        gmat = _constant_matrix(_channel_matrix(state_dim, control_dims))
        wmat = _constant_matrix(_channel_matrix(state_dim, disturbance_dims))
    elif family == "single_dubins":
        speed = float(drift_cfg.pop("speed", DUBINS_SPEED))
        wind_dims = drift_cfg.pop("wind_dims", None)
        if drift_cfg:
            raise ConfigError(f"unknown drift keys: {sorted(drift_cfg)}")
        if state_dim != 3:
            raise ConfigError("single_dubins drift needs a 3-dimensional state")

        def drift(x, _v=speed):
            f = np.zeros_like(x)
            f[..., 0] = _v * np.cos(x[..., 2])
            f[..., 1] = _v * np.sin(x[..., 2])
            return f

        g = np.zeros((3, 1))
        g[2, 0] = 1.0
        gmat = _constant_matrix(g)
        wmat = _constant_matrix(_channel_matrix(3, wind_dims if wind_dims is not None else ()))
    elif family == "two_dubins":
        speed = float(drift_cfg.pop("speed", DUBINS_SPEED))
        if drift_cfg:
            raise ConfigError(f"unknown drift keys: {sorted(drift_cfg)}")
        if state_dim != 6:
            raise ConfigError("two_dubins drift needs a 6-dimensional state")

        def drift(x, _v=speed):
            f = np.zeros_like(x)
            f[..., 0] = _v * np.cos(x[..., 2])
            f[..., 1] = _v * np.sin(x[..., 2])
            f[..., 3] = _v * np.cos(x[..., 5])
            f[..., 4] = _v * np.sin(x[..., 5])
            return f

        g = np.zeros((6, 1))
        g[2, 0] = 1.0
        w = np.zeros((6, 1))
        w[5, 0] = 1.0
        gmat = _constant_matrix(g)
        wmat = _constant_matrix(w)
    elif family == "relative_dubins":
        speed = float(drift_cfg.pop("speed", DUBINS_SPEED))
        if drift_cfg:
            raise ConfigError(f"unknown drift keys: {sorted(drift_cfg)}")
        if state_dim != 3:
            raise ConfigError("relative_dubins drift needs a 3-dimensional state")

        def drift(x, _v=speed):
            f = np.zeros_like(x)
            f[..., 0] = -_v + _v * np.cos(x[..., 2])
            f[..., 1] = _v * np.sin(x[..., 2])
            return f

        def gmat(x):
            g = np.zeros(x.shape[:-1] + (3, 1))
            g[..., 0, 0] = x[..., 1]
            g[..., 1, 0] = -x[..., 0]
            g[..., 2, 0] = -1.0
            return g

        w = np.zeros((3, 1))
        w[2, 0] = 1.0
        wmat = _constant_matrix(w)
    else:
        raise ConfigError(
            f"unknown drift family '{family}' (integrator, single_dubins, two_dubins, relative_dubins)"
        )

    players_cfg = None
    if family == "two_dubins":
        players_cfg = (
            PlayerLayout("evader", (0, 1, 2), (0, 1), 2),
            PlayerLayout("pursuer", (3, 4, 5), (3, 4), 5),
        )

    dyn = DynamicsModel(
        state_dim=state_dim,
        control_box=control_box,
        disturbance_box=disturbance_box,
        drift=drift,
        control_matrix=gmat,
        disturbance_matrix=wmat,
        angular_dims=angular_dims,
    )
    boundary = _boundary_from_config(boundary_cfg, state_dim)
    return GameProblem(
        name=name,
        dynamics=dyn,
        boundary=boundary,
        horizon=horizon,
        state_bounds=bounds,
        players=players_cfg or (),
    )


def load_problem(name_or_path: str) -> GameProblem:
    """Resolve a problem by registry name, or by path to a JSON config file."""
    if name_or_path in _REGISTRY:
        return get_problem(name_or_path)
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"'{name_or_path}' is neither a registered problem nor a readable config file"
        ) from None
    return problem_from_config(cfg)
