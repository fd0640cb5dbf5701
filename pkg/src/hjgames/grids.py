"""Grid-based solver for the avoid-game variational inequality.

Backward explicit Euler on V_{k-1} = min{ V_k + dt * H_LF(x, grad V_k), l(x) }
with a Lax-Friedrichs stabilized Hamiltonian built from one-sided upwind
differences. Box-constrained inputs resolve in closed form to per-channel
bang-bang values, so no inner optimization is needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericalError, OutOfDomainError
from .problems import GameProblem, flow_terms

Array = np.ndarray

MAGIC = b"VGRD"
FORMAT_VERSION = 1
CFL_SAFETY = 0.5
DISSIPATION_MARGIN = 1.1
MAX_GRID_DIM = 4


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    n: int
    periodic: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"grid axis needs at least 3 points, got {self.n}")
        if self.hi <= self.lo:
            raise ConfigError("grid axis has hi <= lo")

    @property
    def spacing(self) -> float:
        # Periodic axes sample [lo, hi) with hi identified with lo.
        return (self.hi - self.lo) / (self.n if self.periodic else self.n - 1)

    @property
    def nodes(self) -> Array:
        if self.periodic:
            return self.lo + self.spacing * np.arange(self.n)
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class GridSpec:
    axes: tuple
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if self.dt <= 0:
            raise ConfigError("grid time step must be positive")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.n for ax in self.axes)

    def node_axes(self) -> list:
        return [ax.nodes for ax in self.axes]

    def mesh(self) -> Array:
        """All node coordinates, shape (*shape, ndim)."""
        grids = np.meshgrid(*self.node_axes(), indexing="ij")
        return np.stack(grids, axis=-1)


@dataclass(frozen=True, eq=False)
class ValueGrid:
    """Discretized value function: times descending from T to 0."""

    problem_name: str
    spec: GridSpec
    times: Array
    values: Array

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values)
        if values.shape != (times.shape[0],) + self.spec.shape:
            raise ContractError(f"value array shape {values.shape} inconsistent with spec/times")
        if np.any(np.diff(times) >= 0):
            raise ContractError("times must be strictly descending")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.times[0])

    def terminal_slice(self) -> Array:
        return self.values[0]

    def final_slice(self) -> Array:
        """The t = 0 slice (full time-to-go)."""
        return self.values[-1]


def axes_for_problem(problem: GameProblem, counts: Sequence[int]) -> tuple:
    """Grid axes spanning the problem's state bounds; angular dims periodic."""
    if len(counts) != problem.state_dim:
        raise ConfigError(f"need {problem.state_dim} axis counts, got {len(counts)}")
    axes = []
    for i, n in enumerate(counts):
        lo, hi = problem.state_bounds[i]
        axes.append(GridAxis(float(lo), float(hi), int(n), periodic=i in problem.dynamics.angular_dims))
    return tuple(axes)


def dissipation_bounds(problem: GameProblem, axes: Sequence[GridAxis], samples_per_dim: int = 21) -> Array:
    """Per-dimension bounds on |dH/dp_i| sampled over the grid box.

    |dH/dp_i| <= |f_i| + |g_i . c_u| + sum_j |g_ij| hw_u_j + (same for w),
    evaluated on a coarse sample mesh and inflated by a safety margin.
    """
    sample_axes = []
    for ax in axes:
        n = min(ax.n, samples_per_dim)
        sample_axes.append(np.linspace(ax.lo, ax.hi, n))
    mesh = np.stack(np.meshgrid(*sample_axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    f, g, w = flow_terms(problem.dynamics, mesh)
    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box
    reach = np.abs(f)
    reach += np.abs(g @ ubox.center) + np.abs(g) @ ubox.half_width
    reach += np.abs(w @ dbox.center) + np.abs(w) @ dbox.half_width
    return DISSIPATION_MARGIN * reach.max(axis=0)


def stable_time_step(problem: GameProblem, axes: Sequence[GridAxis], safety: float = CFL_SAFETY) -> float:
    """Largest step meeting both the per-dim CFL rule and the multi-dim
    monotonicity bound dt * sum_i(alpha_i / dx_i) <= 1."""
    alpha = dissipation_bounds(problem, axes)
    spacings = np.array([ax.spacing for ax in axes])
    per_dim = safety * float(np.min(spacings / np.maximum(alpha, 1e-12)))
    monotone = 0.9 / float(np.sum(alpha / spacings))
    return min(per_dim, monotone)


def grid_spec_for(problem: GameProblem, counts: Sequence[int], dt: float | None = None) -> GridSpec:
    """GridSpec over the problem bounds; dt defaults to a stable step that
    divides the horizon exactly."""
    axes = axes_for_problem(problem, counts)
    if dt is None:
        dt = stable_time_step(problem, axes)
    n_steps = max(1, int(np.ceil(problem.horizon / dt - 1e-12)))
    return GridSpec(axes, problem.horizon / n_steps)


def _one_sided_differences(v: Array, axis: int, ax: GridAxis) -> tuple[Array, Array]:
    """Left/right one-sided differences; edges reuse the interior one-sided
    value (no ghost extrapolation), periodic axes wrap around."""
    dx = ax.spacing
    diff = np.diff(v, axis=axis) / dx
    if ax.periodic:
        take_first = [slice(None)] * v.ndim
        take_first[axis] = slice(0, 1)
        take_last = [slice(None)] * v.ndim
        take_last[axis] = slice(ax.n - 1, ax.n)
        wrap = (v[tuple(take_first)] - v[tuple(take_last)]) / dx
        left = np.concatenate([wrap, diff], axis=axis)
        right = np.concatenate([diff, wrap], axis=axis)
    else:
        first = [slice(None)] * v.ndim
        first[axis] = slice(0, 1)
        last = [slice(None)] * v.ndim
        last[axis] = slice(diff.shape[axis] - 1, diff.shape[axis])
        left = np.concatenate([diff[tuple(first)], diff], axis=axis)
        right = np.concatenate([diff, diff[tuple(last)]], axis=axis)
    return left, right


def solve_hji_vi(
    problem: GameProblem,
    spec: GridSpec,
    store_slices: int = 65,
    progress: Callable[[int, int], None] | None = None,
    dissipation: str = "local",
) -> ValueGrid:
    """Time-march the avoid-game VI backward from V(x, T) = l(x).

    store_slices caps how many time slices are kept (the first and the t = 0
    slice always are); the sweep itself always runs at spec.dt. dissipation
    "local" bounds |dH/dp_i| per node (far less smearing on large boxes),
    "global" uses one sampled bound per dimension; both are monotone under
    the same CFL check, which always uses the global bound.
    """
    if problem.state_dim > MAX_GRID_DIM:
        raise ConfigError(f"grid solver limited to {MAX_GRID_DIM} dims, problem has {problem.state_dim}")
    if spec.ndim != problem.state_dim:
        raise ConfigError("grid spec dimension does not match the problem")

    axes = spec.axes
    alpha = dissipation_bounds(problem, axes)
    spacings = np.array([ax.spacing for ax in axes])
    dt = spec.dt
    if dt > CFL_SAFETY * float(np.min(spacings / np.maximum(alpha, 1e-12))) + 1e-15:
        raise ConfigError(
            f"CFL violation: dt={dt:g} exceeds {CFL_SAFETY} * min(dx/alpha)"
            f"={CFL_SAFETY * float(np.min(spacings / alpha)):g}"
        )
    if dt * float(np.sum(alpha / spacings)) > 1.0 + 1e-12:
        raise ConfigError("CFL violation: dt * sum(alpha/dx) > 1 breaks scheme monotonicity")

    n_steps = int(round(problem.horizon / dt))
    if abs(n_steps * dt - problem.horizon) > 1e-9 * max(1.0, problem.horizon):
        raise ConfigError(f"dt={dt:g} must divide the horizon {problem.horizon:g} exactly")

    mesh = spec.mesh()
    ell = problem.boundary(mesh)
    f, g, w = flow_terms(problem.dynamics, mesh)
    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box

    if dissipation == "local":
        # Per-node |dH/dp_i| bound, same construction as the global one.
        local_alpha = np.abs(f)
        local_alpha += np.abs(np.einsum("...ij,j->...i", g, ubox.center))
        local_alpha += np.einsum("...ij,j->...i", np.abs(g), ubox.half_width)
        local_alpha += np.abs(np.einsum("...ij,j->...i", w, dbox.center))
        local_alpha += np.einsum("...ij,j->...i", np.abs(w), dbox.half_width)
        local_alpha *= DISSIPATION_MARGIN
        alpha_per_dim = [local_alpha[..., i] for i in range(len(axes))]
    elif dissipation == "global":
        alpha_per_dim = [alpha[i] for i in range(len(axes))]
    else:
        raise ConfigError(f"unknown dissipation mode '{dissipation}'")

    stride = max(1, int(np.ceil(n_steps / max(1, store_slices - 1))))
    stored_ks = sorted(set(range(0, n_steps + 1, stride)) | {0, n_steps})

    v = ell.copy()
    kept = [v.copy()]
    kept_ks = [0]
    for k in range(1, n_steps + 1):
        # One-sided differences per axis; accumulate H(p_bar) and dissipation.
        diss_sum = 0.0
        p_bar = []
        for axis, ax in enumerate(axes):
            left, right = _one_sided_differences(v, axis, ax)
            p_bar.append(0.5 * (left + right))
            diss_sum = diss_sum + 0.5 * alpha_per_dim[axis] * (right - left)
        h = np.zeros_like(v)
        for i in range(len(axes)):
            h += p_bar[i] * f[..., i]
        for j in range(ubox.dim):
            s = np.zeros_like(v)
            for i in range(len(axes)):
                s += p_bar[i] * g[..., i, j]
            h += ubox.center[j] * s + ubox.half_width[j] * np.abs(s)
        for j in range(dbox.dim):
            s = np.zeros_like(v)
            for i in range(len(axes)):
                s += p_bar[i] * w[..., i, j]
            h += dbox.center[j] * s - dbox.half_width[j] * np.abs(s)
        # Backward march in t is forward in time-to-go, so the stabilizing
        # diffusion enters with a plus sign: V <- V + dt*(H(p_bar) + diss).
        # The extra min with the previous slice enforces tube nesting (more
        # exposure cannot help the evader) exactly; it also confines noise
        # from the one-sided closure at non-periodic box edges.
        v = np.minimum(np.minimum(v + dt * (h + diss_sum), ell), v)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite values in sweep at time slice k={k} (t={problem.horizon - k * dt:g})")
        if k in stored_ks:
            kept.append(v.copy())
            kept_ks.append(k)
        if progress is not None:
            progress(k, n_steps)

    times = problem.horizon - dt * np.asarray(kept_ks, dtype=float)
    return ValueGrid(problem_name=problem.name, spec=spec, times=times, values=np.stack(kept))


def _spatial_indices(spec: GridSpec, x: Array) -> tuple[list, list]:
    """Per-dim lower corner indices and fractional weights for x of shape (..., ndim)."""
    i0s, fracs = [], []
    for d, ax in enumerate(spec.axes):
        coord = x[..., d]
        if ax.periodic:
            pos = (coord - ax.lo) / ax.spacing
            pos = np.mod(pos, ax.n)
            i0 = np.floor(pos).astype(int) % ax.n
            frac = pos - np.floor(pos)
        else:
            if np.any(coord < ax.lo - 1e-9) or np.any(coord > ax.hi + 1e-9):
                raise OutOfDomainError(
                    f"query outside grid axis {d}: range [{ax.lo}, {ax.hi}]"
                )
            pos = (np.clip(coord, ax.lo, ax.hi) - ax.lo) / ax.spacing
            i0 = np.clip(np.floor(pos).astype(int), 0, ax.n - 2)
            frac = pos - i0
        i0s.append(i0)
        fracs.append(frac)
    return i0s, fracs


def _interp_slice(slice_values: Array, spec: GridSpec, i0s: list, fracs: list) -> Array:
    out = 0.0
    for corner in product((0, 1), repeat=spec.ndim):
        weight = 1.0
        idx = []
        for d, c in enumerate(corner):
            i = i0s[d] + c
            if spec.axes[d].periodic:
                i = i % spec.axes[d].n
            idx.append(i)
            weight = weight * (fracs[d] if c else (1.0 - fracs[d]))
        out = out + weight * slice_values[tuple(idx)]
    return out


def interpolate(grid: ValueGrid, x, t: float) -> Array:
    """Multilinear in space, linear in time; x may carry batch dims."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != grid.spec.ndim:
        raise ContractError(f"query dim {x.shape[-1]} != grid dim {grid.spec.ndim}")
    horizon = grid.horizon
    if t < -1e-9 or t > horizon + 1e-9:
        raise OutOfDomainError(f"time {t} outside [0, {horizon}]")
    t = float(np.clip(t, grid.times[-1], grid.times[0]))

    ascending = grid.times[::-1]
    j = int(np.searchsorted(ascending, t, side="right")) - 1
    j = min(max(j, 0), ascending.shape[0] - 2)
    t_lo, t_hi = ascending[j], ascending[j + 1]
    wt = 0.0 if t_hi == t_lo else (t - t_lo) / (t_hi - t_lo)
    k_lo = grid.times.shape[0] - 1 - j
    k_hi = k_lo - 1

    i0s, fracs = _spatial_indices(grid.spec, x)
    lo_val = _interp_slice(grid.values[k_lo], grid.spec, i0s, fracs)
    if wt == 0.0:
        return np.asarray(lo_val)
    hi_val = _interp_slice(grid.values[k_hi], grid.spec, i0s, fracs)
    return np.asarray((1.0 - wt) * lo_val + wt * hi_val)


@dataclass(frozen=True)
class SetComparison:
    iou: float
    vol_ref: float
    vol_cand: float
    window_nodes: int


def window_mask(spec: GridSpec, window) -> Array:
    """Boolean node mask for a per-dimension (lo, hi) window; None entries
    leave a dimension unrestricted."""
    mask = np.ones(spec.shape, dtype=bool)
    if window is None:
        return mask
    for d, win in enumerate(window):
        if win is None:
            continue
        lo, hi = win
        nodes = spec.axes[d].nodes
        dim_mask = (nodes >= lo - 1e-12) & (nodes <= hi + 1e-12)
        shape = [1] * spec.ndim
        shape[d] = nodes.shape[0]
        mask &= dim_mask.reshape(shape)
    return mask


def compare_fields(
    reference: ValueGrid,
    candidate: Array,
    level: float = 0.0,
    window=None,
    time_index: int = -1,
) -> SetComparison:
    """Compare sub-level sets of the reference slice against a candidate
    field sampled on the same nodes, by node counting inside the window."""
    ref = reference.values[time_index]
    cand = np.asarray(candidate)
    if cand.shape != ref.shape:
        raise ContractError(f"candidate shape {cand.shape} != grid shape {ref.shape}")
    mask = window_mask(reference.spec, window)
    a = (ref <= level) & mask
    b = (cand <= level) & mask
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    iou = 1.0 if union == 0 else inter / union
    total = int(np.count_nonzero(mask))
    return SetComparison(
        iou=float(iou),
        vol_ref=float(np.count_nonzero(a) / total),
        vol_cand=float(np.count_nonzero(b) / total),
        window_nodes=total,
    )


def evaluate_on_grid(fn: Callable[[Array], Array], spec: GridSpec, chunk: int = 262144) -> Array:
    """Evaluate a state -> value function on every node, chunked to bound memory."""
    mesh = spec.mesh().reshape(-1, spec.ndim)
    parts = [np.asarray(fn(mesh[i : i + chunk])) for i in range(0, mesh.shape[0], chunk)]
    return np.concatenate(parts).reshape(spec.shape)


# --------------------------------------------------------------------------
# Persistence: little-endian binary, float32 payload
# --------------------------------------------------------------------------

def save_grid(grid: ValueGrid, path: str) -> None:
    name = grid.problem_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<I", grid.spec.ndim))
        for ax in grid.spec.axes:
            fh.write(struct.pack("<ddIB", ax.lo, ax.hi, ax.n, int(ax.periodic)))
        fh.write(struct.pack("<d", grid.spec.dt))
        fh.write(struct.pack("<I", grid.times.shape[0]))
        fh.write(grid.times.astype("<f8").tobytes())
        payload = np.ascontiguousarray(grid.values, dtype="<f4")
        fh.write(struct.pack("<Q", payload.size))
        fh.write(payload.tobytes())


def load_grid(path: str) -> ValueGrid:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path} is not a value-grid file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported value-grid version {version}")
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", fh.read(4))
        axes = []
        for _ in range(ndim):
            lo, hi, n, periodic = struct.unpack("<ddIB", fh.read(21))
            axes.append(GridAxis(lo, hi, n, bool(periodic)))
        (dt,) = struct.unpack("<d", fh.read(8))
        (n_times,) = struct.unpack("<I", fh.read(4))
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8").copy()
        (count,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(4 * count), dtype="<f4").copy()
    spec = GridSpec(tuple(axes), dt)
    values = values.reshape((n_times,) + spec.shape)
    return ValueGrid(problem_name=name, spec=spec, times=times, values=values)
