"""Sinusoidal value network V(x, tau) with exact input and parameter gradients.

The network maps normalized (state, time-to-go) inputs through sine layers and
an affine head, scaled by a declared value-scale constant. Input gradients come
from differentiating the same graph that training uses, so the Hamiltonian,
the VI residual, and the parameter gradient (which involves second-order mixed
terms through grad V) are all exact up to floating point.

Internal time convention: time-to-go tau = T - t, boundary condition at tau = 0.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, ContractError, NumericalError
from .problems import GameProblem, flow_terms, wrap_angle

Array = np.ndarray

MAGIC = b"VNET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkArch:
    """Shape of the sinusoidal approximator; input_dim counts state dims plus one for tau."""

    input_dim: int
    hidden_layers: int = 3
    width: int = 512
    omega0: float = 30.0

    def __post_init__(self):
        if self.input_dim < 2 or self.hidden_layers < 1 or self.width < 1:
            raise ConfigError(f"invalid network arch {self}")


class ValueNetwork:
    """Value approximator with per-dimension affine input normalization into [-1, 1].

    Angular state dims are fed to the layers as (cos, sin) pairs of the raw
    angle instead of their normalized chart coordinate, so the network is
    exactly periodic across the +-pi seam (the value function is; a raw-chart
    input provably cannot be).
    """

    def __init__(
        self,
        arch: NetworkArch,
        norm_lo: Array,
        norm_hi: Array,
        value_scale: float,
        parameters: list[torch.Tensor],
        problem_name: str = "",
        train_step: int = 0,
        angular_dims: tuple = (),
    ):
        norm_lo = np.asarray(norm_lo, dtype=float)
        norm_hi = np.asarray(norm_hi, dtype=float)
        if norm_lo.shape != (arch.input_dim,) or norm_hi.shape != (arch.input_dim,):
            raise ContractError("normalization bounds must match the network input dim")
        if np.any(norm_hi <= norm_lo):
            raise ContractError("normalization box must be nonempty")
        self.arch = arch
        self.norm_lo = norm_lo
        self.norm_hi = norm_hi
        self.value_scale = float(value_scale)
        self.problem_name = problem_name
        self.train_step = int(train_step)
        self.angular_dims = tuple(sorted(int(i) for i in angular_dims))
        for i in self.angular_dims:
            if not 0 <= i < arch.input_dim - 1:
                raise ContractError(f"angular dim {i} outside the state part of the input")
        self.oob_queries = 0  # clamped-query warning counter
        self._params = parameters
        self._lo_t = torch.from_numpy(norm_lo)
        self._hi_t = torch.from_numpy(norm_hi)

    # -- construction ------------------------------------------------------

    @staticmethod
    def layer_fanins(arch: NetworkArch, n_angular: int = 0) -> list[tuple[int, int]]:
        """(out, in) shapes of the weight matrices, in parameter order; each
        angular dim contributes one extra feature column (cos+sin replace z)."""
        dims = [arch.input_dim + n_angular] + [arch.width] * arch.hidden_layers + [1]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @classmethod
    def initialize(
        cls,
        problem: GameProblem,
        arch: NetworkArch | None = None,
        seed: int = 0,
        hidden_layers: int = 3,
        width: int = 512,
        omega0: float = 30.0,
        value_scale: float | None = None,
    ) -> "ValueNetwork":
        """Fresh network for a problem; all randomness is derived from seed."""
        if arch is None:
            arch = NetworkArch(problem.state_dim + 1, hidden_layers, width, omega0)
        elif arch.input_dim != problem.state_dim + 1:
            raise ContractError("arch input_dim must be state_dim + 1")
        angular = tuple(sorted(problem.dynamics.angular_dims))
        gen = torch.Generator().manual_seed(int(seed))
        params: list[torch.Tensor] = []
        for k, (out_dim, in_dim) in enumerate(cls.layer_fanins(arch, len(angular))):
            if k == 0:
                bound = 1.0 / in_dim
            else:
                bound = math.sqrt(6.0 / in_dim) / arch.omega0
            w = torch.empty(out_dim, in_dim, dtype=torch.float64)
            w.uniform_(-bound, bound, generator=gen)
            b = torch.empty(out_dim, dtype=torch.float64)
            b.uniform_(-1.0 / math.sqrt(in_dim), 1.0 / math.sqrt(in_dim), generator=gen)
            params.extend([w.requires_grad_(True), b.requires_grad_(True)])
        if value_scale is None:
            rng = np.random.default_rng(seed)
            probes = problem.sample_states(rng, 4096)
            value_scale = max(float(np.abs(problem.boundary(probes)).max()), 1e-6)
        norm_lo = np.concatenate([problem.lower_bounds, [0.0]])
        norm_hi = np.concatenate([problem.upper_bounds, [problem.horizon]])
        return cls(
            arch, norm_lo, norm_hi, value_scale, params,
            problem_name=problem.name, angular_dims=angular,
        )

    # -- parameter vector --------------------------------------------------

    @property
    def torch_parameters(self) -> list[torch.Tensor]:
        return self._params

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self._params)

    def parameters_vector(self) -> Array:
        with torch.no_grad():
            return torch.cat([p.reshape(-1) for p in self._params]).numpy().copy()

    def set_parameters_vector(self, theta: Array) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_parameters,):
            raise ContractError(f"parameter vector must have {self.n_parameters} entries")
        offset = 0
        with torch.no_grad():
            for p in self._params:
                n = p.numel()
                p.copy_(torch.from_numpy(theta[offset : offset + n].reshape(p.shape)))
                offset += n

    @property
    def horizon(self) -> float:
        return float(self.norm_hi[-1])

    # -- evaluation --------------------------------------------------------

    def normalize(self, inp: Array) -> Array:
        return 2.0 * (np.asarray(inp, dtype=float) - self.norm_lo) / (self.norm_hi - self.norm_lo) - 1.0

    def denormalize(self, z: Array) -> Array:
        return self.norm_lo + 0.5 * (np.asarray(z, dtype=float) + 1.0) * (self.norm_hi - self.norm_lo)

    def _features_torch(self, inp: torch.Tensor) -> torch.Tensor:
        z = 2.0 * (inp - self._lo_t) / (self._hi_t - self._lo_t) - 1.0
        if not self.angular_dims:
            return z
        cols = []
        for j in range(self.arch.input_dim):
            if j in self.angular_dims:
                cols.append(torch.cos(inp[..., j]))
            else:
                cols.append(z[..., j])
        for j in self.angular_dims:
            cols.append(torch.sin(inp[..., j]))
        return torch.stack(cols, dim=-1)

    def _forward_torch(self, inp: torch.Tensor) -> torch.Tensor:
        """Network value for raw (x, tau) inputs; keeps the autograd graph."""
        h = self._features_torch(inp)
        omega = self.arch.omega0
        n_layers = len(self._params) // 2
        for k in range(n_layers - 1):
            w, b = self._params[2 * k], self._params[2 * k + 1]
            h = torch.sin(omega * (h @ w.T + b))
        w, b = self._params[-2], self._params[-1]
        return self.value_scale * (h @ w.T + b).squeeze(-1)

    def _clamp_inputs(self, x: Array, tau) -> tuple[Array, Array, tuple]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        tau2 = np.broadcast_to(np.asarray(tau, dtype=float), x2.shape[:-1]).reshape(-1)
        if x2.shape[-1] != self.arch.input_dim - 1:
            raise ContractError(f"state dim {x2.shape[-1]} != network state dim {self.arch.input_dim - 1}")
        inp = np.concatenate([x2.reshape(-1, x2.shape[-1]), tau2[:, None]], axis=1)
        clamped = np.clip(inp, self.norm_lo, self.norm_hi)
        for j in self.angular_dims:
            clamped[:, j] = wrap_angle(inp[:, j])  # angles wrap, never clamp
        if np.any(clamped != inp):
            self.oob_queries += int(np.count_nonzero(np.any(clamped != inp, axis=1)))
        return clamped, tau2, (single, x2.shape[:-1])

    def value(self, x, tau) -> Array:
        """V(x, tau); out-of-box queries are clamped and counted."""
        inp, _, (single, batch_shape) = self._clamp_inputs(x, tau)
        with torch.no_grad():
            out = self._forward_torch(torch.from_numpy(inp)).numpy()
        return float(out[0]) if single else out.reshape(batch_shape)

    def eval_with_gradient(self, x, tau) -> tuple[Array, Array, Array]:
        """(V, dV/dtau, grad_x V) at possibly-batched states."""
        inp, _, (single, batch_shape) = self._clamp_inputs(x, tau)
        t_inp = torch.from_numpy(inp).requires_grad_(True)
        v = self._forward_torch(t_inp)
        (grads,) = torch.autograd.grad(v.sum(), t_inp)
        v_np = v.detach().numpy()
        g_np = grads.numpy()
        if single:
            return float(v_np[0]), float(g_np[0, -1]), g_np[0, :-1].copy()
        n = self.arch.input_dim - 1
        return (
            v_np.reshape(batch_shape),
            g_np[:, -1].reshape(batch_shape),
            g_np[:, :-1].reshape(batch_shape + (n,)),
        )


# --------------------------------------------------------------------------
# Hamiltonian and VI residual (numpy surface)
# --------------------------------------------------------------------------

def bang_bang_inputs(grad_x: Array, g: Array, w: Array, problem: GameProblem) -> tuple[Array, Array, Array, Array]:
    """Closed-form box optimizers of grad.(g u) (max) and grad.(w d) (min).

    Returns (s_u, s_d, u_star, d_star) where s are the per-channel gradient
    coefficients; channels with zero coefficient sit at the box center.
    """
    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box
    s_u = np.einsum("...i,...ij->...j", grad_x, g)
    s_d = np.einsum("...i,...ij->...j", grad_x, w)
    u_star = ubox.center + ubox.half_width * np.sign(s_u)
    d_star = dbox.center - dbox.half_width * np.sign(s_d)
    return s_u, s_d, u_star, d_star


def hamiltonian(net: ValueNetwork, problem: GameProblem, x, tau) -> tuple[Array, Array, Array]:
    """(H, u_star, d_star) with H = grad.f + max_u grad.g u + min_d grad.w d."""
    x = np.asarray(x, dtype=float)
    _, _, grad_x = net.eval_with_gradient(x, tau)
    f, g, w = flow_terms(problem.dynamics, x)
    s_u, s_d, u_star, d_star = bang_bang_inputs(grad_x, g, w, problem)
    h = (
        np.einsum("...i,...i->...", grad_x, f)
        + np.einsum("...j,...j->...", s_u, u_star)
        + np.einsum("...j,...j->...", s_d, d_star)
    )
    return h, u_star, d_star


def vi_residual(net: ValueNetwork, problem: GameProblem, x, tau, objective: str = "avoid") -> Array:
    """Pointwise VI residual min{-dV/dtau + H, l(x) - V} (max{...} for the
    follow game). tau is time-to-go, so dV/dt = -dV/dtau."""
    x = np.asarray(x, dtype=float)
    v, dv_dtau, grad_x = net.eval_with_gradient(x, tau)
    f, g, w = flow_terms(problem.dynamics, x)
    s_u, s_d, u_star, d_star = bang_bang_inputs(grad_x, g, w, problem)
    h = (
        np.einsum("...i,...i->...", grad_x, f)
        + np.einsum("...j,...j->...", s_u, u_star)
        + np.einsum("...j,...j->...", s_d, d_star)
    )
    ell = problem.boundary(x)
    combine = np.minimum if objective == "avoid" else np.maximum
    return combine(-dv_dtau + h, ell - v)


# --------------------------------------------------------------------------
# Loss evaluation (torch end-to-end for exact parameter gradients)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcBatch:
    x: Array
    tau: Array
    v_hat: Array


@dataclass(frozen=True)
class LossBatch:
    """Collocation, boundary and MPC supervision points plus term weights."""

    pde_x: Array | None = None
    pde_tau: Array | None = None
    boundary_x: Array | None = None
    mpc: tuple = ()
    lambda_pde: float = 1.0
    lambda_boundary: float = 1.0
    lambda_ft: float = 100.0


def _graph_value_and_grad(net: ValueNetwork, x: Array, tau: Array) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    inp_np = np.concatenate([x, np.asarray(tau, dtype=float)[:, None]], axis=1)
    inp = torch.from_numpy(inp_np).requires_grad_(True)
    v = net._forward_torch(inp)
    (grads,) = torch.autograd.grad(v.sum(), inp, create_graph=True)
    return v, grads[:, -1], grads[:, :-1]


def _hamiltonian_torch(net: ValueNetwork, problem: GameProblem, x: Array, grad_x: torch.Tensor) -> torch.Tensor:
    f, g, w = flow_terms(problem.dynamics, x)
    f_t = torch.from_numpy(np.ascontiguousarray(f))
    g_t = torch.from_numpy(np.ascontiguousarray(g))
    w_t = torch.from_numpy(np.ascontiguousarray(w))
    ubox = problem.dynamics.control_box
    dbox = problem.dynamics.disturbance_box
    s_u = torch.einsum("bi,bij->bj", grad_x, g_t)
    s_d = torch.einsum("bi,bij->bj", grad_x, w_t)
    h = torch.einsum("bi,bi->b", grad_x, f_t)
    h = h + s_u @ torch.from_numpy(ubox.center) + torch.abs(s_u) @ torch.from_numpy(ubox.half_width)
    h = h + s_d @ torch.from_numpy(dbox.center) - torch.abs(s_d) @ torch.from_numpy(dbox.half_width)
    return h


def loss_terms(
    net: ValueNetwork,
    problem: GameProblem,
    batch: LossBatch,
    objective: str = "avoid",
) -> dict[str, torch.Tensor]:
    """Unweighted loss terms as torch scalars sharing one autograd graph."""
    terms: dict[str, torch.Tensor] = {}
    if batch.pde_x is not None and len(batch.pde_x):
        x = np.asarray(batch.pde_x, dtype=float)
        tau = np.asarray(batch.pde_tau, dtype=float)
        v, dv_dtau, grad_x = _graph_value_and_grad(net, x, tau)
        h = _hamiltonian_torch(net, problem, x, grad_x)
        ell = torch.from_numpy(np.asarray(problem.boundary(x), dtype=float))
        pde_branch = -dv_dtau + h
        if objective == "avoid":
            residual = torch.minimum(pde_branch, ell - v)
        else:
            residual = torch.maximum(pde_branch, ell - v)
        terms["pde"] = residual.abs().mean()
    if batch.boundary_x is not None and len(batch.boundary_x):
        xb = np.asarray(batch.boundary_x, dtype=float)
        inp = torch.from_numpy(np.concatenate([xb, np.zeros((xb.shape[0], 1))], axis=1))
        vb = net._forward_torch(inp)
        ellb = torch.from_numpy(np.asarray(problem.boundary(xb), dtype=float))
        terms["boundary"] = (vb - ellb).abs().mean()
    for idx, mpc in enumerate(batch.mpc):
        if len(mpc.x) == 0:
            continue
        xm = np.asarray(mpc.x, dtype=float)
        inp = torch.from_numpy(np.concatenate([xm, np.asarray(mpc.tau, dtype=float)[:, None]], axis=1))
        vm = net._forward_torch(inp)
        target = torch.from_numpy(np.asarray(mpc.v_hat, dtype=float))
        terms[f"mpc_{idx}"] = (vm - target).abs().mean()
    return terms


def total_loss(terms: dict[str, torch.Tensor], batch: LossBatch) -> torch.Tensor:
    total = None
    for name, value in terms.items():
        if name == "pde":
            weighted = batch.lambda_pde * value
        elif name == "boundary":
            weighted = batch.lambda_boundary * value
        else:
            weighted = batch.lambda_ft * value
        total = weighted if total is None else total + weighted
    if total is None:
        raise ContractError("loss batch is empty")
    return total


def loss_and_param_gradient(
    net: ValueNetwork,
    problem: GameProblem,
    batch: LossBatch,
    objective: str = "avoid",
) -> tuple[float, Array]:
    """Weighted loss and its exact flat parameter gradient."""
    terms = loss_terms(net, problem, batch, objective)
    loss = total_loss(terms, batch)
    if not torch.isfinite(loss):
        bad = {k: float(v) for k, v in terms.items() if not torch.isfinite(v)}
        raise NumericalError(f"non-finite loss terms: {bad}")
    grads = torch.autograd.grad(loss, net.torch_parameters, allow_unused=True)
    flat = torch.cat(
        [
            (g if g is not None else torch.zeros_like(p)).reshape(-1)
            for g, p in zip(grads, net.torch_parameters)
        ]
    )
    return float(loss.detach()), flat.numpy().copy()


# --------------------------------------------------------------------------
# Checkpoints: little-endian binary, float32 parameter payload
# --------------------------------------------------------------------------

def save_checkpoint(net: ValueNetwork, path: str) -> None:
    header = {
        "arch": {
            "input_dim": net.arch.input_dim,
            "hidden_layers": net.arch.hidden_layers,
            "width": net.arch.width,
            "omega0": net.arch.omega0,
        },
        "problem": net.problem_name,
        "norm_lo": net.norm_lo.tolist(),
        "norm_hi": net.norm_hi.tolist(),
        "value_scale": net.value_scale,
        "train_step": net.train_step,
        "param_count": net.n_parameters,
        "angular_dims": list(net.angular_dims),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = net.parameters_vector().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())


def load_checkpoint(path: str) -> ValueNetwork:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path} is not a value-network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        theta = np.frombuffer(fh.read(4 * header["param_count"]), dtype="<f4").astype(float)
    arch = NetworkArch(**header["arch"])
    angular = tuple(header.get("angular_dims", ()))
    params = []
    for out_dim, in_dim in ValueNetwork.layer_fanins(arch, len(angular)):
        params.append(torch.zeros(out_dim, in_dim, dtype=torch.float64, requires_grad=True))
        params.append(torch.zeros(out_dim, dtype=torch.float64, requires_grad=True))
    net = ValueNetwork(
        arch,
        np.asarray(header["norm_lo"]),
        np.asarray(header["norm_hi"]),
        header["value_scale"],
        params,
        problem_name=header["problem"],
        train_step=header["train_step"],
        angular_dims=angular,
    )
    net.set_parameters_vector(theta)
    return net
