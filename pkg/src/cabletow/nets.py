"""Actor/critic networks: CNN grid encoder + MLP vector encoder fused into a
layer-normalized GRU, with Gaussian policy heads (variance floored via
softplus) and a value head twice as wide for the critic.

Parameter storage/autodiff is delegated to torch; every weight is initialized
orthogonally from an explicit numpy generator so construction is bit
deterministic and independent of torch's RNG. Convolutions use the
floor((N - k)/s) + 1 no-padding convention: 57 -> 18 -> 8 -> 3 -> 1.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .obs import GRID_N, EgoObservation, GlobalState, ShapeMismatch

SIGMA_MIN = 0.05
ACTION_DIM = 3
VEC_DIM = 12
ACTOR_CONV = ((5, 8, 3), (3, 16, 2), (3, 32, 2), (3, 64, 2))  # (kernel, filters, stride)
CRITIC_CONV = ((5, 16, 3), (3, 32, 2), (3, 64, 2), (3, 128, 2))
ACTOR_HIDDEN = 128
CRITIC_HIDDEN = 256
LOG_2PI = math.log(2.0 * math.pi)


class GraphCycle(RuntimeError):
    """Kept for API compatibility; the autodiff backend detects cycles itself."""


def orthogonal_init(rng: np.random.Generator, shape: tuple[int, ...],
                    gain: float = 1.0) -> np.ndarray:
    """Orthogonal (rows or columns orthonormal, scaled by gain) float32 array."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).reshape(shape).astype(np.float32)


def _init_linear(layer: nn.Linear, rng: np.random.Generator, gain: float) -> None:
    w = orthogonal_init(rng, tuple(layer.weight.shape), gain)
    with torch.no_grad():
        layer.weight.copy_(torch.from_numpy(w))
        layer.bias.zero_()


def _init_conv(layer: nn.Conv2d, rng: np.random.Generator, gain: float) -> None:
    w = orthogonal_init(rng, tuple(layer.weight.shape), gain)
    with torch.no_grad():
        layer.weight.copy_(torch.from_numpy(w))
        layer.bias.zero_()


class LayerNormGRUCell(nn.Module):
    """GRU cell with layer normalization on each gate preactivation.

    r = sig(LN_r(x W_ir + h W_hr)); z = sig(LN_z(x W_iz + h W_hz));
    n = tanh(LN_n(x W_in + r * (h W_hn))); h' = (1 - z) * n + z * h.
    Gate biases live in the LN affine terms. Each gate block of the input and
    recurrent matrices is orthogonally initialized separately.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        w_ih = np.concatenate(
            [orthogonal_init(rng, (hidden_size, input_size)) for _ in range(3)], axis=0
        )
        w_hh = np.concatenate(
            [orthogonal_init(rng, (hidden_size, hidden_size)) for _ in range(3)], axis=0
        )
        self.w_ih = nn.Parameter(torch.from_numpy(w_ih))
        self.w_hh = nn.Parameter(torch.from_numpy(w_hh))
        self.ln_r = nn.LayerNorm(hidden_size)
        self.ln_z = nn.LayerNorm(hidden_size)
        self.ln_n = nn.LayerNorm(hidden_size)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        gi = x @ self.w_ih.t()
        gh = h @ self.w_hh.t()
        i_r, i_z, i_n = gi.chunk(3, dim=-1)
        h_r, h_z, h_n = gh.chunk(3, dim=-1)
        r = torch.sigmoid(self.ln_r(i_r + h_r))
        z = torch.sigmoid(self.ln_z(i_z + h_z))
        n = torch.tanh(self.ln_n(i_n + r * h_n))
        return (1.0 - z) * n + z * h


def _mlp(dims: list[int], rng: np.random.Generator, out_gain: float,
         final_activation: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        lin = nn.Linear(a, b)
        last = i == len(dims) - 2
        _init_linear(lin, rng, out_gain if last and not final_activation else math.sqrt(2.0))
        layers.append(lin)
        if not last or final_activation:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class _TowNet(nn.Module):
    """Shared topology: CNN + vector MLP -> LayerNorm-GRU -> heads."""

    def __init__(self, in_channels: int, vec_in: int, conv_spec, mlp_width: int,
                 gru_width: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.vec_in = vec_in
        convs: list[nn.Module] = []
        prev = in_channels
        for (k, f, s) in conv_spec:
            conv = nn.Conv2d(prev, f, kernel_size=k, stride=s)
            _init_conv(conv, rng, math.sqrt(2.0))
            convs.append(conv)
            convs.append(nn.ReLU())
            prev = f
        self.conv = nn.Sequential(*convs)
        self.conv_out = conv_spec[-1][1]
        self.mlp = _mlp([vec_in, mlp_width, mlp_width], rng, math.sqrt(2.0), final_activation=True)
        self.gru = LayerNormGRUCell(self.conv_out + mlp_width, gru_width, rng)
        self.gru_width = gru_width

    def _check(self, vec: torch.Tensor, grid: torch.Tensor, h: torch.Tensor) -> None:
        if vec.shape[-1] != self.vec_in:
            raise ShapeMismatch(f"vector width {vec.shape[-1]} != {self.vec_in}")
        if grid.shape[-3:] != (self.in_channels, GRID_N, GRID_N):
            raise ShapeMismatch(
                f"grid shape {tuple(grid.shape[-3:])} != ({self.in_channels}, {GRID_N}, {GRID_N})"
            )
        if h.shape[-1] != self.gru_width:
            raise ShapeMismatch(f"hidden width {h.shape[-1]} != {self.gru_width}")

    def embed(self, vec: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
        """Pre-recurrent features: concat of conv stack output and vector MLP."""
        g = self.conv(grid).flatten(1)
        v = self.mlp(vec)
        return torch.cat([g, v], dim=1)

    def trunk(self, vec: torch.Tensor, grid: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        self._check(vec, grid, h)
        return self.gru(self.embed(vec, grid), h)

    def initial_hidden(self, batch: int = 1) -> torch.Tensor:
        return torch.zeros(batch, self.gru_width)


class ActorNet(_TowNet):
    """Decentralized policy: EgoObservation -> diagonal Gaussian over 3 actions.

    Parameter count is independent of team size by construction (input is
    always 12 + 3x57x57). With `sigma_max` unset the scale head is an
    unbounded softplus; setting it switches to a sigmoid interpolation in
    (sigma_min, sigma_max), which keeps exploration noise commensurate with
    the clamped action range instead of letting the surrogate inflate it.
    """

    def __init__(self, seed_or_rng: int | np.random.Generator = 0,
                 sigma_min: float = SIGMA_MIN,
                 sigma_max: float | None = None):
        rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
               else np.random.default_rng(seed_or_rng))
        if sigma_max is not None and sigma_max <= sigma_min:
            raise ValueError(f"sigma_max {sigma_max} must exceed sigma_min {sigma_min}")
        super().__init__(3, VEC_DIM, ACTOR_CONV, 128, ACTOR_HIDDEN, rng)
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.mean_head = _mlp([ACTOR_HIDDEN, 128, 128, ACTION_DIM], rng, 0.01, final_activation=False)
        self.var_head = _mlp([ACTOR_HIDDEN, 128, 128, ACTION_DIM], rng, 0.01, final_activation=False)

    def dist_params(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu = self.mean_head(h)
        s = self.var_head(h)
        if self.sigma_max is None:
            sigma = self.sigma_min + torch.nn.functional.softplus(s)
        else:
            sigma = self.sigma_min + (self.sigma_max - self.sigma_min) * torch.sigmoid(s)
        return mu, sigma

    def forward(self, vec: torch.Tensor, grid: torch.Tensor,
                h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h_new = self.trunk(vec, grid, h)
        mu, sigma = self.dist_params(h_new)
        return mu, sigma, h_new


class CriticNet(_TowNet):
    """Centralized value function for a fixed team size n (channels = 3n).

    `local_scope=True` builds the ablation critic that sees one agent's local
    observation only (3 channels, 12-dim vector, no privileged block).
    """

    def __init__(self, team_size: int, seed_or_rng: int | np.random.Generator = 0,
                 local_scope: bool = False):
        rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
               else np.random.default_rng(seed_or_rng))
        self.team_size = team_size
        self.local_scope = local_scope
        if local_scope:
            channels, vec_in = 3, VEC_DIM
        else:
            channels = 3 * team_size
            vec_in = VEC_DIM * team_size + 7 + team_size + 1
        super().__init__(channels, vec_in, CRITIC_CONV, 256, CRITIC_HIDDEN, rng)
        self.value_head = _mlp([CRITIC_HIDDEN, 256, 256, 1], rng, 1.0, final_activation=False)

    def value_of(self, h: torch.Tensor) -> torch.Tensor:
        return self.value_head(h).squeeze(-1)

    def forward(self, vec: torch.Tensor, grid: torch.Tensor,
                h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h_new = self.trunk(vec, grid, h)
        return self.value_of(h_new), h_new


# ---------------------------------------------------------------------------
# Single-observation functional wrappers (the spec op surface).

def actor_forward(
    net: ActorNet, obs: EgoObservation, h: torch.Tensor | None = None
) -> tuple[np.ndarray, np.ndarray, torch.Tensor]:
    if h is None:
        h = net.initial_hidden(1)
    vec = torch.from_numpy(np.ascontiguousarray(obs.vector, dtype=np.float32))[None]
    grid = torch.from_numpy(obs.grids.astype(np.float32))[None]
    with torch.no_grad():
        mu, sigma, h_new = net(vec, grid, h)
    return mu[0].numpy(), sigma[0].numpy(), h_new


def critic_forward(
    net: CriticNet, gs: GlobalState, h: torch.Tensor | None = None
) -> tuple[float, torch.Tensor]:
    if h is None:
        h = net.initial_hidden(1)
    vec = torch.from_numpy(np.ascontiguousarray(gs.vector, dtype=np.float32))[None]
    grid = torch.from_numpy(gs.grids.astype(np.float32))[None]
    with torch.no_grad():
        value, h_new = net(vec, grid, h)
    return float(value[0]), h_new


# ---------------------------------------------------------------------------
# Diagonal Gaussian operations (summed over the action dimension).

def gaussian_sample(mu: torch.Tensor, sigma: torch.Tensor,
                    eps: torch.Tensor) -> torch.Tensor:
    """Reparameterized sample given externally drawn standard normal eps."""
    return mu + sigma * eps


def gaussian_log_prob(mu: torch.Tensor, sigma: torch.Tensor,
                      x: torch.Tensor) -> torch.Tensor:
    z = (x - mu) / sigma
    return (-0.5 * z * z - torch.log(sigma) - 0.5 * LOG_2PI).sum(dim=-1)


def gaussian_entropy(sigma: torch.Tensor) -> torch.Tensor:
    return (torch.log(sigma) + 0.5 * (1.0 + LOG_2PI)).sum(dim=-1)


def gaussian_kl(mu_p: torch.Tensor, sigma_p: torch.Tensor,
                mu_q: torch.Tensor, sigma_q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) between diagonal Gaussians, summed over dimensions."""
    var_ratio = (sigma_p / sigma_q) ** 2
    delta = (mu_p - mu_q) / sigma_q
    return 0.5 * (var_ratio + delta * delta - 1.0 - torch.log(var_ratio)).sum(dim=-1)


def gaussian_ops(mu: torch.Tensor, sigma: torch.Tensor, action: torch.Tensor,
                 eps: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    out = {
        "log_prob": gaussian_log_prob(mu, sigma, action),
        "entropy": gaussian_entropy(sigma),
    }
    if eps is not None:
        out["sample"] = gaussian_sample(mu, sigma, eps)
    return out


def backward(loss: torch.Tensor) -> None:
    """Reverse-mode gradients for every parameter in the recorded graph."""
    loss.backward()


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
