"""Shared-reward multi-agent PPO with a centralized critic.

Rollout collection batches the shared-parameter actor across every
environment and agent, the critic across environments; episodes reset onto a
fixed pool of randomized scenarios. Updates run the clipped surrogate with an
entropy bonus, a clipped value loss against GAE returns, and an optional
knowledge-distillation penalty (mean closed-form Gaussian KL from frozen
teacher policies to the current one, KL(teacher || current)) evaluated on the
current minibatch. Recurrent credit assignment uses fixed-length BPTT chunks
whose initial hiddens are the ones stored during collection, with hidden
resets replayed from the done flags.

All randomness is drawn from explicit numpy generators; torch is used in
single-thread deterministic mode, so a seeded run is bit reproducible.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass

import numpy as np
import torch

from .env import TowEnv
from .nets import (
    ACTION_DIM,
    ActorNet,
    CriticNet,
    VEC_DIM,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
)
from .obs import GRID_N
from .sim import DEFAULT_SIM_PARAMS, Action, NonFiniteState, SimParams, Terminal
from .world import Scenario, WorldConfig, sample_scenario

CAUSE_NONFINITE = 4  # Terminal has 0..3; non-finite aborts get their own bucket


class NaNLoss(RuntimeError):
    """A loss component went non-finite; the offending minibatch was dumped."""


@dataclass(frozen=True)
class PpoHparams:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 8
    entropy_coef: float = 0.003
    lr: float = 3e-4
    grad_clip: float = 0.5
    value_clip: float = 0.2
    beta: float = 0.5
    chunk: int = 16
    nan_dump_dir: str | None = None


@dataclass(frozen=True)
class EpisodeStat:
    reward: float
    length: int
    cause: int  # Terminal value, or CAUSE_NONFINITE


@dataclass
class RolloutBatch:
    """Time-major on-policy batch.

    Shapes: T decision steps, E environments, n agents, V value streams
    (V = 1 for a centralized critic, V = n for the local-scope ablation).
    Rewards are shared across agents, so they carry no agent axis.
    """

    vec: np.ndarray        # [T, E, n, 12] float32
    grids: np.ndarray      # [T, E, n, 3, 57, 57] uint8
    actions: np.ndarray    # [T, E, n, 3] float32 (pre-clamp samples)
    logp: np.ndarray       # [T, E, n] float32
    rewards: np.ndarray    # [T, E] float32
    dones: np.ndarray      # [T, E] float32
    causes: np.ndarray     # [T, E] int8
    values: np.ndarray     # [T, E, V] float32
    gs_vec: np.ndarray | None  # [T, E, G] float32 (None for local-scope critic)
    actor_h: np.ndarray    # [T, E, n, H] float32, hidden fed into step t
    critic_h: np.ndarray   # [T, E, V, Hc] float32
    bootstrap: np.ndarray  # [E, V] float32, value of the post-rollout states

    def __post_init__(self) -> None:
        t, e, n = self.vec.shape[:3]
        v = self.values.shape[2]
        assert self.grids.shape == (t, e, n, 3, GRID_N, GRID_N)
        assert self.actions.shape == (t, e, n, ACTION_DIM)
        assert self.logp.shape == (t, e, n)
        assert self.rewards.shape == (t, e)
        assert self.dones.shape == (t, e)
        assert self.values.shape == (t, e, v) and v in (1, n)
        assert self.bootstrap.shape == (e, v)

    @property
    def num_steps(self) -> int:
        return self.vec.shape[0]

    @property
    def num_envs(self) -> int:
        return self.vec.shape[1]

    @property
    def team_size(self) -> int:
        return self.vec.shape[2]


class ScenarioPool:
    """Fixed pool of randomized scenarios; resets cycle through it.

    Scenario j is sampled from seed 2*(seed_base + j): the even half of the
    seed space is reserved for training, odd seeds for held-out evaluation.
    """

    def __init__(self, template: WorldConfig, team_size: int, size: int,
                 seed_base: int = 0):
        self.template = template
        self.team_size = team_size
        self.size = size
        self.seed_base = seed_base
        self._cache: dict[int, Scenario] = {}

    def scenario(self, index: int) -> Scenario:
        j = index % self.size
        if j not in self._cache:
            rng = np.random.default_rng(2 * (self.seed_base + j))
            self._cache[j] = sample_scenario(rng, self.team_size, self.template)
        return self._cache[j]


class RolloutCollector:
    """Steps a bank of environments with the current actor/critic.

    Keeps per-environment GRU hiddens across collect() calls, zeroing them on
    episode resets, and records per-episode reward/length/cause statistics.
    """

    def __init__(self, actor: ActorNet, critic: CriticNet, pool: ScenarioPool,
                 num_envs: int, rng: np.random.Generator,
                 params: SimParams = DEFAULT_SIM_PARAMS):
        self.actor = actor
        self.critic = critic
        self.pool = pool
        self.params = params
        self.rng = rng
        self.num_envs = num_envs
        self.team_size = pool.team_size
        self.v_streams = self.team_size if critic.local_scope else 1
        self._reset_counter = 0
        self.envs = [self._fresh_env() for _ in range(num_envs)]
        self.actor_hid = torch.zeros(num_envs, self.team_size, actor.gru_width)
        self.critic_hid = torch.zeros(num_envs, self.v_streams, critic.gru_width)
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray | None]] | None = None
        self.episode_stats: list[EpisodeStat] = []
        self.total_steps = 0

    def _fresh_env(self) -> TowEnv:
        env = TowEnv(self.pool.scenario(self._reset_counter), self.params)
        self._reset_counter += 1
        return env

    def _encode(self, env: TowEnv) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """(vec [n,12] f32, grids [n,3,57,57] u8, gs_vec [G] f32 or None)."""
        obs = env.observe_all()
        vec = np.stack([o.vector for o in obs]).astype(np.float32)
        grids = np.stack([o.grids for o in obs]).astype(np.uint8)
        gs = None
        if not self.critic.local_scope:
            gs = env.global_state(obs).vector.astype(np.float32)
        return vec, grids, gs

    def _critic_values(self, vec_t: torch.Tensor, grids_t: torch.Tensor,
                       gs_t: torch.Tensor | None,
                       persist: bool) -> np.ndarray:
        """Values [E, V]; advances the stored critic hidden when persist."""
        e, n = self.num_envs, self.team_size
        if self.critic.local_scope:
            flat_h = self.critic_hid.reshape(e * n, -1)
            v, h_new = self.critic(vec_t.reshape(e * n, VEC_DIM),
                                   grids_t.reshape(e * n, 3, GRID_N, GRID_N), flat_h)
            values = v.reshape(e, n)
        else:
            grid_cat = grids_t.reshape(e, 3 * n, GRID_N, GRID_N)
            flat_h = self.critic_hid.reshape(e, -1)
            v, h_new = self.critic(gs_t, grid_cat, flat_h)
            values = v.reshape(e, 1)
        if persist:
            self.critic_hid = h_new.reshape(self.critic_hid.shape)
        return values.numpy().astype(np.float32)

    def collect(self, horizon: int) -> RolloutBatch:
        t_len, e, n, v = horizon, self.num_envs, self.team_size, self.v_streams
        vec = np.zeros((t_len, e, n, VEC_DIM), dtype=np.float32)
        grids = np.zeros((t_len, e, n, 3, GRID_N, GRID_N), dtype=np.uint8)
        actions = np.zeros((t_len, e, n, ACTION_DIM), dtype=np.float32)
        logp = np.zeros((t_len, e, n), dtype=np.float32)
        rewards = np.zeros((t_len, e), dtype=np.float32)
        dones = np.zeros((t_len, e), dtype=np.float32)
        causes = np.zeros((t_len, e), dtype=np.int8)
        values = np.zeros((t_len, e, v), dtype=np.float32)
        gs_dim = None if self.critic.local_scope else self.critic.vec_in
        gs_vec = None if gs_dim is None else np.zeros((t_len, e, gs_dim), dtype=np.float32)
        actor_h = np.zeros((t_len, e, n, self.actor.gru_width), dtype=np.float32)
        critic_h = np.zeros((t_len, e, v, self.critic.gru_width), dtype=np.float32)

        with torch.no_grad():
            if self._pending is None:
                self._pending = [self._encode(env) for env in self.envs]
            for t in range(t_len):
                pend = self._pending
                vec[t] = np.stack([p[0] for p in pend])
                grids[t] = np.stack([p[1] for p in pend])
                if gs_vec is not None:
                    gs_vec[t] = np.stack([p[2] for p in pend])
                actor_h[t] = self.actor_hid.numpy()
                critic_h[t] = self.critic_hid.numpy()

                vec_t = torch.from_numpy(vec[t])
                grids_t = torch.from_numpy(grids[t]).float()
                gs_t = None if gs_vec is None else torch.from_numpy(gs_vec[t])
                values[t] = self._critic_values(vec_t, grids_t, gs_t, persist=True)

                mu, sigma, h_new = self.actor(
                    vec_t.reshape(e * n, VEC_DIM),
                    grids_t.reshape(e * n, 3, GRID_N, GRID_N),
                    self.actor_hid.reshape(e * n, -1))
                self.actor_hid = h_new.reshape(e, n, -1)
                eps = torch.from_numpy(
                    self.rng.standard_normal((e * n, ACTION_DIM)).astype(np.float32))
                act = mu + sigma * eps
                lp = gaussian_log_prob(mu, sigma, act)
                actions[t] = act.numpy().reshape(e, n, ACTION_DIM)
                logp[t] = lp.numpy().reshape(e, n)

                for i, env in enumerate(self.envs):
                    acts = [Action(*actions[t, i, a]) for a in range(n)]
                    try:
                        out = env.step(acts)
                        rewards[t, i] = out.reward
                        terminal = out.terminal
                        cause = int(terminal)
                    except NonFiniteState:
                        rewards[t, i] = 0.0
                        terminal = Terminal.COLLISION  # placeholder; cause below
                        cause = CAUSE_NONFINITE
                    ended = cause == CAUSE_NONFINITE or terminal != Terminal.RUNNING
                    if ended:
                        dones[t, i] = 1.0
                        causes[t, i] = cause
                        self.episode_stats.append(EpisodeStat(
                            reward=float(env.episode_reward),
                            length=int(env.state.decision_step),
                            cause=cause))
                        self.envs[i] = self._fresh_env()
                        self.actor_hid[i].zero_()
                        self.critic_hid[i].zero_()
                self._pending = [self._encode(env) for env in self.envs]
                self.total_steps += e

            pend = self._pending
            vec_b = torch.from_numpy(np.stack([p[0] for p in pend]))
            grids_b = torch.from_numpy(np.stack([p[1] for p in pend])).float()
            gs_b = None if gs_vec is None else torch.from_numpy(np.stack([p[2] for p in pend]))
            bootstrap = self._critic_values(vec_b, grids_b, gs_b, persist=False)

        return RolloutBatch(vec=vec, grids=grids, actions=actions, logp=logp,
                            rewards=rewards, dones=dones, causes=causes,
                            values=values, gs_vec=gs_vec, actor_h=actor_h,
                            critic_h=critic_h, bootstrap=bootstrap)

    def drain_stats(self) -> list[EpisodeStat]:
        stats, self.episode_stats = self.episode_stats, []
        return stats


def collect_rollouts(policy: ActorNet, critic: CriticNet,
                     envs: RolloutCollector, horizon: int) -> RolloutBatch:
    """Collect `horizon` decision steps from every environment in the pool."""
    if envs.actor is not policy or envs.critic is not critic:
        raise ValueError("collector was built for different networks")
    return envs.collect(horizon)


def compute_gae(rewards, values, dones, bootstrap, gamma: float = 0.99,
                lam: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with resets at done flags.

    Accepts [T], [T, E] or [T, E, V] arrays; rewards and dones broadcast
    against trailing value-stream axes. Returns (advantages, returns) in
    float64 with the shape of `values`; returns = advantages + values.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    while r.ndim < v.ndim:
        r = r[..., None]
    while d.ndim < v.ndim:
        d = d[..., None]
    boot = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), v.shape[1:])
    adv = np.zeros_like(v)
    gae = np.zeros(v.shape[1:], dtype=np.float64)
    next_value = boot
    for t in range(v.shape[0] - 1, -1, -1):
        mask = 1.0 - d[t]
        delta = r[t] + gamma * next_value * mask - v[t]
        gae = delta + gamma * lam * mask * gae
        adv[t] = gae
        next_value = v[t]
    return adv, adv + v


class TeacherSet:
    """Frozen actor snapshots from completed curriculum stages."""

    def __init__(self) -> None:
        self._teachers: list[ActorNet] = []

    def snapshot(self, actor: ActorNet) -> None:
        frozen = copy.deepcopy(actor)
        frozen.eval()
        for p in frozen.parameters():
            p.requires_grad_(False)
        self._teachers.append(frozen)

    def __len__(self) -> int:
        return len(self._teachers)

    def __iter__(self):
        return iter(self._teachers)


def _gather(arr: np.ndarray, t_idx: np.ndarray, e_idx: np.ndarray) -> torch.Tensor:
    """Chunk gather: arr [T, E, ...] -> tensor [L, B, ...]."""
    out = arr[t_idx, e_idx]
    if out.dtype == np.uint8:
        return torch.from_numpy(out).float()
    return torch.from_numpy(out)


def _run_gru(net, feats: torch.Tensor, h0: torch.Tensor,
             prev_done: torch.Tensor) -> torch.Tensor:
    """Unroll a GRU cell over a chunk, re-playing collection-time resets.

    feats [L, B, F]; h0 [B, H]; prev_done [L, B] with prev_done[0] == 0 and
    prev_done[t] = done flag of step t-1 broadcast to B rows. Returns hidden
    states after each step, [L, B, H].
    """
    h = h0
    outs = []
    for t in range(feats.shape[0]):
        h = h * (1.0 - prev_done[t]).unsqueeze(-1)
        h = net.gru(feats[t], h)
        outs.append(h)
    return torch.stack(outs)


def _actor_chunk_dists(actor: ActorNet, vec: torch.Tensor, grids: torch.Tensor,
                       h0: torch.Tensor, prev_done: torch.Tensor
                       ) -> tuple[torch.Tensor, torch.Tensor]:
    """Distribution params over a chunk. vec [L, B, n, 12], grids
    [L, B, n, 3, N, N], h0 [B, n, H], prev_done [L, B]. Returns mu/sigma
    [L, B, n, 3]."""
    l, b, n = vec.shape[:3]
    feats = actor.embed(vec.reshape(l * b * n, VEC_DIM),
                        grids.reshape(l * b * n, 3, GRID_N, GRID_N))
    feats = feats.reshape(l, b * n, -1)
    done_rep = prev_done.repeat_interleave(n, dim=1)
    hs = _run_gru(actor, feats, h0.reshape(b * n, -1), done_rep)
    mu, sigma = actor.dist_params(hs.reshape(l * b * n, -1))
    return mu.reshape(l, b, n, ACTION_DIM), sigma.reshape(l, b, n, ACTION_DIM)


def mappo_update(batch: RolloutBatch, policy: ActorNet, critic: CriticNet,
                 teachers: TeacherSet | None, hp: PpoHparams,
                 actor_opt: torch.optim.Optimizer | None = None,
                 critic_opt: torch.optim.Optimizer | None = None,
                 rng: np.random.Generator | None = None) -> dict[str, float]:
    """One PPO update over the batch; returns averaged diagnostics.

    Total actor objective: clipped surrogate - entropy_coef * entropy
    + beta * mean_over_teachers(KL(teacher || current)). Critic: clipped MSE
    against GAE returns. Advantages are normalized once per update.
    """
    t_len, e, n = batch.num_steps, batch.num_envs, batch.team_size
    if t_len % hp.chunk != 0:
        raise ValueError(f"horizon {t_len} not divisible by chunk {hp.chunk}")
    if actor_opt is None:
        actor_opt = torch.optim.Adam(policy.parameters(), lr=hp.lr)
    if critic_opt is None:
        critic_opt = torch.optim.Adam(critic.parameters(), lr=hp.lr)
    if rng is None:
        rng = np.random.default_rng(0)

    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones,
                           batch.bootstrap, hp.gamma, hp.lam)
    adv_mean, adv_std = float(adv.mean()), float(adv.std())
    adv_n = (adv - adv_mean) / (adv_std + 1e-8)
    v_streams = batch.values.shape[2]
    adv_agents = np.broadcast_to(adv_n, (t_len, e, n)) if v_streams == 1 else adv_n
    adv_agents = np.ascontiguousarray(adv_agents, dtype=np.float32)
    ret32 = ret.astype(np.float32)

    # prev_done[t] = dones[t-1]; chunk starts always use the stored hidden.
    prev_done = np.zeros_like(batch.dones)
    prev_done[1:] = batch.dones[:-1]

    chunks = [(e_i, t0) for t0 in range(0, t_len, hp.chunk) for e_i in range(e)]
    chunks = np.array(chunks, dtype=np.int64)
    l = hp.chunk
    arange_l = np.arange(l)[:, None]

    teacher_list = list(teachers) if teachers is not None else []
    kd_weight = hp.beta if teacher_list else 0.0
    agg: dict[str, float] = {}
    nb = 0
    ratio_dev_first = 0.0   # max |ratio-1| across epoch-0 minibatches
    ratio_dev_pre = 0.0     # same, on the first minibatch before any step

    for epoch in range(hp.epochs):
        order = rng.permutation(len(chunks))
        for mb_idx in np.array_split(order, hp.minibatches):
            if mb_idx.size == 0:
                continue
            sel = chunks[mb_idx]
            b = sel.shape[0]
            t_idx = sel[:, 1][None, :] + arange_l          # [L, B]
            e_idx = np.broadcast_to(sel[:, 0][None, :], (l, b))

            vec = _gather(batch.vec, t_idx, e_idx)          # [L,B,n,12]
            grd = _gather(batch.grids, t_idx, e_idx)        # [L,B,n,3,N,N]
            act = _gather(batch.actions, t_idx, e_idx)      # [L,B,n,3]
            lp_old = _gather(batch.logp, t_idx, e_idx)      # [L,B,n]
            adv_t = _gather(adv_agents, t_idx, e_idx)       # [L,B,n]
            pdone = _gather(prev_done.astype(np.float32), t_idx, e_idx)
            pdone[0] = 0.0
            h0_a = torch.from_numpy(batch.actor_h[sel[:, 1], sel[:, 0]])  # [B,n,H]

            mu, sigma = _actor_chunk_dists(policy, vec, grd, h0_a, pdone)
            lp_new = gaussian_log_prob(mu, sigma, act)
            entropy = gaussian_entropy(sigma).mean()
            ratio = torch.exp(lp_new - lp_old)
            if epoch == 0:
                dev = float((ratio - 1.0).abs().max().detach())
                ratio_dev_first = max(ratio_dev_first, dev)
                if nb == 0:
                    ratio_dev_pre = dev
            clipped = torch.clamp(ratio, 1.0 - hp.clip, 1.0 + hp.clip)
            surrogate = -torch.min(ratio * adv_t, clipped * adv_t).mean()

            kd = torch.zeros(())
            if teacher_list:
                # Teachers replay the same chunks from the same stored
                # hiddens, so a teacher identical to the current policy
                # yields exactly zero KL.
                with torch.no_grad():
                    t_params = []
                    for teacher in teacher_list:
                        t_params.append(_actor_chunk_dists(teacher, vec, grd, h0_a, pdone))
                kd = torch.stack([
                    gaussian_kl(mu_t, sg_t, mu, sigma).mean()
                    for (mu_t, sg_t) in t_params]).mean()
            actor_loss = surrogate - hp.entropy_coef * entropy + kd_weight * kd

            # Critic on the same chunks.
            v_old = _gather(batch.values, t_idx, e_idx)     # [L,B,V]
            ret_t = _gather(ret32, t_idx, e_idx)            # [L,B,V]
            h0_c = torch.from_numpy(batch.critic_h[sel[:, 1], sel[:, 0]])  # [B,V,Hc]
            if critic.local_scope:
                feats = critic.embed(vec.reshape(l * b * n, VEC_DIM),
                                     grd.reshape(l * b * n, 3, GRID_N, GRID_N))
                feats = feats.reshape(l, b * n, -1)
                done_rep = pdone.repeat_interleave(n, dim=1)
                hs = _run_gru(critic, feats, h0_c.reshape(b * n, -1), done_rep)
                v_new = critic.value_of(hs.reshape(l * b * n, -1)).reshape(l, b, n)
            else:
                gs = _gather(batch.gs_vec, t_idx, e_idx)    # [L,B,G]
                grid_cat = grd.reshape(l, b, 3 * n, GRID_N, GRID_N)
                feats = critic.embed(gs.reshape(l * b, -1),
                                     grid_cat.reshape(l * b, 3 * n, GRID_N, GRID_N))
                feats = feats.reshape(l, b, -1)
                hs = _run_gru(critic, feats, h0_c.reshape(b, -1), pdone)
                v_new = critic.value_of(hs.reshape(l * b, -1)).reshape(l, b, 1)
            v_clip = v_old + torch.clamp(v_new - v_old, -hp.value_clip, hp.value_clip)
            value_loss = 0.5 * torch.max((v_new - ret_t) ** 2,
                                         (v_clip - ret_t) ** 2).mean()

            total_probe = actor_loss + value_loss
            if not torch.isfinite(total_probe):
                _dump_minibatch(hp, batch, sel, actor_loss, value_loss)
                raise NaNLoss(
                    f"non-finite loss: actor={float(actor_loss.detach())} "
                    f"value={float(value_loss.detach())}")

            actor_opt.zero_grad(set_to_none=True)
            actor_loss.backward()
            g_a = torch.nn.utils.clip_grad_norm_(policy.parameters(), hp.grad_clip)
            actor_opt.step()
            critic_opt.zero_grad(set_to_none=True)
            value_loss.backward()
            g_c = torch.nn.utils.clip_grad_norm_(critic.parameters(), hp.grad_clip)
            critic_opt.step()

            with torch.no_grad():
                approx_kl = float((lp_old - lp_new).mean())
                clip_frac = float(((ratio - 1.0).abs() > hp.clip).float().mean())
            for key, val in (("surrogate", float(surrogate.detach())),
                             ("value_loss", float(value_loss.detach())),
                             ("entropy", float(entropy.detach())),
                             ("kd", float(kd.detach())),
                             ("actor_loss", float(actor_loss.detach())),
                             ("approx_kl", approx_kl),
                             ("clip_frac", clip_frac),
                             ("grad_norm_actor", float(g_a)),
                             ("grad_norm_critic", float(g_c))):
                agg[key] = agg.get(key, 0.0) + val
            nb += 1

    diag = {k: v / nb for k, v in agg.items()}
    diag["ratio_dev_first_epoch"] = ratio_dev_first
    diag["ratio_dev_pre_step"] = ratio_dev_pre
    diag["adv_mean_raw"] = adv_mean
    diag["adv_std_raw"] = adv_std
    diag["minibatches_run"] = float(nb)
    diag["teachers"] = float(len(teacher_list))
    return diag


def _dump_minibatch(hp: PpoHparams, batch: RolloutBatch, sel: np.ndarray,
                    actor_loss: torch.Tensor, value_loss: torch.Tensor) -> None:
    if hp.nan_dump_dir is None:
        return
    os.makedirs(hp.nan_dump_dir, exist_ok=True)
    path = os.path.join(hp.nan_dump_dir, "nan_minibatch.npz")
    np.savez(path, sel=sel, vec=batch.vec, actions=batch.actions,
             logp=batch.logp, rewards=batch.rewards, dones=batch.dones,
             values=batch.values,
             actor_loss=float(actor_loss.detach()),
             value_loss=float(value_loss.detach()))
