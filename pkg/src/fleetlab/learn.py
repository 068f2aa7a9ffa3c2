"""Two-level policy training with alternating PPO updates.

Each episode is one simulated day. The deployment head acts once per episode
and its advantage is the Monte-Carlo residual (terminal reward minus critic).
The shared rebalancing head acts per vehicle per interval and uses
generalized advantage estimation over each vehicle's trajectory. Updates
alternate on a fixed cadence: episodes that are multiples of the update
period train the deployment level, all others train the rebalancing level,
and the trained level's buffer is cleared after its update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .forecast import predict
from .nets import Mlp, PolicyBundle
from .sched_asmv import (HighLevelObservation, LowLevelObservation, encode_high,
                         encode_low, masked_log_softmax, smart_high_act)
from .sched_trad import TradScheduleRequest
from .util import as_rng
from .world import feasible_targets


def gae_advantages(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimation with a zero terminal bootstrap.

    delta_t = r_t + gamma * V(s_{t+1}) - V(s_t), advantage_t follows the
    reverse recursion adv_t = delta_t + gamma * lam * adv_{t+1}.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size == 0 or r.shape != v.shape or r.ndim != 1:
        raise ValueError("rewards and values must be equal-length nonempty 1-D")
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(r.size - 1, -1, -1):
        next_v = v[t + 1] if t + 1 < r.size else 0.0
        delta = r[t] + gamma * next_v - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv


def mc_advantage(terminal_reward: float, value: float) -> float:
    """Monte-Carlo advantage for the once-per-episode deployment action."""
    return float(terminal_reward) - float(value)


@dataclass
class TrainConfig:
    episodes: int = 1000
    update_period: int = 5          # deployment level trains every Nth episode
    lr_high: float = 3e-4
    lr_low: float = 1e-4
    clip_ratio: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    minibatch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    buffer_capacity: int = 100_000
    train_high: bool = True
    train_low: bool = True

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")


class AdamState:
    """Adaptive-moment optimizer state for one network."""

    def __init__(self, net: Mlp):
        self.m = [np.zeros_like(w) for pair in zip(net.weights, net.biases)
                  for w in pair]
        self.v = [np.zeros_like(w) for pair in zip(net.weights, net.biases)
                  for w in pair]
        self.t = 0

    def step(self, net: Mlp, grads, lr: float, beta1: float, beta2: float,
             eps: float) -> None:
        flat = [g for pair in grads for g in pair]
        self.t += 1
        lr_t = lr * np.sqrt(1.0 - beta2 ** self.t) / (1.0 - beta1 ** self.t)
        params = [p for pair in zip(net.weights, net.biases) for p in pair]
        for p, g, m, v in zip(params, flat, self.m, self.v):
            m += (1.0 - beta1) * (g - m)
            v += (1.0 - beta2) * (g * g - v)
            p -= lr_t * m / (np.sqrt(v) + eps)


@dataclass
class LowTransition:
    episode: int
    vehicle: int
    interval: int
    obs_vec: np.ndarray
    action: int
    mask: np.ndarray
    logp: float
    value: float
    reward: float = 0.0


@dataclass
class HighTuple:
    episode: int
    obs_vec: np.ndarray
    counts: np.ndarray
    logp: float
    value: float
    terminal_reward: float = 0.0


class ReplayBuffer:
    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self.low: list[LowTransition] = []
        self.high: list[HighTuple] = []

    def store_low(self, tr: LowTransition) -> None:
        self.low.append(tr)
        if len(self.low) > self.capacity:
            del self.low[: len(self.low) - self.capacity]

    def store_high(self, tup: HighTuple) -> None:
        self.high.append(tup)
        if len(self.high) > self.capacity:
            del self.high[: len(self.high) - self.capacity]

    def clear_low(self) -> None:
        self.low.clear()

    def clear_high(self) -> None:
        self.high.clear()


@dataclass
class PpoBatch:
    """One minibatch: encoded states plus the data PPO needs to re-evaluate
    the stored actions. `counts` is set for the deployment head (multiset
    actions), `actions`/`masks` for the per-vehicle head."""

    inputs: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    actions: np.ndarray | None = None
    masks: np.ndarray | None = None
    counts: np.ndarray | None = None


@dataclass
class PpoDiagnostics:
    policy_loss: float
    value_loss: float
    clip_fraction: float
    skipped: bool = False


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _batch_logp_and_grad(policy: Mlp, batch: PpoBatch):
    """New log-probabilities of stored actions and d(logp)/d(logits)."""
    logits, cache = policy.forward_cached(batch.inputs)
    b, n = logits.shape
    if batch.counts is not None:
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        logp_vec = np.log(p)
        new_logp = (batch.counts * logp_vec).sum(axis=1)
        k = batch.counts.sum(axis=1, keepdims=True)
        dlogits = batch.counts - k * p
    else:
        masked = np.where(batch.masks, logits, -np.inf)
        z = masked - masked.max(axis=1, keepdims=True)
        expz = np.where(batch.masks, np.exp(z), 0.0)
        p = expz / expz.sum(axis=1, keepdims=True)
        rows = np.arange(b)
        with np.errstate(divide="ignore"):
            logp_all = np.where(batch.masks, np.log(np.maximum(p, 1e-300)), -np.inf)
        new_logp = logp_all[rows, batch.actions]
        onehot = np.zeros((b, n))
        onehot[rows, batch.actions] = 1.0
        dlogits = onehot - p
    return new_logp, dlogits, cache


def ppo_update(policy: Mlp, critic: Mlp, batch: PpoBatch, clip_ratio: float,
               lr: float, policy_opt: AdamState, critic_opt: AdamState,
               beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> PpoDiagnostics:
    """One clipped-surrogate gradient step on the policy and a squared-error
    step on the critic.

    The loss is -mean(min(r*A, clip(r, 1-eps, 1+eps)*A)) + 0.5*mean((V-G)^2)
    with r the new/old probability ratio; samples whose ratio is clipped on
    the adverse side contribute exactly zero policy gradient. Advantages are
    expected to be normalized by the caller. Non-finite gradients skip the
    update and set the `skipped` flag.
    """
    b = batch.inputs.shape[0]
    if b == 0:
        raise ValueError("minibatch must be nonempty")
    adv = batch.advantages
    new_logp, dlogits_dlogp, cache = _batch_logp_and_grad(policy, batch)
    ratio = np.exp(new_logp - batch.old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -float(surrogate.mean())
    clip_fraction = float((unclipped > clipped).mean())

    # d surrogate / d logp is r*A on the unclipped branch and 0 when clipped
    active = (unclipped <= clipped).astype(float)
    coeff = -(active * ratio * adv / b)[:, None]
    policy_grads, _ = policy.backward(cache, coeff * dlogits_dlogp)

    values, vcache = critic.forward_cached(batch.inputs)
    err = values[:, 0] - batch.returns
    value_loss = 0.5 * float((err ** 2).mean())
    critic_grads, _ = critic.backward(vcache, (err / b)[:, None])

    finite = all(np.all(np.isfinite(g)) for pair in policy_grads for g in pair)
    finite = finite and all(np.all(np.isfinite(g)) for pair in critic_grads
                            for g in pair)
    if not finite:
        return PpoDiagnostics(policy_loss, value_loss, clip_fraction, skipped=True)

    policy_opt.step(policy, policy_grads, lr, beta1, beta2, eps)
    critic_opt.step(critic, critic_grads, lr, beta1, beta2, eps)
    return PpoDiagnostics(policy_loss, value_loss, clip_fraction)


@dataclass
class EpisodeEnv:
    """Everything one training episode needs, produced by an env factory."""

    region_map: object
    config: object
    demand: object
    s_pre_trad: np.ndarray
    predictor: object
    trad_sched: object
    asmv_count: int
    fault_rate: float = 0.0
    reset_seed: object = None


@dataclass
class CurveRow:
    episode: int
    d_rate: float
    high_loss: float
    low_loss: float
    clip_fraction: float


@dataclass
class TrainResult:
    policy: PolicyBundle
    curves: list
    skipped_updates: int = 0

    def curves_csv(self) -> str:
        lines = ["episode,D_rate,high_loss,low_loss,clip_frac"]
        for row in self.curves:
            lines.append(f"{row.episode},{row.d_rate:.6f},{row.high_loss:.6f},"
                         f"{row.low_loss:.6f},{row.clip_fraction:.6f}")
        return "\n".join(lines) + "\n"


def _collect_episode(policy: PolicyBundle, env: EpisodeEnv, buffer: ReplayBuffer,
                     episode: int, rng, cfg: TrainConfig):
    """Roll out one day with sampled actions, storing all transitions."""
    wc = env.config
    t_total = wc.intervals_per_day
    state = engine.reset(wc, env.region_map, env.s_pre_trad, env.demand,
                         env.asmv_count, env.fault_rate, seed=env.reset_seed)

    request = TradScheduleRequest(
        s_pre_trad=state.trad_counts.copy(),
        predicted_demand=predict(env.predictor, 0, t_total),
        fleet_total=state.trad_total)
    s0_trad = np.asarray(env.trad_sched.allocate(request), dtype=np.int64)
    engine.deploy_traditional(state, s0_trad)

    high_obs = HighLevelObservation(
        trad_deployment=s0_trad.copy(),
        predicted_horizon=predict(env.predictor, 0, policy.horizon))
    active = sum(1 for v in state.asmvs if not v.faulted)
    if cfg.train_high:
        alloc, logp = smart_high_act(high_obs, policy, active, mode="sample",
                                     seed=rng)
    else:
        # reduced variant: uniform spread, nothing to learn at this level
        from .sched_asmv import uniform_allocation
        alloc = uniform_allocation(env.region_map.region_count, active)
        logp = 0.0
    x_high = encode_high(high_obs)
    v_high = float(policy.high_critic.forward(x_high)[0])
    engine.deploy_asmv(state, alloc)

    thr = wc.battery_threshold_miles
    last_low_index: dict[int, int] = {}
    for t in range(t_total):
        predicted_next = predict(env.predictor, t, 1)[0]
        trad_snapshot = state.trad_counts.copy()
        auto_snapshot = engine.aggregate(state)
        actions = {}
        for v in state.asmvs:
            if not v.is_available(thr):
                continue
            if not cfg.train_low:
                actions[v.vid] = v.location     # reduced variant: stay put
                continue
            obs = LowLevelObservation(
                vehicle_id=v.vid, own_location=v.location,
                trad_counts=trad_snapshot, auto_counts=auto_snapshot,
                predicted_next=predicted_next, own_battery=v.battery,
                interval=t)
            x = encode_low(obs, t_total, wc.battery_capacity_miles)
            logits = policy.low_policy.forward(x)
            mask = np.zeros(logits.shape[0], dtype=bool)
            mask[feasible_targets(env.region_map, v.location, v.battery,
                                  wc.move_range_miles)] = True
            logp_all = masked_log_softmax(logits, mask)
            p = np.exp(logp_all)
            p /= p.sum()
            a = int(rng.choice(p.size, p=p))
            value = float(policy.low_critic.forward(x)[0])
            buffer.store_low(LowTransition(
                episode=episode, vehicle=v.vid, interval=t, obs_vec=x,
                action=a, mask=mask, logp=float(logp_all[a]), value=value))
            last_low_index[v.vid] = len(buffer.low) - 1
            actions[v.vid] = a
        engine.step(state, env.demand.interval(t), actions)

    d_rate = (state.served_total / state.demand_total
              if state.demand_total > 0 else 1.0)
    # terminal day reward lands on each vehicle's final stored transition
    for idx in last_low_index.values():
        buffer.low[idx].reward = d_rate
    if cfg.train_high:
        buffer.store_high(HighTuple(episode=episode, obs_vec=x_high,
                                    counts=alloc.astype(float), logp=logp,
                                    value=v_high, terminal_reward=d_rate))
    return d_rate


def _update_high(policy: PolicyBundle, buffer: ReplayBuffer, cfg: TrainConfig,
                 rng, opts) -> tuple[float, float, int]:
    tuples = buffer.high
    if not tuples:
        return np.nan, np.nan, 0
    x = np.stack([t.obs_vec for t in tuples])
    counts = np.stack([t.counts for t in tuples])
    old_logp = np.array([t.logp for t in tuples])
    returns = np.array([t.terminal_reward for t in tuples])
    adv = np.array([mc_advantage(t.terminal_reward, t.value) for t in tuples])

    order = rng.permutation(len(tuples))
    losses, clips, skipped = [], [], 0
    for start in range(0, len(order), cfg.minibatch_size):
        idx = order[start:start + cfg.minibatch_size]
        batch = PpoBatch(inputs=x[idx], old_logp=old_logp[idx],
                         advantages=normalize_advantages(adv[idx]),
                         returns=returns[idx], counts=counts[idx])
        diag = ppo_update(policy.high_policy, policy.high_critic, batch,
                          cfg.clip_ratio, cfg.lr_high, opts["high_policy"],
                          opts["high_critic"], cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps)
        losses.append(diag.policy_loss + diag.value_loss)
        clips.append(diag.clip_fraction)
        skipped += int(diag.skipped)
    buffer.clear_high()
    return float(np.mean(losses)), float(np.mean(clips)), skipped


def _update_low(policy: PolicyBundle, buffer: ReplayBuffer, cfg: TrainConfig,
                rng, opts) -> tuple[float, float, int]:
    transitions = buffer.low
    if not transitions:
        return np.nan, np.nan, 0
    # per-(episode, vehicle) trajectories in stored (time) order
    trajectories: dict[tuple[int, int], list[int]] = {}
    for k, tr in enumerate(transitions):
        trajectories.setdefault((tr.episode, tr.vehicle), []).append(k)
    advantages = np.zeros(len(transitions))
    returns = np.zeros(len(transitions))
    for idx_list in trajectories.values():
        rewards = np.array([transitions[k].reward for k in idx_list])
        values = np.array([transitions[k].value for k in idx_list])
        adv = gae_advantages(rewards, values, cfg.discount, cfg.gae_lambda)
        for pos, k in enumerate(idx_list):
            advantages[k] = adv[pos]
            returns[k] = adv[pos] + values[pos]

    x = np.stack([tr.obs_vec for tr in transitions])
    actions = np.array([tr.action for tr in transitions])
    masks = np.stack([tr.mask for tr in transitions])
    old_logp = np.array([tr.logp for tr in transitions])

    order = rng.permutation(len(transitions))
    losses, clips, skipped = [], [], 0
    for start in range(0, len(order), cfg.minibatch_size):
        idx = order[start:start + cfg.minibatch_size]
        batch = PpoBatch(inputs=x[idx], old_logp=old_logp[idx],
                         advantages=normalize_advantages(advantages[idx]),
                         returns=returns[idx], actions=actions[idx],
                         masks=masks[idx])
        diag = ppo_update(policy.low_policy, policy.low_critic, batch,
                          cfg.clip_ratio, cfg.lr_low, opts["low_policy"],
                          opts["low_critic"], cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps)
        losses.append(diag.policy_loss + diag.value_loss)
        clips.append(diag.clip_fraction)
        skipped += int(diag.skipped)
    buffer.clear_low()
    return float(np.mean(losses)), float(np.mean(clips)), skipped


def train(policy: PolicyBundle, env_factory, cfg: TrainConfig,
          seed=0) -> TrainResult:
    """Run the alternating two-level training loop.

    `env_factory(episode_index)` supplies each day's EpisodeEnv. Episodes are
    1-based; episode e trains the deployment level when e % update_period ==
    0 and the rebalancing level otherwise. Passing an already-trained policy
    resumes from its parameters.
    """
    rng = as_rng(seed)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    opts = {"high_policy": AdamState(policy.high_policy),
            "high_critic": AdamState(policy.high_critic),
            "low_policy": AdamState(policy.low_policy),
            "low_critic": AdamState(policy.low_critic)}
    curves: list[CurveRow] = []
    skipped_total = 0
    for episode in range(1, cfg.episodes + 1):
        env = env_factory(episode)
        d_rate = _collect_episode(policy, env, buffer, episode, rng, cfg)
        high_loss = low_loss = clip = np.nan
        if episode % cfg.update_period == 0:
            if cfg.train_high:
                high_loss, clip, sk = _update_high(policy, buffer, cfg, rng, opts)
                skipped_total += sk
        else:
            if cfg.train_low:
                low_loss, clip, sk = _update_low(policy, buffer, cfg, rng, opts)
                skipped_total += sk
        curves.append(CurveRow(episode=episode, d_rate=d_rate,
                               high_loss=high_loss, low_loss=low_loss,
                               clip_fraction=clip))
    return TrainResult(policy=policy, curves=curves,
                       skipped_updates=skipped_total)
