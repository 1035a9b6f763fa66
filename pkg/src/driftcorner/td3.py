"""Twin-delayed deterministic actor-critic learner.

Twin critics bootstrapped through the element-wise minimum of their
target copies, target-policy smoothing noise, delayed actor/target
updates, and a ring replay buffer.  Everything runs on the explicit
numpy networks in `nets`, so training is fully deterministic under a
fixed seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import action_bounds
from .nets import Adam, Mlp, clip_gradients, mlp_backward, mlp_forward, mlp_init, soft_update
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Td3Hyperparams:
    gamma: float = 0.99
    tau: float = 0.005
    lr_critic: float = 3e-4
    lr_actor: float = 3e-4
    policy_delay: int = 2
    sigma_explore: float = 0.1  # fraction of action range
    sigma_target: float = 0.2  # fraction of action range
    noise_clip: float = 0.5  # fraction of action range
    batch_size: int = 256
    buffer_size: int = 500_000
    warmup: int = 5000  # random-action steps before learning
    hidden: tuple[int, ...] = (256, 256)
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.noise_clip <= 0.0:
            raise ValueError("noise_clip must be positive")


@dataclass
class Td3State:
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    target_actor: Mlp
    target_critic1: Mlp
    target_critic2: Mlp
    buffer: ReplayBuffer
    hp: Td3Hyperparams
    low: np.ndarray
    high: np.ndarray
    obs_scale: np.ndarray
    rng: np.random.Generator
    opt_actor: Adam = field(default=None)
    opt_critic1: Adam = field(default=None)
    opt_critic2: Adam = field(default=None)
    critic_updates: int = 0
    actor_updates: int = 0
    env_steps: int = 0
    clip_events: int = 0

    def __post_init__(self):
        if self.opt_actor is None:
            self.opt_actor = Adam(self.hp.lr_actor)
            self.opt_critic1 = Adam(self.hp.lr_critic)
            self.opt_critic2 = Adam(self.hp.lr_critic)

    def checksum(self) -> float:
        return (self.actor.checksum() + self.critic1.checksum()
                + self.critic2.checksum() + self.target_actor.checksum()
                + self.target_critic1.checksum()
                + self.target_critic2.checksum())


def td3_init(
    obs_dim: int,
    low: np.ndarray,
    high: np.ndarray,
    hp: Td3Hyperparams = Td3Hyperparams(),
    seed: int = 0,
    obs_scale: np.ndarray | None = None,
) -> Td3State:
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    act_dim = len(low)
    rng = np.random.default_rng(seed)
    actor = mlp_init([obs_dim, *hp.hidden, act_dim], rng, "bounded", low, high)
    critic1 = mlp_init([obs_dim + act_dim, *hp.hidden, 1], rng)
    critic2 = mlp_init([obs_dim + act_dim, *hp.hidden, 1], rng)
    return Td3State(
        actor=actor, critic1=critic1, critic2=critic2,
        target_actor=actor.copy(), target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        buffer=ReplayBuffer(hp.buffer_size, obs_dim, act_dim),
        hp=hp, low=low, high=high,
        obs_scale=(np.ones(obs_dim) if obs_scale is None
                   else np.asarray(obs_scale, dtype=float)),
        rng=rng,
    )


def _act_norm(a: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Map actions into [-1, 1] for the critic input."""
    return 2.0 * (a - low) / (high - low) - 1.0


def _critic_input(obs: np.ndarray, act: np.ndarray, low, high) -> np.ndarray:
    return np.concatenate([obs, _act_norm(act, low, high)], axis=-1)


def select_action(
    actor: Mlp,
    obs: np.ndarray,
    noise_sigma: np.ndarray | float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Deterministic policy output plus Gaussian exploration noise,
    clamped to the action bounds.  obs must already be normalized."""
    a, _ = mlp_forward(actor, np.asarray(obs, dtype=float))
    if np.any(np.asarray(noise_sigma) > 0.0):
        a = a + rng.normal(0.0, 1.0, a.shape) * noise_sigma
    return np.clip(a, actor.low, actor.high)


def compute_target(batch, state: Td3State, hp: Td3Hyperparams) -> np.ndarray:
    """Bootstrap targets: smoothed target-policy action, then the
    element-wise minimum of the two target critics."""
    _, _, rew, obs_next, done = batch
    a_next, _ = mlp_forward(state.target_actor, obs_next)
    span = state.high - state.low
    noise = np.clip(
        state.rng.normal(0.0, 1.0, a_next.shape) * (hp.sigma_target * span),
        -hp.noise_clip * span, hp.noise_clip * span,
    )
    a_next = np.clip(a_next + noise, state.low, state.high)
    x = _critic_input(obs_next, a_next, state.low, state.high)
    q1, _ = mlp_forward(state.target_critic1, x)
    q2, _ = mlp_forward(state.target_critic2, x)
    q_min = np.minimum(q1[:, 0], q2[:, 0])
    return rew + hp.gamma * (1.0 - done) * q_min


def update_critics(state: Td3State, batch, y: np.ndarray) -> tuple[float, float]:
    """One mean-squared-error gradient step per critic."""
    obs, act = batch[0], batch[1]
    x = _critic_input(obs, act, state.low, state.high)
    n = len(y)
    losses = []
    for critic, opt in ((state.critic1, state.opt_critic1),
                        (state.critic2, state.opt_critic2)):
        q, cache = mlp_forward(critic, x)
        err = q[:, 0] - y
        losses.append(float(np.mean(err * err)))
        gw, gb, _ = mlp_backward(critic, cache, (2.0 * err / n)[:, None])
        grads, norm = clip_gradients(gw + gb, state.hp.grad_clip)
        if norm > state.hp.grad_clip:
            state.clip_events += 1
            if state.clip_events % 1000 == 1:
                log.warning("gradient norm %.2f clipped to %.2f "
                            "(%d clip events so far)",
                            norm, state.hp.grad_clip, state.clip_events)
        opt.step(critic.parameters(), grads)
    state.critic_updates += 1
    return losses[0], losses[1]


def update_actor_and_targets(state: Td3State, batch) -> None:
    """Actor ascent on the first critic's value, then soft target updates."""
    obs = batch[0]
    n = len(obs)
    a, cache_a = mlp_forward(state.actor, obs)
    x = np.concatenate([obs, _act_norm(a, state.low, state.high)], axis=-1)
    _, cache_q = mlp_forward(state.critic1, x)
    # Maximize mean Q: push -dQ/da back through the actor.
    _, _, g_in = mlp_backward(state.critic1, cache_q,
                              np.full((n, 1), -1.0 / n))
    g_a = g_in[:, obs.shape[1]:] * (2.0 / (state.high - state.low))
    gw, gb, _ = mlp_backward(state.actor, cache_a, g_a)
    grads, norm = clip_gradients(gw + gb, state.hp.grad_clip)
    if norm > state.hp.grad_clip:
        state.clip_events += 1
    state.opt_actor.step(state.actor.parameters(), grads)
    state.actor_updates += 1
    tau = state.hp.tau
    soft_update(state.target_actor, state.actor, tau)
    soft_update(state.target_critic1, state.critic1, tau)
    soft_update(state.target_critic2, state.critic2, tau)


def behavior_clone(state: Td3State, steps: int, batch_size: int = 256,
                   dataset=None) -> float:
    """Supervised actor regression onto demonstrated actions.

    Fits the actor to `dataset` (an ``(obs, act)`` array pair) when
    given, otherwise to the replay buffer's stored actions.  Used to
    pull the freshly initialized actor into the demonstration tube
    before value-driven updates start; returns the last batch MSE.
    The target actor is hard-synced afterwards so smoothing noise is
    applied around the cloned policy.
    """
    mse = float("nan")
    span = state.high - state.low
    for _ in range(steps):
        if dataset is None:
            obs, act, _, _, _ = state.buffer.sample(batch_size, state.rng)
        else:
            idx = state.rng.integers(0, len(dataset[0]), batch_size)
            obs, act = dataset[0][idx], dataset[1][idx]
        out, cache = mlp_forward(state.actor, obs)
        # regress in normalized action space so no dimension's physical
        # units dominate the loss (or the gradient clip)
        err = (out - act) * (2.0 / span)
        mse = float(np.mean(err**2))
        gw, gb, _ = mlp_backward(state.actor, cache,
                                 err * (2.0 / span) * (2.0 / len(err)))
        grads, _ = clip_gradients(gw + gb, state.hp.grad_clip)
        state.opt_actor.step(state.actor.parameters(), grads)
    soft_update(state.target_actor, state.actor, 1.0)
    return mse


# -- deployment-side policy wrapper -----------------------------------


@dataclass
class Policy:
    """Deterministic actor over raw (unnormalized) observations."""

    actor: Mlp
    obs_scale: np.ndarray

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(self.actor, np.asarray(obs, dtype=float)
                             / self.obs_scale)
        return out

    def checksum(self) -> float:
        return self.actor.checksum()


# -- checkpoints ------------------------------------------------------


_NETS = ("actor", "critic1", "critic2",
         "target_actor", "target_critic1", "target_critic2")


def save_checkpoint(state: Td3State, path) -> None:
    """Binary dump of all parameters, optimizer moments, hyperparams,
    counters, and the RNG state; round-trips exactly."""
    arrays: dict[str, np.ndarray] = {}
    for name in _NETS:
        net: Mlp = getattr(state, name)
        for i, w in enumerate(net.weights):
            arrays[f"{name}_w{i}"] = w
        for i, b in enumerate(net.biases):
            arrays[f"{name}_b{i}"] = b
    for name, opt in (("opt_actor", state.opt_actor),
                      ("opt_critic1", state.opt_critic1),
                      ("opt_critic2", state.opt_critic2)):
        for i, m in enumerate(opt.m):
            arrays[f"{name}_m{i}"] = m
        for i, v in enumerate(opt.v):
            arrays[f"{name}_v{i}"] = v
    arrays["low"] = state.low
    arrays["high"] = state.high
    arrays["obs_scale"] = state.obs_scale
    meta = {
        "version": CHECKPOINT_VERSION,
        "hp": {k: (list(v) if isinstance(v, tuple) else v)
               for k, v in vars(state.hp).items()},
        "sizes": state.actor.sizes,
        "critic_sizes": state.critic1.sizes,
        "counters": {
            "critic_updates": state.critic_updates,
            "actor_updates": state.actor_updates,
            "env_steps": state.env_steps,
        },
        "opt_t": [state.opt_actor.t, state.opt_critic1.t,
                  state.opt_critic2.t],
        "rng_state": state.rng.bit_generator.state,
        "checksum": state.checksum(),
    }
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, default=str).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(path, buffer: ReplayBuffer | None = None) -> Td3State:
    """Rebuild a learner state from `save_checkpoint` output.

    The replay buffer contents are not stored; pass one in to resume
    training, or leave it empty for deployment-only use."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        hp_d = dict(meta["hp"])
        hp_d["hidden"] = tuple(hp_d["hidden"])
        hp = Td3Hyperparams(**hp_d)
        low, high = data["low"], data["high"]

        def read_net(name, head="linear", lo=None, hi=None):
            ws, bs, i = [], [], 0
            while f"{name}_w{i}" in data:
                ws.append(data[f"{name}_w{i}"].copy())
                bs.append(data[f"{name}_b{i}"].copy())
                i += 1
            return Mlp(ws, bs, head, lo, hi)

        nets = {}
        for name in _NETS:
            bounded = "actor" in name
            nets[name] = read_net(name, "bounded" if bounded else "linear",
                                  low.copy() if bounded else None,
                                  high.copy() if bounded else None)
        obs_dim = nets["actor"].sizes[0]
        act_dim = len(low)
        state = Td3State(
            **nets,
            buffer=buffer or ReplayBuffer(hp.buffer_size, obs_dim, act_dim),
            hp=hp, low=low.copy(), high=high.copy(),
            obs_scale=data["obs_scale"].copy(),
            rng=np.random.default_rng(),
            critic_updates=meta["counters"]["critic_updates"],
            actor_updates=meta["counters"]["actor_updates"],
            env_steps=meta["counters"]["env_steps"],
        )
        state.rng.bit_generator.state = meta["rng_state"]
        for name, opt, t in (("opt_actor", state.opt_actor, meta["opt_t"][0]),
                             ("opt_critic1", state.opt_critic1, meta["opt_t"][1]),
                             ("opt_critic2", state.opt_critic2, meta["opt_t"][2])):
            i = 0
            while f"{name}_m{i}" in data:
                opt.m.append(data[f"{name}_m{i}"].copy())
                opt.v.append(data[f"{name}_v{i}"].copy())
                i += 1
            opt.t = t
    return state


def policy_from_checkpoint(path) -> Policy:
    state = load_checkpoint(path)
    return Policy(state.actor, state.obs_scale)


# -- training loop ----------------------------------------------------


@dataclass
class TrainLog:
    """One row per episode: reward components, completion, timing."""

    rows: list[str] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    chi: list[int] = field(default_factory=list)
    t_f: list[float] = field(default_factory=list)

    def append(self, episode: int, result, steps: int) -> None:
        self.rows.append(
            f"ep={episode} chi={result.chi} status={result.status} "
            f"t_f={result.t_f:.3f} s={result.s_final:.2f} "
            f"R={result.total_reward:.3f} r_p={result.r_p_sum:.3f} "
            f"r_s={result.r_s_sum:.3f} r_m={result.r_m_sum:.3f} "
            f"r_t={result.r_t:.3f} steps={steps}"
        )
        self.reward.append(result.total_reward)
        self.chi.append(result.chi)
        self.t_f.append(result.t_f)

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.rows) + "\n")


def _spaces_of(env):
    """Action bounds and observation scales of an environment."""
    if hasattr(env, "limits"):
        low, high = action_bounds(env.limits)
    else:
        low = np.asarray(env.action_low, dtype=float)
        high = np.asarray(env.action_high, dtype=float)
    return low, high


def _vec(obs) -> np.ndarray:
    return obs.vector() if hasattr(obs, "vector") else np.asarray(obs, dtype=float)


def _eval_rollout(env, state: Td3State, obs_scale):
    """Deterministic (noise-free) rollout; returns the episode result
    when the environment reports one, else None."""
    try:
        eobs = env.reset(0, nominal=True)
    except TypeError:
        eobs = env.reset(0)
    obs = _vec(eobs) / obs_scale
    done = False
    info: dict = {}
    while not done:
        act, _ = mlp_forward(state.actor, obs)
        nxt, _, done, info = env.step(act)
        obs = _vec(nxt) / obs_scale
    return info.get("result")


def train(
    env_factory,
    hp: Td3Hyperparams = Td3Hyperparams(),
    episodes: int = 5000,
    seed: int = 0,
    out_dir=None,
    checkpoint_every: int = 250,
    state: Td3State | None = None,
    progress: bool = False,
    demo_policy=None,
    demo_episodes: int = 0,
    dagger_episodes: int = 12,
    bc_steps: int = 4000,
    actor_freeze: int = 10000,
    eval_every: int = 50,
) -> tuple[Policy, TrainLog, Td3State]:
    """Run the full training loop over `episodes` episodes.

    Per environment step: store the transition, then one critic update
    (after warmup) and an actor/target update every `policy_delay`
    critic updates.  Deterministic given the seed: a single generator
    drives initialization, resets, exploration, and batch sampling.

    When `demo_policy` is given, the first `demo_episodes` episodes
    (counted against the budget) are driven by it plus exploration
    noise while the clean demonstrated action for every visited state
    is kept aside; the actor is then behavior-cloned onto those labels
    (`bc_steps` supervised batches).  The next `dagger_episodes`
    episodes are driven by the cloned actor, with every state it
    reaches labeled by the demonstrator and folded back into the
    cloning set, so the imitation data covers the clone's own state
    distribution rather than only the demonstrator's.  After that the
    next `actor_freeze` critic updates run with the actor held fixed
    so the value estimate settles before policy-gradient steps resume.
    This is the escape hatch for long-corridor tasks where random
    warmup never sees a completion and the per-step penalties make
    instant termination a local optimum.
    """
    env = env_factory()
    low, high = _spaces_of(env)
    obs_scale = np.asarray(getattr(env, "scales", 1.0), dtype=float)
    obs0 = _vec(env.reset(np.random.default_rng(seed)))
    obs_dim = len(obs0)
    if np.ndim(obs_scale) == 0:
        obs_scale = np.full(obs_dim, float(obs_scale))
    if state is None:
        state = td3_init(obs_dim, low, high, hp, seed, obs_scale)
    hp = state.hp
    sigma_explore = hp.sigma_explore * (high - low)
    tlog = TrainLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    start = time.time()

    use_demos = demo_policy is not None and demo_episodes > 0
    imitation_end = demo_episodes + dagger_episodes if use_demos else 0
    bc_obs: list[np.ndarray] = []
    bc_act: list[np.ndarray] = []
    bc_set = None
    freeze_until = 0
    best_eval = None

    for ep in range(episodes):
        if use_demos and demo_episodes <= ep < imitation_end + 1:
            # refit on the aggregated imitation set: the full budget once
            # the demos end, then smaller top-ups after each episode the
            # clone drives itself (its mistakes now carry expert labels)
            bc_set = (np.asarray(bc_obs), np.asarray(bc_act))
            rounds = bc_steps if ep == demo_episodes else bc_steps // 4
            mse = behavior_clone(state, rounds, dataset=bc_set)
            if ep == imitation_end:
                freeze_until = state.critic_updates + actor_freeze
            if progress:
                log.info("imitation fit at ep %d: %d batches on %d labels, "
                         "mse %.4f%s", ep, rounds, len(bc_obs), mse,
                         "; actor frozen for %d critic updates"
                         % actor_freeze if ep == imitation_end else "")
        demo_phase = use_demos and ep < demo_episodes
        dagger_phase = use_demos and demo_episodes <= ep < imitation_end
        obs = _vec(env.reset(state.rng)) / obs_scale
        done = False
        ep_steps = 0
        info: dict = {}
        while not done:
            if demo_phase or dagger_phase:
                label = demo_policy(obs * obs_scale)
                bc_obs.append(obs)
                bc_act.append(np.asarray(label, dtype=float))
            if demo_phase:
                noise = state.rng.normal(0.0, 0.5 * sigma_explore)
                act = np.clip(label + noise, low, high)
            elif dagger_phase:
                noise = state.rng.normal(0.0, 0.3 * sigma_explore)
                a, _ = mlp_forward(state.actor, obs)
                act = np.clip(a + noise, low, high)
            elif not use_demos and state.env_steps < hp.warmup:
                act = state.rng.uniform(low, high)
            else:
                act = select_action(state.actor, obs, sigma_explore,
                                    state.rng)
            nxt, rew, done, info = env.step(act)
            nxt = _vec(nxt) / obs_scale
            state.buffer.add(obs, act, rew, nxt, done)
            obs = nxt
            state.env_steps += 1
            ep_steps += 1
            if (not demo_phase and not dagger_phase
                    and state.env_steps >= hp.warmup
                    and len(state.buffer) >= hp.batch_size):
                batch = state.buffer.sample(hp.batch_size, state.rng)
                y = compute_target(batch, state, hp)
                update_critics(state, batch, y)
                if (state.critic_updates % hp.policy_delay == 0
                        and state.critic_updates >= freeze_until):
                    update_actor_and_targets(state, batch)
        tlog.append(ep, info["result"], ep_steps)
        if (progress or out_dir is not None) and (ep + 1) % eval_every == 0:
            res = _eval_rollout(env, state, obs_scale)
            if res is not None:
                key = (res.chi, -res.t_f)
                if best_eval is None or key > best_eval:
                    best_eval = key
                    if out_dir is not None:
                        save_checkpoint(state, out_dir / "policy_best.npz")
                if progress:
                    log.info(
                        "ep %d/%d R(mean50)=%.1f chi50=%.2f | eval chi=%d "
                        "t_f=%.2f s=%.1f max_beta=%.1fdeg elapsed=%.0fs",
                        ep + 1, episodes, float(np.mean(tlog.reward[-50:])),
                        float(np.mean(tlog.chi[-50:])), res.chi, res.t_f,
                        res.s_final, np.degrees(res.max_beta)
                        if hasattr(res, "max_beta") else float("nan"),
                        time.time() - start)
            elif progress:
                log.info("ep %d/%d R(mean50)=%.1f chi50=%.2f elapsed=%.0fs",
                         ep + 1, episodes, float(np.mean(tlog.reward[-50:])),
                         float(np.mean(tlog.chi[-50:])), time.time() - start)
        if out_dir is not None and (ep + 1) % checkpoint_every == 0:
            save_checkpoint(state, out_dir / f"checkpoint_ep{ep + 1:05d}.npz")
            tlog.write(out_dir / "train.log")
    if out_dir is not None:
        save_checkpoint(state, out_dir / "policy.npz")
        tlog.write(out_dir / "train.log")
    return Policy(state.actor, state.obs_scale), tlog, state
