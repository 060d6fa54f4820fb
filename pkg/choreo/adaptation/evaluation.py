"""
Evaluation episodes without parameter updates.

  zero_shot_eval      meta-controller picks skills greedily, skills act by their mean
  skill_sweep_eval    a uniform skill is redrawn every ``sweep_every`` steps
  random_policy_eval  uniform random actions, the paired baseline

Every function returns ``{mean_return, success_rate, episodes}``; with zero
episodes the statistics are ``None``.  A success is an episode in which the
goal region was reached at least once.
"""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from choreo.adaptation.meta import MetaController, select_skill
from choreo.envs.point_mass import PointMassEnv
from choreo.skills.actor_critic import SkillPolicySet
from choreo.skills.codebook import SkillVQ, sample_skill_uniform
from choreo.world_model.filter import LatentFilter
from choreo.world_model.rssm import ModelState, WorldModel

logger = logging.getLogger(__name__)

# (state, step) -> (action, skill index or -1)
AgentFn = Callable[[ModelState, int], tuple]


def summarize(returns: List[float], successes: List[bool]) -> Dict[str, Optional[float]]:
    if not returns:
        return {'mean_return': None, 'success_rate': None, 'episodes': 0}
    return {
        'mean_return':  float(np.mean(returns)),
        'success_rate': float(np.mean(successes)),
        'episodes':     len(returns),
    }


def run_agent_episode(
    env: PointMassEnv,
    wm: WorldModel,
    agent: AgentFn,
    rng: torch.Generator,
    on_step: Optional[Callable[[np.ndarray, np.ndarray, float], None]] = None,
) -> Dict[str, object]:
    """
    One episode with posterior filtering; ``agent`` maps the filtered state to
    an action.  ``on_step(action, obs, reward)`` sees every transition.
    """
    latent = LatentFilter(wm)
    obs = env.reset()
    state = latent.reset(obs, rng)
    total, t, done = 0.0, 0, False
    skills: List[int] = []
    while not done:
        action, skill = agent(state, t)
        obs, reward, done = env.step(action)
        if on_step is not None:
            on_step(action, obs, reward)
        total += reward
        skills.append(skill)
        state = latent.step(action, obs, rng)
        t += 1
    return {'return': total, 'success': env.success, 'skills': skills}


def zero_shot_eval(
    meta: MetaController,
    skills: SkillPolicySet,
    wm: WorldModel,
    vq: SkillVQ,
    env: PointMassEnv,
    episodes: int,
    rng: torch.Generator,
) -> Dict[str, Optional[float]]:
    """Greedy meta-controller over the current skill actors, no updates."""
    returns, successes = [], []
    for _ in range(episodes):
        meta.begin_episode()

        def agent(state: ModelState, t: int):
            z = select_skill(meta, state, rng, mode='greedy')
            action = skills.act(state.deter, vq.codebook.codes[z].unsqueeze(0))
            return action.reshape(-1).numpy(), z

        result = run_agent_episode(env, wm, agent, rng)
        returns.append(result['return'])
        successes.append(result['success'])
    metrics = summarize(returns, successes)
    logger.info(f"zero-shot eval: {metrics}")
    return metrics


def skill_sweep_eval(
    skills: SkillPolicySet,
    wm: WorldModel,
    vq: SkillVQ,
    env: PointMassEnv,
    episodes: int,
    rng: torch.Generator,
    sweep_every: int = 50,
) -> Dict[str, Optional[float]]:
    """Pretrained skills only: a fresh uniform skill every ``sweep_every`` steps."""
    returns, successes = [], []
    for _ in range(episodes):
        current = {'z': 0}

        def agent(state: ModelState, t: int):
            if t % sweep_every == 0:
                current['z'] = sample_skill_uniform(vq.N, rng)
            z = current['z']
            action = skills.act(state.deter, vq.codebook.codes[z].unsqueeze(0))
            return action.reshape(-1).numpy(), z

        result = run_agent_episode(env, wm, agent, rng)
        returns.append(result['return'])
        successes.append(result['success'])
    metrics = summarize(returns, successes)
    logger.info(f"skill-sweep eval: {metrics}")
    return metrics


def random_policy_eval(
    env: PointMassEnv,
    episodes: int,
    rng: torch.Generator,
) -> Dict[str, Optional[float]]:
    """Uniform actions in the box."""
    returns, successes = [], []
    for _ in range(episodes):
        env.reset()
        total, done = 0.0, False
        while not done:
            action = (torch.rand(env.action_dim, generator=rng, dtype=torch.float64) * 2.0 - 1.0).numpy()
            _, reward, done = env.step(action)
            total += reward
        returns.append(total)
        successes.append(env.success)
    metrics = summarize(returns, successes)
    logger.info(f"random-policy eval: {metrics}")
    return metrics
