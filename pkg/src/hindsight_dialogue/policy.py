"""Group-relative policy optimisation of a tabular softmax policy on the graph env.

The tabular policy stands in for the language model: its state is the set of
covered required nodes and its actions are ``ASK(v)`` for every askable node
plus ``<stop />``. Each training step draws a group of actions for one
expert-reachable state, scores them with the hindsight reward pipeline, and
moves the logits along the group-normalised advantages.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dialogue import STOP_SENTINEL, TurnSample, segment
from .exporters import rl_pairs
from .graph_env import GraphOracle, InfoGraph, ask_token, covered_nodes, sample_expert_trajectory, state_key, synthesize
from .hindsight import HindsightTarget, StopLabel, finalize_targets, raw_targets
from .metrics import GradedSample, MetricsReport, compute
from .oracle import Oracle, PromptTemplate, default_template
from .reward import Ablation, CandidateAction, FusionMode, RewardBreakdown, ablated_total, grade_many

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6


def group_advantages(rewards: Sequence[float], eps: float = DEFAULT_EPS) -> np.ndarray:
    """Standardise rewards within a group (population std)."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def action_space(g: InfoGraph) -> list[str]:
    return [ask_token(v) for v in g.askable] + [STOP_SENTINEL]


@dataclass
class TabularPolicy:
    actions: list[str]
    logits: dict[str, np.ndarray] = field(default_factory=dict)

    def table(self, key: str) -> np.ndarray:
        if key not in self.logits:
            self.logits[key] = np.zeros(len(self.actions))
        return self.logits[key]

    def probs(self, key: str) -> np.ndarray:
        return softmax(self.logits.get(key, np.zeros(len(self.actions))))

    def greedy(self, key: str) -> str:
        # ties resolve to the lowest action index
        return self.actions[int(np.argmax(self.logits.get(key, np.zeros(len(self.actions)))))]

    def sample(self, key: str, rng: np.random.Generator) -> str:
        return self.actions[int(rng.choice(len(self.actions), p=self.probs(key)))]

    def to_json(self) -> dict[str, Any]:
        return {
            "actions": list(self.actions),
            "logits": {k: [float(x) for x in v] for k, v in sorted(self.logits.items())},
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "TabularPolicy":
        return cls(list(d["actions"]), {k: np.asarray(v, dtype=float) for k, v in d["logits"].items()})

    @classmethod
    def uniform(cls, g: InfoGraph) -> "TabularPolicy":
        return cls(action_space(g))


@dataclass
class TrainConfig:
    lr: float = 0.1
    group_size: int = 5
    iterations: int = 2000
    beta: float = 1.0
    seed: int = 0
    mode: FusionMode = FusionMode.MULTIPLICATIVE
    ablation: Ablation = Ablation.FULL
    n_trajectories: int = 64
    eps: float = DEFAULT_EPS
    patience: int = 50

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        self.mode = FusionMode(self.mode)
        self.ablation = Ablation(self.ablation)


@dataclass
class TraceRow:
    iteration: int
    mean_reward: float
    ws: float | None
    wa: float | None


class TrainingDiverged(RuntimeError):
    pass


class Grader:
    """Memoised reward pipeline for the graph env (grading is deterministic)."""

    def __init__(self, g: InfoGraph, beta: float, mode: FusionMode,
                 oracle: Oracle | None = None, grader: PromptTemplate | None = None):
        self.oracle = oracle or GraphOracle(g)
        self.grader = grader or default_template("grader")
        self.beta = beta
        self.mode = mode
        self._cache: dict[tuple, RewardBreakdown] = {}

    def __call__(self, actions: Sequence[str], sample: TurnSample, target: HindsightTarget) -> list[RewardBreakdown]:
        tkey = (frozenset(i.text for i in target.info_set), target.stop_label)
        todo = sorted({a for a in actions if (a, tkey) not in self._cache})
        if todo:
            out = grade_many(todo, [target] * len(todo), [sample] * len(todo),
                             self.grader, self.oracle, self.beta, self.mode)
            for a, b in zip(todo, out):
                self._cache[(a, tkey)] = b
        return [self._cache[(a, tkey)] for a in actions]


def expert_pool(g: InfoGraph, n_trajectories: int, seed: int | str, oracle: Oracle | None = None,
                ablation: Ablation = Ablation.FULL) -> list[tuple[TurnSample, HindsightTarget]]:
    """(sample, target) pairs from synthesized expert logs, filtered as the RL export is."""
    oracle = oracle or GraphOracle(g)
    trajs = synthesize(g, seed, n_trajectories) if isinstance(seed, int) else [
        sample_expert_trajectory(g, f"{seed}:{i}", f"{g.name}-{seed}-{i}") for i in range(n_trajectories)
    ]
    samples = [s for t in trajs for s in segment(t)]
    targets = finalize_targets(raw_targets(samples, default_template("extract"), oracle), ())
    return rl_pairs(targets, samples, ablation)


def train(g: InfoGraph, cfg: TrainConfig | None = None, **overrides: Any) -> tuple[TabularPolicy, list[TraceRow]]:
    cfg = cfg or TrainConfig(**overrides)
    policy = TabularPolicy.uniform(g)
    trace: list[TraceRow] = []
    if cfg.iterations == 0:
        return policy, trace
    grader = Grader(g, cfg.beta, cfg.mode)
    pool = expert_pool(g, cfg.n_trajectories, cfg.seed, grader.oracle, cfg.ablation)
    if not pool:
        raise ValueError(f"no training states under ablation {cfg.ablation.value}")
    rng = np.random.default_rng(cfg.seed)
    n_actions = len(policy.actions)
    baselines: dict[tuple, float] = {}
    below = 0
    for it in range(cfg.iterations):
        sample, target = pool[int(rng.integers(len(pool)))]
        key = state_key(covered_nodes(sample.context, g))
        logits = policy.table(key)
        probs = softmax(logits)
        idx = rng.choice(n_actions, size=cfg.group_size, p=probs)
        acts = [policy.actions[i] for i in idx]
        breakdowns = grader(acts, sample, target)
        rewards = np.array([ablated_total(b, cfg.ablation) for b in breakdowns])
        adv = group_advantages(rewards, cfg.eps)
        # d log pi(a) / d logits = onehot(a) - pi
        grad = np.zeros(n_actions)
        for a_i, A in zip(idx, adv):
            grad[a_i] += A
        grad -= adv.sum() * probs
        logits += cfg.lr * grad / cfg.group_size

        mean_r = float(rewards.mean())
        ws = wa = None
        if target.stop_label is StopLabel.STOP:
            ws = float(np.mean([b.r_s for b in breakdowns]))
        else:
            ra = [b.r_a for b, a in zip(breakdowns, acts) if a != STOP_SENTINEL]
            wa = float(np.mean(ra)) if ra else None
        trace.append(TraceRow(it, mean_r, ws, wa))

        bkey = (key, frozenset(i.text for i in target.info_set), target.stop_label)
        if bkey not in baselines:
            every = grader(policy.actions, sample, target)
            baselines[bkey] = float(np.mean([ablated_total(b, cfg.ablation) for b in every]))
        below = below + 1 if mean_r < baselines[bkey] else 0
        if below >= cfg.patience:
            recent = [round(r.mean_reward, 3) for r in trace[-cfg.patience:]]
            raise TrainingDiverged(
                f"mean reward below the uniform-random baseline for {cfg.patience} consecutive "
                f"iterations (last at iteration {it}, state {key!r}); recent rewards: {recent}"
            )
    return policy, trace


def evaluation_set(g: InfoGraph, n_rollouts: int, seed: int,
                   oracle: Oracle | None = None) -> list[tuple[TurnSample, HindsightTarget]]:
    """Draw ``n_rollouts`` contexts, each a random split of a fresh expert trajectory."""
    oracle = oracle or GraphOracle(g)
    rng = random.Random(f"eval:{seed}")
    picked = []
    for i in range(n_rollouts):
        samples = segment(sample_expert_trajectory(g, f"eval:{seed}:{i}", f"{g.name}-eval-{seed}-{i}"))
        picked.append(samples[rng.randrange(len(samples))])
    targets = finalize_targets(raw_targets(picked, default_template("extract"), oracle), ())
    return list(zip(picked, targets))


def evaluate_policy(
    p: TabularPolicy,
    g: InfoGraph,
    n_rollouts: int = 200,
    seed: int = 0,
    greedy: bool = True,
    beta: float = 1.0,
    mode: FusionMode = FusionMode.MULTIPLICATIVE,
) -> MetricsReport:
    grader = Grader(g, beta, FusionMode(mode))
    rng = np.random.default_rng(seed)
    graded = []
    for sample, target in evaluation_set(g, n_rollouts, seed, grader.oracle):
        key = state_key(covered_nodes(sample.context, g))
        action = p.greedy(key) if greedy else p.sample(key, rng)
        b = grader([action], sample, target)[0]
        graded.append(GradedSample.of(target, b, CandidateAction(action).assessment))
    return compute(graded)


def optimal_value(g: InfoGraph, n_rollouts: int = 200, seed: int = 0, beta: float = 1.0,
                  mode: FusionMode = FusionMode.MULTIPLICATIVE) -> float:
    """Mean total reward of the best action per state, by exhaustive enumeration."""
    grader = Grader(g, beta, FusionMode(mode))
    actions = action_space(g)
    best = [max(b.total for b in grader(actions, s, t)) for s, t in evaluation_set(g, n_rollouts, seed, grader.oracle)]
    return float(np.mean(best))


def write_trace(path: str | Path, trace: Sequence[TraceRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "mean_reward", "ws", "wa"])
        for r in trace:
            w.writerow([r.iteration, f"{r.mean_reward:.6f}",
                        "" if r.ws is None else f"{r.ws:.6f}", "" if r.wa is None else f"{r.wa:.6f}"])


def save_policy(path: str | Path, p: TabularPolicy) -> None:
    Path(path).write_text(json.dumps(p.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_policy(path: str | Path) -> TabularPolicy:
    return TabularPolicy.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
