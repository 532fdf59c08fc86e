"""Client participation strategies.

Three strategies share the activation stage (each client wakes up
independently per round):

- random: each active client joins with a fixed probability sized to hit
  the participation target on average.
- poc (power-of-choice): a gated candidate pool reports local losses; the
  server keeps the highest-loss candidates.
- self: each gated candidate compares its local loss to a broadcast
  threshold and joins with a sigmoid probability; the server steers the
  threshold toward the participation target using only the decoded
  participant count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

STRATEGIES = ("random", "poc", "self")

# Threshold clamp: guards the controller against wind-up when a decode
# failure produces a wildly wrong participant estimate. Inactive in
# nominal runs.
THETA_MIN = 0.0
THETA_MAX = 10.0


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "self"
    num_clients: int = 1000
    activation_prob: float = 0.8
    target_participants: int = 100
    candidate_pool_size: int = 200
    steepness: float = 50.0
    theta_init: float = 2.32
    theta_step: float = 0.004

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.activation_prob <= 1.0:
            raise ConfigError(f"activation_prob must be in (0, 1], got {self.activation_prob}")
        if not 1 <= self.target_participants <= self.num_clients:
            raise ConfigError(
                f"target_participants must be in [1, {self.num_clients}], "
                f"got {self.target_participants}"
            )
        if self.candidate_pool_size > self.activation_prob * self.num_clients:
            raise ConfigError(
                f"candidate_pool_size {self.candidate_pool_size} exceeds the mean "
                f"active population {self.activation_prob * self.num_clients:g}"
            )
        if self.steepness <= 0:
            raise ConfigError(f"steepness must be > 0, got {self.steepness}")
        if self.theta_step <= 0:
            raise ConfigError(f"theta_step must be > 0, got {self.theta_step}")


def sigmoid(x: float) -> float:
    # Split on sign to stay overflow-free for large |x|.
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return float(z / (1.0 + z))


def activate(num_clients: int, activation_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Ids of clients that woke up this round (independent coin flips)."""
    if not 0.0 < activation_prob <= 1.0:
        raise ConfigError(f"activation_prob must be in (0, 1], got {activation_prob}")
    return np.flatnonzero(rng.random(num_clients) < activation_prob)


def candidate_gate(
    active: np.ndarray,
    pool_size: int,
    activation_prob: float,
    num_clients: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Thin the active set so the candidate pool has `pool_size` mean size."""
    p_cand = pool_size / (activation_prob * num_clients)
    if p_cand > 1.0:
        raise ConfigError(
            f"candidate pool size {pool_size} exceeds mean active population "
            f"{activation_prob * num_clients:g}"
        )
    active = np.asarray(active)
    return active[rng.random(len(active)) < p_cand]


def self_select(
    loss: float, threshold: float, steepness: float, rng: np.random.Generator
) -> bool:
    """Join with probability sigmoid(steepness * (loss - threshold))."""
    if steepness <= 0:
        raise ConfigError(f"steepness must be > 0, got {steepness}")
    return bool(rng.random() < sigmoid(steepness * (loss - threshold)))


def update_threshold(
    theta: float, estimated_participants: int, target: int, step: float
) -> float:
    """Integral controller step on the selection threshold, clamped.

    More estimated participants than the target pushes the threshold up,
    reducing future participation probabilities.
    """
    theta = theta + step * (estimated_participants - target)
    return float(min(max(theta, THETA_MIN), THETA_MAX))


def poc_select(candidates, losses: dict[int, float], target: int) -> np.ndarray:
    """Keep the `target` candidates with the largest losses.

    Ties break toward the smaller client id; all candidates are kept when
    there are fewer than `target`.
    """
    ranked = sorted(candidates, key=lambda cid: (-losses[cid], cid))
    return np.array(sorted(ranked[:target]), dtype=np.int64)


def random_select(
    active,
    target: int,
    activation_prob: float,
    num_clients: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Each active client joins with probability target/(mean active count)."""
    p_sel = target / (activation_prob * num_clients)
    if p_sel > 1.0:
        raise ConfigError(
            f"target {target} exceeds mean active population "
            f"{activation_prob * num_clients:g}"
        )
    active = np.asarray(active)
    return active[rng.random(len(active)) < p_sel]
