"""Counter-based pseudo-randomness for reproducible signal draws.

Every draw is a pure function of (seed, step, agent), so trajectories are
bit-reproducible regardless of recording cadence, trial scheduling, or which
kernel backend executes the trial. The mixer is the splitmix64 finalizer,
which passes standard avalanche tests and is trivially portable to C.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def counter_hash(seed: int, *counters: int) -> int:
    """Hash a seed plus any number of counters into a 64-bit value."""
    h = mix64((seed + _GOLDEN) & _MASK)
    for c in counters:
        h = mix64((h ^ ((c + _GOLDEN) & _MASK)) & _MASK)
    return h


def unit_uniform(h: int) -> float:
    """Map a 64-bit hash to a double in [0, 1) using its top 53 bits."""
    return (h >> 11) * 2.0**-53


def trial_seed(master_seed: int, trial: int) -> int:
    """Derive the per-trial seed from the run's master seed."""
    return counter_hash(master_seed, trial)


def draw_uniform(seed: int, step: int, agent: int) -> float:
    """Uniform variate for one (seed, step, agent) triple."""
    return unit_uniform(counter_hash(seed, step, agent))


def draw_uniform_block(seed: int, steps: np.ndarray, n_agents: int) -> np.ndarray:
    """Vectorized draw_uniform over a step range; shape (len(steps), n_agents).

    uint64 arithmetic wraps by construction; the overflow warnings numpy
    emits for scalar paths do not apply to these array ops.
    """
    steps = np.asarray(steps, dtype=np.uint64)
    agents = np.arange(n_agents, dtype=np.uint64)
    golden = np.uint64(_GOLDEN)
    m1 = np.uint64(_MIX1)
    m2 = np.uint64(_MIX2)

    def vmix(z):
        z = (z ^ (z >> np.uint64(30))) * m1
        z = (z ^ (z >> np.uint64(27))) * m2
        return z ^ (z >> np.uint64(31))

    with np.errstate(over="ignore"):
        h0 = vmix(np.uint64(seed & _MASK) + golden)
        hk = vmix(h0 ^ (steps + golden))
        h = vmix(hk[:, None] ^ (agents[None, :] + golden))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53
