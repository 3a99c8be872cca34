import numpy as np
import pytest

from btaudit import Arena, SolverOptions, SynthSpec

RIDGELESS = SolverOptions(ridge=0.0)


def two_player_arena(wins_a: int, wins_b: int, names=("alpha", "beta")) -> Arena:
    records = [(0, 1, 1)] * wins_a + [(0, 1, 0)] * wins_b
    return Arena.from_records(names, records)


def round_robin_spec(seed: int, n_models: int, games_per_pair: int = 3,
                     spread: float = 1.25) -> SynthSpec:
    """Balanced schedule: every pair plays in both orientations."""
    rng = np.random.Generator(np.random.PCG64(seed + 771))
    strengths = (0.0, *(float(x) for x in rng.uniform(-spread, spread, n_models - 1)))
    schedule = []
    for a in range(n_models):
        for b in range(a + 1, n_models):
            half = games_per_pair // 2
            if half:
                schedule.append((a, b, half))
            schedule.append((b, a, games_per_pair - half))
    return SynthSpec(strengths=strengths, schedule=tuple(schedule), seed=seed)


@pytest.fixture
def arena_3_1() -> Arena:
    return two_player_arena(3, 1)


@pytest.fixture
def arena_2_2() -> Arena:
    return two_player_arena(2, 2)
