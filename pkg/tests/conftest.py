import pytest

from habitrec.simulator import SimConfig, catalogue_rng, spawn_catalogue


@pytest.fixture(scope="session")
def default_config():
    return SimConfig()


@pytest.fixture(scope="session")
def default_catalogue(default_config):
    return spawn_catalogue(default_config, catalogue_rng(default_config.seed))


# Small world for unit tests that need simulated trajectories but not the
# default world's scale. Mild logits keep listen rates healthy so discoveries
# and impressions show up in small cohorts.
@pytest.fixture(scope="session")
def fast_config():
    return SimConfig(
        n_items=16,
        L=8,
        shortcut_slots=3,
        gamma=0.95,
        max_days=100,
        base_logit=-3.0,
        star_boost=3.0,
        habit_base=1.0,
        habit_scale=0.5,
        habit_taste=0.5,
        staple_bonus=1.0,
        epsilon=0.2,
    )


@pytest.fixture(scope="session")
def fast_catalogue(fast_config):
    return spawn_catalogue(fast_config, catalogue_rng(fast_config.seed))
