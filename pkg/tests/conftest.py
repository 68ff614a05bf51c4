import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lsanav.agent import ModelConfig
from lsanav.config import RunConfig, build_env
from lsanav.gradcheck import toy_observation
from lsanav.slot_attention import SlotAttention, SlotAttnConfig
from lsanav.tensor import RngStream


def randomized_block(cfg: SlotAttnConfig, seed: int = 0) -> SlotAttention:
    """Slot attention with every parameter (LN affines included) randomised."""
    block = SlotAttention(cfg, RngStream(seed).fork("init"))
    rng = RngStream(seed).fork("perturb")
    for name, p in block.named_params():
        if name.endswith("gain"):
            p.value[...] = 1.0 + 0.2 * rng.normal(p.shape)
        else:
            p.value[...] += 0.1 * rng.normal(p.shape)
    return block


@pytest.fixture
def toy_cfg():
    return SlotAttnConfig(d_image=8, d_angle=4, iterations=3)


@pytest.fixture
def toy_obs():
    return toy_observation(8, 4, seed=3)


@pytest.fixture(scope="session")
def small_env():
    cfg = RunConfig(model=ModelConfig(d_image=8, d_angle=4, d_hidden=8))
    cfg.env.n_episodes = 20
    return build_env(cfg)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
