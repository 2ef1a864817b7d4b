import pytest

from bmapdiff import BMapSpec, alpha_schedule, build_bmap_stack

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_stack():
    sched = alpha_schedule("cosine", 20)
    return sched, build_bmap_stack(sched, BMapSpec(8, 8, 0.3))


@pytest.fixture(scope="session")
def default_stack():
    sched = alpha_schedule("cosine", 200)
    return sched, build_bmap_stack(sched, BMapSpec(32, 32, 0.04))


@pytest.fixture(scope="session")
def trained_model():
    """The default desk-scale run: 64 phantoms, 32x32, T=200, 2000 iterations."""
    from bmapdiff.config import RunConfig
    from bmapdiff.denoiser import train
    from bmapdiff.phantom import phantom_dataset

    cfg = RunConfig()
    data = phantom_dataset(cfg.n_phantoms, cfg.phantom_spec(), cfg.seed)
    params, losses = train(cfg.train_config(), data)
    return cfg, params, losses
