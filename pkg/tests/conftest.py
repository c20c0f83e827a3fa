import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edms import nets, train

settings.register_profile(
    "repo", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")

CLASSES = 4


def random_weights(seed=0, width=4, smap_width=4, classes=CLASSES, jitter=0.05):
    """A full weight set with every parameter (gamma/beta/bias too) randomised."""
    rng = np.random.default_rng(seed)
    params = {}
    for name in ("compnet", "finenet", "smapnet"):
        params.update(nets.init_params(name, rng, smap_width if name == "smapnet" else width))
    params.update(nets.init_params("segmenter", rng, classes=classes))
    for k, v in params.items():
        if not k.endswith(".weight"):
            params[k] = (v + rng.normal(0, jitter, v.shape)).astype(np.float32)
    return nets.WeightSet(params)


@pytest.fixture(scope="session")
def weights():
    return random_weights()


@pytest.fixture(scope="session")
def toy_model():
    """The documented toy recipe, trained once per session (a few minutes)."""
    recipe = train.ToyRecipe()
    history = []
    w = train.run_toy_recipe(recipe, history)
    return recipe, w, history


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
