import functools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hams.alignment import PairGraph
from hams.oracle import NoiseSpec, generate_scene, make_graph_predictions

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def scene_graph(seed=0, cameras=4, persons=(3, 3), depth_sigma=0.0, permute=False):
    scene = generate_scene(seed=seed, cameras=cameras, persons=persons)
    noise = NoiseSpec(depth_sigma=depth_sigma, permute_ids=permute)
    preds, views = make_graph_predictions(scene, noise=noise, seed=seed)
    return scene, PairGraph(scene.n_views, preds), views


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return scene_graph(0, 4, (3, 3))


def tree_digest(root):
    """sha256 over every file's relative path and bytes, in sorted order."""
    import hashlib
    h = hashlib.sha256()
    for dirpath, dirnames, files in os.walk(root):
        dirnames.sort()
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as f:
                h.update(hashlib.sha256(f.read()).digest())
    return h.hexdigest()


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance line; the terminal summary prints them in order."""
    ACCEPTANCE[number] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail))
