import numpy as np
import pytest
from hypothesis import settings

from camadapt.synth import SynthConfig, generate_network

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_basis(rng, D, d):
    Q, _ = np.linalg.qr(rng.standard_normal((D, d)))
    return Q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_network():
    cfg = SynthConfig(n_cameras=4, n_identities=30, images_per_identity=4,
                      latent_dim=6, feature_dim=16, shift_angles=(0.0, 0.2, 0.5, 0.9), seed=3)
    return generate_network(cfg)


ACCEPTANCE = {}


def record_acceptance(number, title, ok, detail=""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else ""))
