import numpy as np
import pytest

from piic.models import Dataset, LikelihoodModel, PriorSpec


def make_linear(seed, n=12, p=6, theta=None, sigma2=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    theta = np.linspace(1.5, -0.5, p) if theta is None else np.asarray(theta, dtype=float)
    y = X @ theta + np.sqrt(sigma2) * rng.standard_normal(n)
    return Dataset(X, y)


def make_binomial(seed, n=30, p=3, m=5, theta=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    theta = np.linspace(1.0, -0.5, p) if theta is None else np.asarray(theta, dtype=float)
    y = rng.binomial(m, 1.0 / (1.0 + np.exp(-X @ theta)))
    return Dataset(X, y, "binomial", m)


@pytest.fixture
def gauss1():
    return LikelihoodModel.linear_gaussian(1.0)


@pytest.fixture
def toy_linear():
    return make_linear(0)


@pytest.fixture
def normal_prior():
    return PriorSpec.shared("normal", 6, 1.5, 12)


@pytest.fixture
def short_sampler():
    from piic.inference import SamplerConfig

    return SamplerConfig(chain_length=12_000, burn_in=2_000, thin=2, seed=11)


@pytest.fixture(scope="session")
def diabetes_csv(tmp_path_factory):
    """The 442 x 10 diabetes table (unscaled) written as CSV."""
    sk = pytest.importorskip("sklearn.datasets")
    d = sk.load_diabetes(scaled=False)
    cols = ["age", "sex", "bmi", "map", "tc", "ldl", "hdl", "tch", "ltg", "glu"]
    path = tmp_path_factory.mktemp("diabetes") / "diabetes.csv"
    with path.open("w") as fh:
        fh.write(",".join(cols + ["y"]) + "\n")
        for x, y in zip(d.data, d.target):
            fh.write(",".join(repr(float(v)) for v in x) + f",{float(y)!r}\n")
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
