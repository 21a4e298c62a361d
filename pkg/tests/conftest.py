import numpy as np
import pytest

from aimm.model import ModelConfig, StateVector, TenorStructure
from aimm.processes import CIR, CIRJump, OUJump, ProductProcess

YEARS_SMALL = 4


def small_process(years: int = YEARS_SMALL) -> ProductProcess:
    comps = [CIR(0.026, 0.65, 0.5, 3.45)]
    comps += [
        CIRJump(0.10 + 0.02 * i, 0.3, 0.28, 0.5, alpha=24.0, beta=0.4) for i in range(years)
    ]
    comps += [
        OUJump(0.11, 0.45, 0.035, 0.02, 40.0, 0.3, 36.0, 0.25) for _ in range(years)
    ]
    return ProductProcess(tuple(comps), horizon=years * 1.0)


@pytest.fixture(scope="session")
def toy_config() -> ModelConfig:
    """Small hand-set model with genuine inflation loadings (not curve-fitted)."""
    years = YEARS_SMALL
    n = 2 * years
    tenor = TenorStructure(n=n)
    u_tilde = np.linspace(0.03, 0.0, n)
    u_bar = np.linspace(0.04, 0.01, n)
    v_tilde = u_tilde * (1 + 0.08 * np.arange(1, n + 1))
    v_bar = np.linspace(0.05, 0.4, n)
    return ModelConfig(
        tenor=tenor,
        process=small_process(years),
        u_tilde=u_tilde,
        u_bar=u_bar,
        v_tilde=v_tilde,
        v_bar=v_bar,
        numeraire_df=0.82,
        tilt_c=0.08,
    )


@pytest.fixture(scope="session")
def reference_cfg():
    from aimm.synthetic import reference_config

    return reference_config()


@pytest.fixture(scope="session")
def reference_snapshot(reference_cfg):
    from aimm.synthetic import synthetic_snapshot

    return synthetic_snapshot(reference_cfg)


def random_state(cfg: ModelConfig, rng: np.random.Generator, t: float) -> StateVector:
    m, n = cfg.process.m, cfg.process.n
    x = np.concatenate([rng.uniform(0.0, 2.0, m), rng.uniform(-0.4, 0.4, n)])
    return StateVector(t, x)
