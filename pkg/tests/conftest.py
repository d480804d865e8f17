import numpy as np
import pytest

from impactgraph.oracle import OracleConfig, generate

# Acceptance outcome lines, filled by test_acceptance.py.
ACCEPTANCE = {}


def numerical_grad(f, params, eps=1e-6):
    """Central finite differences of scalar ``f(params)`` for every entry."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.value)
        for idx in np.ndindex(p.shape):
            orig = p.value[idx]
            p.value[idx] = orig + eps
            up = float(f(params).value[0, 0])
            p.value[idx] = orig - eps
            dn = float(f(params).value[0, 0])
            p.value[idx] = orig
            g[idx] = (up - dn) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """Largest entry-wise gap, relative to the largest gradient magnitude."""
    diff = max(np.abs(analytic[k] - numeric[k]).max() for k in analytic)
    scale = max(max(np.abs(analytic[k]).max(), np.abs(numeric[k]).max()) for k in analytic)
    return diff / max(scale, 1e-12)


@pytest.fixture(scope="session")
def oracle_data():
    from impactgraph.dataset import records_to_arrays, split_masks

    X, Y = records_to_arrays(generate(OracleConfig(n_samples=60, seed=3)))
    return X, Y, split_masks(60, 0.2, 3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
