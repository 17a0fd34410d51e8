import numpy as np
import pytest

from wavetraffic import tensor as T
from wavetraffic.graph import build_graph_bundle
from wavetraffic.model import Model, ModelConfig


def finite_difference(fn, arrays, h=1e-5):
    """Central finite-difference gradients of scalar fn(*arrays).

    Independent oracle for every reverse-mode check: perturbs each entry
    of each array in place and differences the scalar output.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fn()
            flat[i] = old - h
            down = fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() <= rtol, f"max relative gradient error {rel.max():.3g}"


def gradcheck_op(build_loss, params, rtol=1e-4):
    """Check reverse-mode grads of a scalar-producing op against the oracle.

    ``params`` are Tensors with requires_grad set; ``build_loss`` must
    recompute the scalar loss Tensor from their current data.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.grad = None
    g = T.Graph()
    g.backward(loss)
    numeric = finite_difference(lambda: build_loss().item(), [p.data for p in params])
    for p, num in zip(params, numeric):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        assert_grads_close(analytic, num, rtol=rtol)


@pytest.fixture(scope="session")
def toy_setup():
    """Small graph bundle + config used by most model tests."""
    rng = np.random.default_rng(7)
    n = 4
    train = np.abs(rng.normal(5.0, 1.0, size=(n, 120)))
    bundle = build_graph_bundle(train, p_sp=0.5, cheb_order=3)
    cfg = ModelConfig(nodes=n, blocks=2, width=3, heads=3, level=2,
                      channels=2, in_channels=1)
    return cfg, bundle


@pytest.fixture()
def toy_model(toy_setup):
    cfg, bundle = toy_setup
    return Model(cfg, bundle, seed=11)
