"""Shared fixtures: tiny models, a finite-difference checker and toy corpora."""
import numpy as np
import pytest

import synthetic
from config import BetaMode, ModelConfig
from model import build_model
from subword import RESERVED, Vocab


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run acceptance-scale tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def toy_vocab(num_words, prefix='w'):
    return Vocab(RESERVED + tuple(f'{prefix}{i}' for i in range(num_words)), len(RESERVED) + num_words)


def tiny_model(beta_mode='gating', d_hidden=8, d_emb=6, src_words=6, tgt_words=5, seed=3, **kwargs):
    config = ModelConfig(d_emb=d_emb, d_hidden=d_hidden, beta_mode=BetaMode.parse(beta_mode), **kwargs)
    return build_model(config, toy_vocab(src_words), toy_vocab(tgt_words), seed=seed)


@pytest.fixture
def make_model():
    return tiny_model


def numeric_gradient(f, x, h=1e-5):
    """Central differences of scalar f() with respect to array x, perturbed in place."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)))


@pytest.fixture
def grad_check():
    """check(loss_fn, arrays, analytic) -> worst relative error over all arrays.

    `loss_fn()` recomputes the scalar loss from the current contents of
    `arrays`; `analytic` maps the same keys to backprop gradients.
    """
    def check(loss_fn, arrays, analytic):
        worst = 0.0
        for name, arr in arrays.items():
            numeric = numeric_gradient(loss_fn, arr)
            worst = max(worst, relative_error(analytic[name], numeric))
        return worst
    return check


@pytest.fixture
def toy_corpus(tmp_path):
    """write(task, pairs, name='train', **kwargs) -> dict of .src/.tree/.tgt paths."""
    def write(task='copy', pairs=12, name='train', **kwargs):
        corpus = synthetic.make_corpus(task, pairs, **kwargs)
        return synthetic.write_corpus(str(tmp_path / name), corpus)
    return write


@pytest.fixture
def make_vocab():
    return toy_vocab


@pytest.fixture
def cell_check(grad_check):
    """check(arrays, build, seed) -> worst relative error of a composite cell.

    `build(tape)` returns an output Var computed from `tape.param(name)` for
    the names in `arrays`; the scalar checked is a fixed random projection of it.
    """
    from numeric_core import ModelParams, Tape, backward, mul, total

    def check(arrays, build, seed=0):
        def forward():
            tape = Tape(ModelParams(arrays))
            return tape, build(tape)

        _, out = forward()
        weights = np.random.default_rng(seed).normal(size=out.shape)

        def loss(tape, out):
            return total(mul(out, tape.const(weights)))

        def loss_value():
            tape, out = forward()
            return float(loss(tape, out).value[0])

        tape, out = forward()
        analytic = backward(tape, loss(tape, out)).params()
        return grad_check(loss_value, arrays, analytic)
    return check
