"""Numeric substrate: a reverse-mode gradient tape over numpy primitives,
parameter storage and initialization, AdaDelta, and the checkpoint container.

Every value is a float64 numpy array. Vectors are 1-D, matrices 2-D and
scalars are arrays of shape (1,).
"""
import json
import logging
import zipfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from utils import TreeNMTError

logger = logging.getLogger(__name__)

DTYPE = np.float64
CHECKPOINT_VERSION = 'treenmt-ckpt-1'


class ShapeMismatch(TreeNMTError, ValueError):
    pass


class NotScalarLoss(TreeNMTError, ValueError):
    pass


class NonFiniteValue(TreeNMTError, FloatingPointError):
    pass


class CheckpointError(TreeNMTError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class MissingParameter(CheckpointError, LookupError):
    pass


class ModelParams:
    """Named, shaped parameter store. Insertion order is the canonical order."""

    def __init__(self, arrays=None):
        self._arrays = {}
        for name, value in (arrays or {}).items():
            self._arrays[name] = np.asarray(value, dtype=DTYPE)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=DTYPE)
        old = self._arrays.get(name)
        if old is not None and old.shape != value.shape:
            raise ShapeMismatch(f'{name}: expected shape {old.shape}, got {value.shape}')
        self._arrays[name] = value

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def shapes(self):
        return {name: arr.shape for name, arr in self._arrays.items()}

    def count(self):
        return int(sum(arr.size for arr in self._arrays.values()))

    def copy(self):
        return ModelParams({name: arr.copy() for name, arr in self._arrays.items()})


# --- primitive table: forward value and vector-Jacobian product ---

@dataclass(frozen=True)
class Primitive:
    forward: Callable
    vjp: Callable


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softmax(a):
    e = np.exp(a - a.max())
    return e / e.sum()


def _slice_vjp(g, out, x, start, stop):
    gx = np.zeros_like(x)
    gx[start:stop] = g
    return (gx,)


def _row_vjp(g, out, m, i):
    gm = np.zeros_like(m)
    gm[i] = g
    return (gm,)


def _rows_vjp(g, out, m, ids):
    gm = np.zeros_like(m)
    np.add.at(gm, list(ids), g)
    return (gm,)


def _concat_vjp(g, out, *xs):
    bounds = np.cumsum([x.shape[0] for x in xs])[:-1]
    return tuple(np.split(g, bounds))


def _nll_forward(logits, target):
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return np.array([lse - logits[target]])


def _nll_vjp(g, out, logits, target):
    p = _softmax(logits)
    p[target] -= 1.0
    return (g[0] * p,)


PRIMITIVES = {
    'affine': Primitive(
        lambda W, x, b: W @ x + b,
        lambda g, out, W, x, b: (np.outer(g, x), W.T @ g, g)),
    'matvec': Primitive(
        lambda W, x: W @ x,
        lambda g, out, W, x: (np.outer(g, x), W.T @ g)),
    'matmul': Primitive(
        lambda A, B: A @ B,
        lambda g, out, A, B: (g @ B.T, A.T @ g)),
    'transpose': Primitive(
        lambda A: A.T.copy(),
        lambda g, out, A: (g.T.copy(),)),
    'add': Primitive(lambda a, b: a + b, lambda g, out, a, b: (g, g)),
    'sub': Primitive(lambda a, b: a - b, lambda g, out, a, b: (g, -g)),
    'mul': Primitive(lambda a, b: a * b, lambda g, out, a, b: (g * b, g * a)),
    'one_minus': Primitive(lambda a: 1.0 - a, lambda g, out, a: (-g,)),
    'scale': Primitive(
        lambda a, factor: factor * a,
        lambda g, out, a, factor: (factor * g,)),
    'sigmoid': Primitive(_sigmoid, lambda g, out, a: (g * out * (1.0 - out),)),
    'tanh': Primitive(np.tanh, lambda g, out, a: (g * (1.0 - out * out),)),
    'softmax': Primitive(_softmax, lambda g, out, a: (out * (g - g @ out),)),
    'concat': Primitive(lambda *xs: np.concatenate(xs), _concat_vjp),
    'slice': Primitive(lambda x, start, stop: x[start:stop].copy(), _slice_vjp),
    'stack': Primitive(lambda *xs: np.stack(xs), lambda g, out, *xs: tuple(g)),
    'addrow': Primitive(lambda m, v: m + v, lambda g, out, m, v: (g, g.sum(axis=0))),
    'row': Primitive(lambda m, i: m[i].copy(), _row_vjp),
    'rows': Primitive(lambda m, ids: m[list(ids)], _rows_vjp),
    'sum': Primitive(
        lambda a: np.array([a.sum()]),
        lambda g, out, a: (np.full_like(a, g[0]),)),
    'dot': Primitive(
        lambda a, b: np.array([a @ b]),
        lambda g, out, a, b: (g[0] * b, g[0] * a)),
    'mix': Primitive(
        lambda beta, a, b: (1.0 - beta[0]) * a + beta[0] * b,
        lambda g, out, beta, a, b: (np.array([g @ (b - a)]), (1.0 - beta[0]) * g, beta[0] * g)),
    'nll': Primitive(_nll_forward, _nll_vjp),
}


@dataclass(frozen=True)
class Record:
    op: str
    inputs: tuple
    output: int
    attrs: dict = field(default_factory=dict)


class Var:
    __slots__ = ('tape', 'index')

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f'Var(#{self.index}, shape={self.shape})'


class Scope:
    """Parameter view under a dotted name prefix, e.g. `enc.tree`."""

    def __init__(self, tape, prefix):
        self.tape = tape
        self.prefix = prefix

    def __getitem__(self, name):
        return self.tape.param(f'{self.prefix}.{name}')

    def __contains__(self, name):
        return f'{self.prefix}.{name}' in self.tape.params

    def sub(self, name):
        return Scope(self.tape, f'{self.prefix}.{name}')


class Tape:
    """Ordered record of primitive applications for one sentence.

    With `record=False` values are computed but nothing is kept for
    backward (decoding). With `debug=True` every output is checked for
    NaN/Inf.
    """

    def __init__(self, params=None, record=True, debug=False):
        self.params = params if params is not None else ModelParams()
        self.record = record
        self.debug = debug
        self.values = []
        self.records = []
        self.param_vars = {}

    def _new(self, value):
        self.values.append(value)
        return Var(self, len(self.values) - 1)

    def const(self, value):
        return self._new(np.array(value, dtype=DTYPE, ndmin=1))

    def param(self, name):
        var = self.param_vars.get(name)
        if var is None:
            if name not in self.params:
                raise MissingParameter(f'parameter {name!r} is not defined')
            var = self._new(self.params[name])
            self.param_vars[name] = var
        return var

    def scope(self, prefix):
        return Scope(self, prefix)

    def apply(self, op, *inputs, **attrs):
        out = PRIMITIVES[op].forward(*(v.value for v in inputs), **attrs)
        if self.debug and not np.all(np.isfinite(out)):
            raise NonFiniteValue(f'{op} produced a non-finite value')
        var = self._new(out)
        if self.record:
            self.records.append(Record(op, tuple(v.index for v in inputs), var.index, attrs))
        return var

    def replay(self):
        """Recompute every recorded value from the tape leaves."""
        produced = {rec.output for rec in self.records}
        values = [None if i in produced else v for i, v in enumerate(self.values)]
        for rec in self.records:
            values[rec.output] = PRIMITIVES[rec.op].forward(
                *(values[i] for i in rec.inputs), **rec.attrs)
        return values


class Gradients:
    def __init__(self, tape, adjoints):
        self.tape = tape
        self.adjoints = adjoints

    def __getitem__(self, var):
        adj = self.adjoints[var.index]
        return np.zeros_like(var.value) if adj is None else adj

    def params(self):
        return {name: self.adjoints[var.index]
                for name, var in self.tape.param_vars.items()
                if self.adjoints[var.index] is not None}


def backward(tape, loss):
    if loss.value.size != 1:
        raise NotScalarLoss(f'loss must be a scalar, got shape {loss.shape}')
    if not tape.record:
        raise ValueError('tape was created with record=False')
    adjoints = [None] * len(tape.values)
    adjoints[loss.index] = np.ones_like(loss.value)
    values = tape.values
    for rec in reversed(tape.records):
        g = adjoints[rec.output]
        if g is None:
            continue
        grads = PRIMITIVES[rec.op].vjp(g, values[rec.output], *(values[i] for i in rec.inputs), **rec.attrs)
        for i, gi in zip(rec.inputs, grads):
            adjoints[i] = gi if adjoints[i] is None else adjoints[i] + gi
    return Gradients(tape, adjoints)


# --- shape-checked operations ---

def _require(cond, message):
    if not cond:
        raise ShapeMismatch(message)


def _same(op, a, b):
    _require(a.shape == b.shape, f'{op}: shapes {a.shape} and {b.shape} differ')


def affine(W, x, b):
    _require(len(W.shape) == 2 and len(x.shape) == 1 and W.shape[1] == x.shape[0]
             and b.shape == (W.shape[0],),
             f'affine: W{W.shape} x{x.shape} b{b.shape}')
    return W.tape.apply('affine', W, x, b)


def matvec(W, x):
    _require(len(W.shape) == 2 and len(x.shape) == 1 and W.shape[1] == x.shape[0],
             f'matvec: W{W.shape} x{x.shape}')
    return W.tape.apply('matvec', W, x)


def matmul(A, B):
    _require(A.shape[-1] == B.shape[0], f'matmul: A{A.shape} B{B.shape}')
    return A.tape.apply('matmul', A, B)


def transpose(A):
    return A.tape.apply('transpose', A)


def add(a, b):
    _same('add', a, b)
    return a.tape.apply('add', a, b)


def sub(a, b):
    _same('sub', a, b)
    return a.tape.apply('sub', a, b)


def mul(a, b):
    _same('mul', a, b)
    return a.tape.apply('mul', a, b)


def one_minus(a):
    return a.tape.apply('one_minus', a)


def scale(a, factor):
    return a.tape.apply('scale', a, factor=float(factor))


def sigmoid(x):
    return x.tape.apply('sigmoid', x)


def tanh(x):
    return x.tape.apply('tanh', x)


def softmax(x):
    return x.tape.apply('softmax', x)


def concat(*xs):
    return xs[0].tape.apply('concat', *xs)


def take(x, start, stop):
    return x.tape.apply('slice', x, start=start, stop=stop)


def stack(xs):
    shape = xs[0].shape
    for x in xs:
        _require(x.shape == shape, f'stack: {x.shape} != {shape}')
    return xs[0].tape.apply('stack', *xs)


def addrow(m, v):
    _require(m.shape[1:] == v.shape, f'addrow: M{m.shape} v{v.shape}')
    return m.tape.apply('addrow', m, v)


def row(m, i):
    return m.tape.apply('row', m, i=int(i))


def rows(m, ids):
    return m.tape.apply('rows', m, ids=tuple(int(i) for i in ids))


def total(x):
    return x.tape.apply('sum', x)


def dot(a, b):
    _same('dot', a, b)
    return a.tape.apply('dot', a, b)


def mix(beta, a, b):
    """(1 - beta) * a + beta * b for a scalar beta."""
    _require(beta.value.size == 1, f'mix: beta must be scalar, got {beta.shape}')
    _same('mix', a, b)
    return a.tape.apply('mix', beta, a, b)


def nll(logits, target):
    return logits.tape.apply('nll', logits, target=int(target))


def log_softmax(values):
    m = values.max()
    return values - (m + np.log(np.exp(values - m).sum()))


# --- initialization and optimization ---

def init_params(shape, seed):
    m, n = shape
    if m < 1 or n < 1:
        raise ValueError(f'shape must be positive, got {shape}')
    limit = np.sqrt(6.0 / (m + n))
    return np.random.default_rng(seed).uniform(-limit, limit, size=(m, n))


@dataclass
class OptState:
    rho: float = 0.95
    eps: float = 1e-6
    acc_grad: dict = field(default_factory=dict)
    acc_delta: dict = field(default_factory=dict)
    steps: int = 0


def adadelta_step(params, grads, state):
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        if name not in params:
            raise MissingParameter(f'gradient for unknown parameter {name!r}')
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f'{name}: gradient {g.shape} vs parameter {p.shape}')
        eg = state.acc_grad.get(name)
        ed = state.acc_delta.get(name)
        if eg is None:
            eg = np.zeros_like(p)
            ed = np.zeros_like(p)
        eg = rho * eg + (1.0 - rho) * g * g
        delta = -np.sqrt((ed + eps) / (eg + eps)) * g
        ed = rho * ed + (1.0 - rho) * delta * delta
        state.acc_grad[name] = eg
        state.acc_delta[name] = ed
        params[name] = p + delta
    state.steps += 1
    return params, state


# --- checkpoint container ---

def write_container(path, arrays, meta, dtype='float64'):
    store = '<f4' if dtype == 'float32' else '<f8'
    payload = {name: np.ascontiguousarray(arr, dtype=store) for name, arr in arrays.items()}
    payload['__version__'] = np.array(CHECKPOINT_VERSION)
    payload['__meta__'] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, 'wb') as f:
        np.savez(f, **payload)
    logger.debug('wrote %d arrays to %s', len(arrays), path)


def read_container(path):
    """Returns (meta, arrays) with every array converted to float64."""
    try:
        with np.load(path, allow_pickle=False) as data:
            contents = {name: data[name] for name in data.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise CorruptCheckpoint(f'{path}: {e}') from e
    version = contents.pop('__version__', None)
    if version is None:
        raise CorruptCheckpoint(f'{path}: no version entry')
    if str(version) != CHECKPOINT_VERSION:
        raise VersionMismatch(f'{path}: version {str(version)!r}, expected {CHECKPOINT_VERSION!r}')
    try:
        meta = json.loads(str(contents.pop('__meta__')))
    except (KeyError, ValueError) as e:
        raise CorruptCheckpoint(f'{path}: bad metadata') from e
    arrays = {name: arr.astype(DTYPE) for name, arr in contents.items()}
    return meta, arrays
