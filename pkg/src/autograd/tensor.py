import logging
import threading

import numpy as np

from errors import ShapeError, TapeError

logger = logging.getLogger(__name__)

_active = threading.local()


class Tape:
    '''Ordered record of primitive operations for one reverse pass.

    Nodes are appended in execution order, which is already a topological
    order of the graph, so the backward pass simply walks the list from the
    end. A tape is consumed by exactly one backward pass.
    '''

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_active, 'stack', None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.stack.pop()
        return False

    def record(self, output, inputs, backward_fn, op, signature=None):
        if self.consumed:
            raise TapeError(f'{op}: tape already consumed by a backward pass')
        self.nodes.append(Node(op, output, inputs, backward_fn, signature))

    def relu_signature(self):
        '''Sign pattern of every relu input as it was when recorded, used to detect kinks'''
        parts = [node.signature.ravel() for node in self.nodes if node.signature is not None]
        if not parts:
            return np.zeros(0, dtype=bool)
        return np.concatenate(parts)

    def gradients(self, loss, params):
        '''Gradient arrays of a scalar loss for each of params.

        Consumes the tape but leaves every tensor's .grad untouched, so
        several tapes over the same parameters may run on distinct threads.
        '''
        grads = self._run(loss)
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]

    def backward(self, loss):
        '''Accumulate into .grad of every requires_grad tensor on the tape, intermediates included'''
        grads = self._run(loss)
        reachable = {}
        for node in self.nodes:
            for tensor in (*node.inputs, node.output):
                if tensor.requires_grad:
                    reachable[id(tensor)] = tensor
        for key, tensor in reachable.items():
            g = grads.get(key, np.zeros_like(tensor.data))
            if tensor.grad is None:
                tensor.grad = np.array(g, dtype=np.float64)
            else:
                tensor.grad = tensor.grad + g

    def _run(self, loss):
        if loss.data.size != 1:
            raise TapeError(f'backward needs a scalar loss, got shape {loss.shape}')
        if self.consumed:
            raise TapeError('tape already consumed by a backward pass')
        if loss._tape is not self:
            raise TapeError('loss was not recorded on this tape')
        self.consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            local = node.backward_fn(upstream)
            for tensor, g in zip(node.inputs, local):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return grads


class Node:
    __slots__ = ('op', 'output', 'inputs', 'backward_fn', 'signature')

    def __init__(self, op, output, inputs, backward_fn, signature=None):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.signature = signature


def current_tape():
    stack = getattr(_active, 'stack', None)
    return stack[-1] if stack else None


class Tensor:
    '''Dense float64 array, row-major, with an optional autodiff tape handle'''

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, order='C')
        if self.data.size == 0:
            raise ShapeError('tensor', self.data.shape, (), 'extents must be positive')
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return list(self.data.shape)

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __repr__(self):
        label = f', name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})'


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _resolve_tape(inputs, op):
    tapes = {id(t._tape): t._tape for t in inputs if t._tape is not None}
    if len(tapes) > 1:
        raise TapeError(f'{op}: inputs were recorded on different tapes')
    if tapes:
        return next(iter(tapes.values()))
    return current_tape() or Tape()


def _emit(op, value, inputs, backward_fn, signature=None):
    out = Tensor(value)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _resolve_tape(inputs, op)
    out._tape = tape
    if out.requires_grad:
        tape.record(out, inputs, backward_fn, op, signature)
    elif tape.consumed:
        raise TapeError(f'{op}: tape already consumed by a backward pass')
    return out


def _batch_broadcast(op, a, b):
    '''Equal shapes, or one operand equals the other minus its leading dim'''
    if a.data.shape == b.data.shape:
        return None
    if a.data.ndim == b.data.ndim + 1 and a.data.shape[1:] == b.data.shape:
        return 'b'
    if b.data.ndim == a.data.ndim + 1 and b.data.shape[1:] == a.data.shape:
        return 'a'
    raise ShapeError(op, a.shape, b.shape, 'only leading batch broadcast is supported')


def _unbroadcast(g, which, side):
    return g.sum(axis=0) if which == side else g


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape, 'inner dimensions must agree')
    value = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T
        if a.data.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = a.data.T @ g
        return ga, gb

    return _emit('matmul', value, (a, b), backward_fn)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    which = _batch_broadcast('add', a, b)

    def backward_fn(g):
        return _unbroadcast(g, which, 'a'), _unbroadcast(g, which, 'b')

    return _emit('add', a.data + b.data, (a, b), backward_fn)


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    which = _batch_broadcast('subtract', a, b)

    def backward_fn(g):
        return _unbroadcast(g, which, 'a'), -_unbroadcast(g, which, 'b')

    return _emit('subtract', a.data - b.data, (a, b), backward_fn)


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    which = _batch_broadcast('multiply', a, b)

    def backward_fn(g):
        return (_unbroadcast(g * b.data, which, 'a'),
                _unbroadcast(g * a.data, which, 'b'))

    return _emit('multiply', a.data * b.data, (a, b), backward_fn)


def relu(x):
    x = as_tensor(x)
    # derivative at exactly 0 is 0
    positive = x.data > 0

    def backward_fn(g):
        return (g * positive,)

    return _emit('relu', np.where(positive, x.data, 0.0), (x,), backward_fn, signature=positive.copy())


def sum(x):
    x = as_tensor(x)

    def backward_fn(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return _emit('sum', np.sum(x.data), (x,), backward_fn)


def mean(x):
    x = as_tensor(x)
    count = x.data.size

    def backward_fn(g):
        return (np.full_like(x.data, g.reshape(-1)[0] / count),)

    return _emit('mean', np.sum(x.data) / count, (x,), backward_fn)


def squared_error(prediction, target):
    '''Mean of squared differences over all elements'''
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.data.shape != target.data.shape:
        raise ShapeError('squared_error', prediction.shape, target.shape)
    diff = prediction.data - target.data
    count = diff.size

    def backward_fn(g):
        scale = g.reshape(-1)[0] * 2.0 / count
        return scale * diff, -scale * diff

    return _emit('squared_error', np.sum(diff * diff) / count, (prediction, target), backward_fn)


def mask_select(x, mask):
    '''Elements of x where mask is true, flattened in row-major order'''
    x = as_tensor(x)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    if mask.shape != x.data.shape:
        raise ShapeError('mask_select', x.shape, mask.shape, 'mask must match the input')
    if not mask.any():
        raise ShapeError('mask_select', x.shape, mask.shape, 'mask keeps no element')

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[mask] = g
        return (full,)

    return _emit('mask_select', x.data[mask], (x,), backward_fn)


def concat(tensors):
    '''Join 2-d tensors along their last axis'''
    tensors = [as_tensor(t) for t in tensors]
    first = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != first.data.ndim or t.data.shape[:-1] != first.data.shape[:-1]:
            raise ShapeError('concat', first.shape, t.shape, 'leading dimensions must agree')
    widths = [t.data.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _emit('concat', np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), backward_fn)


def backward(loss):
    '''Populate .grad on every requires_grad tensor reachable from loss'''
    if loss.data.size != 1:
        raise TapeError(f'backward needs a scalar loss, got shape {loss.shape}')
    if loss._tape is None:
        raise TapeError('loss has no tape; it was not produced by a primitive')
    loss._tape.backward(loss)
