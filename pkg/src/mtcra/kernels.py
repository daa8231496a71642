"""Hot numeric kernels for the Q-network: forward pass, loss gradient, Adam.

Every kernel exists twice: a loop version compiled with numba (``_nb_*``) and
a vectorised numpy version (``_np_*``). The public names are bound to one of
them according to :mod:`mtcra._accel`. Both variants share signatures and
write gradients/updates in place so callers never allocate per step.

The network is fixed at two ReLU hidden layers and a linear output layer,
with row-vector convention ``z = x @ W + b``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------- numpy path


def _np_forward(x, W1, b1, W2, b2, W3, b3):
    h1 = np.maximum(x @ W1 + b1, 0.0)
    h2 = np.maximum(h1 @ W2 + b2, 0.0)
    return h2 @ W3 + b3


def _np_grad(x, actions, targets, W1, b1, W2, b2, W3, b3,
             gW1, gb1, gW2, gb2, gW3, gb3):
    m = x.shape[0]
    z1 = x @ W1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ W2 + b2
    h2 = np.maximum(z2, 0.0)
    q = h2 @ W3 + b3

    rows = np.arange(m)
    err = q[rows, actions] - targets
    loss = float(err @ err) / m

    dq = np.zeros_like(q)
    dq[rows, actions] = (2.0 / m) * err
    gW3[...] = h2.T @ dq
    gb3[...] = dq.sum(axis=0)
    dz2 = (dq @ W3.T) * (z2 > 0.0)
    gW2[...] = h1.T @ dz2
    gb2[...] = dz2.sum(axis=0)
    dz1 = (dz2 @ W2.T) * (z1 > 0.0)
    gW1[...] = x.T @ dz1
    gb1[...] = dz1.sum(axis=0)
    return loss


def _np_adam(theta, grad, m1, m2, lr, beta1, beta2, eps, t):
    m1 *= beta1
    m1 += (1.0 - beta1) * grad
    m2 *= beta2
    m2 += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    theta -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + eps)


# ---------------------------------------------------------------- numba path


@njit(fastmath=True)
def _dense_relu(inp, W, b, out, relu):
    # out = inp @ W + b, row-major accumulation keeps the inner loop contiguous
    n_out = W.shape[1]
    for j in range(n_out):
        out[j] = b[j]
    for k in range(inp.shape[0]):
        v = inp[k]
        if v != 0.0:
            for j in range(n_out):
                out[j] += v * W[k, j]
    if relu:
        for j in range(n_out):
            if out[j] < 0.0:
                out[j] = 0.0


@njit(fastmath=True)
def _nb_forward(x, W1, b1, W2, b2, W3, b3):
    m = x.shape[0]
    out = np.empty((m, W3.shape[1]))
    h1 = np.empty(W1.shape[1])
    h2 = np.empty(W2.shape[1])
    for i in range(m):
        _dense_relu(x[i], W1, b1, h1, True)
        _dense_relu(h1, W2, b2, h2, True)
        _dense_relu(h2, W3, b3, out[i], False)
    return out


@njit(fastmath=True)
def _nb_grad(x, actions, targets, W1, b1, W2, b2, W3, b3,
             gW1, gb1, gW2, gb2, gW3, gb3):
    m, d_in = x.shape
    n1 = W1.shape[1]
    n2 = W2.shape[1]
    gW1[:] = 0.0
    gb1[:] = 0.0
    gW2[:] = 0.0
    gb2[:] = 0.0
    gW3[:] = 0.0
    gb3[:] = 0.0
    h1 = np.empty(n1)
    h2 = np.empty(n2)
    d1 = np.empty(n1)
    d2 = np.empty(n2)
    loss = 0.0
    for i in range(m):
        _dense_relu(x[i], W1, b1, h1, True)
        _dense_relu(h1, W2, b2, h2, True)
        a = actions[i]
        q = b3[a]
        for k in range(n2):
            q += h2[k] * W3[k, a]
        err = q - targets[i]
        loss += err * err
        dq = 2.0 * err / m

        gb3[a] += dq
        for k in range(n2):
            if h2[k] > 0.0:
                gW3[k, a] += h2[k] * dq
                d2[k] = W3[k, a] * dq
            else:
                d2[k] = 0.0
        for j in range(n2):
            gb2[j] += d2[j]
        for k in range(n1):
            if h1[k] > 0.0:
                hk = h1[k]
                s = 0.0
                for j in range(n2):
                    gW2[k, j] += hk * d2[j]
                    s += W2[k, j] * d2[j]
                d1[k] = s
            else:
                d1[k] = 0.0
        for k in range(n1):
            gb1[k] += d1[k]
        for r in range(d_in):
            xr = x[i, r]
            if xr != 0.0:
                for k in range(n1):
                    gW1[r, k] += xr * d1[k]
    return loss / m


@njit(fastmath=True)
def _nb_adam(theta, grad, m1, m2, lr, beta1, beta2, eps, t):
    step = lr / (1.0 - beta1 ** t)
    inv_c2 = 1.0 / (1.0 - beta2 ** t)
    for i in range(theta.shape[0]):
        g = grad[i]
        a = beta1 * m1[i] + (1.0 - beta1) * g
        b = beta2 * m2[i] + (1.0 - beta2) * g * g
        m1[i] = a
        m2[i] = b
        theta[i] -= step * a / (np.sqrt(b * inv_c2) + eps)


# above this many rows the BLAS-backed numpy product wins (see benchmarks/)
NUMBA_FORWARD_MAX_ROWS = 32


def _mixed_forward(x, W1, b1, W2, b2, W3, b3):
    if x.shape[0] <= NUMBA_FORWARD_MAX_ROWS:
        return _nb_forward(x, W1, b1, W2, b2, W3, b3)
    return _np_forward(x, W1, b1, W2, b2, W3, b3)


if USE_NUMBA:
    mlp_forward = _mixed_forward
    mlp_grad = _nb_grad
    adam_update = _nb_adam
else:
    mlp_forward = _np_forward
    mlp_grad = _np_grad
    adam_update = _np_adam
