"""Pure-Python/numpy versions of the hot kernels (fallback for ``_kernels``)."""

import math

import numpy as np

# Ascending series is accurate to ~1e-13 below this point; the Hankel
# expansion reaches 1e-12 above it (at 8 it is only good to ~4e-9).
J0_SPLIT = 12.0


def j0(x):
    x = abs(float(x))
    if x < J0_SPLIT:
        q = 0.25 * x * x
        term = 1.0
        total = 1.0
        k = 0
        while True:
            k += 1
            term *= -q / (k * k)
            total += term
            if abs(term) < 1e-17 and k > 2:
                return total
    # Hankel asymptotic expansion truncated at the smallest term
    p = 0.0
    qs = 0.0
    mag = 1.0
    k = 0
    while True:
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p += sign * mag
        else:
            qs -= sign * mag
        k += 1
        nxt = mag * (2 * k - 1) ** 2 / (8.0 * k * x)
        if nxt >= mag or nxt < 1e-18:
            break
        mag = nxt
    chi = x - 0.25 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - qs * math.sin(chi))


def j0_array(xs):
    xs = np.asarray(xs, dtype=float)
    return np.array([j0(v) for v in xs.ravel()]).reshape(xs.shape)


def topk_mask(x, k):
    """0/1 vector marking the ``k`` largest entries; ties go to the lowest index."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[0], dtype=np.int8)
    if k > 0:
        out[np.argsort(-x, kind="stable")[:k]] = 1
    return out


def reward_rate(a, beta, psi_s, eta, rho2, M, p_d, sigma2, tau_c, log_base):
    """Sum over data instants of log(1 + xi1[n] / (xi23 + I_hat + sigma2)) / tau_c."""
    a = np.asarray(a, dtype=float)
    coh = float(np.sum(a * np.sqrt(eta) * psi_s))
    xi1 = (M * M) * coh * coh * np.asarray(rho2, dtype=float)
    xi23 = (M * M) * float(np.sum(a * eta * beta * psi_s))
    interf = p_d * float(np.sum((1.0 - a) * beta))
    denom = xi23 + interf + sigma2
    return float(np.sum(np.log1p(xi1 / denom))) / (tau_c * math.log(log_base))


def dense_forward(x, weights, biases, out_tanh):
    """Single-vector ReLU MLP forward; tanh on the output when ``out_tanh``."""
    h = np.asarray(x, dtype=float)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    if out_tanh:
        h = np.tanh(h)
    return h
