"""Numpy implementations of the hot elementwise kernels.

This is the reference backend: portable, always available, and the
ground truth that the compiled backend is tested against. All kernels
take and return float64 arrays and never record anything on a tape;
the autodiff layer above decides when and how to call them.
"""
import numpy as np

NAME = "pure"


def sine_fwd(x, omega=1.0):
    if omega == 1.0:
        return np.sin(x)
    return np.sin(omega * x)


def sine_bwd(x, omega, grad_out):
    if omega == 1.0:
        return np.cos(x) * grad_out
    return (omega * np.cos(omega * x)) * grad_out


def sigmoid_fwd(x):
    # exp overflow for very negative x saturates to the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid_bwd(y, grad_out):
    """Backward from the saved output y = sigmoid(x)."""
    return y * (1.0 - y) * grad_out


def fourier_fwd(p, num_bands):
    """Sinusoidal position encoding.

    p: (n, d) points. Output (n, 2*num_bands*d); the block for band k
    holds sin(2^k pi p_j) for each coordinate j, then cos of the same.
    """
    n, d = p.shape
    out = np.empty((n, 2 * num_bands * d))
    for k in range(num_bands):
        ph = (2.0 ** k * np.pi) * p
        out[:, 2 * k * d:(2 * k + 1) * d] = np.sin(ph)
        out[:, (2 * k + 1) * d:(2 * k + 2) * d] = np.cos(ph)
    return out


def fourier_bwd(p, num_bands, grad_out):
    n, d = p.shape
    dp = np.zeros_like(p)
    for k in range(num_bands):
        f = 2.0 ** k * np.pi
        ph = f * p
        sin_g = grad_out[:, 2 * k * d:(2 * k + 1) * d]
        cos_g = grad_out[:, (2 * k + 1) * d:(2 * k + 2) * d]
        dp += f * (np.cos(ph) * sin_g - np.sin(ph) * cos_g)
    return dp


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on param, m and v.

    step is the 1-based update count after this call.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
