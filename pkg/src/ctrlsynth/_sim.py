"""Compiled inner loop for fixed-step simulation of a unit-step experiment."""

import numpy as np
from numba import njit


@njit(cache=True)
def run_linear(phi, gam, c, d, n_steps, lag, feedback, limit):
    """Iterate x[k+1] = phi x[k] + gam u[k], y[k] = c x[k] + d u[k].

    Open loop: u[k] = 1 for k >= lag.  Feedback: u[k] = e[k - lag] with
    e = 1 - y, held in a ring buffer of ``lag`` samples.  Returns the output
    samples and a divergence flag; output is truncated once |y| > limit.
    """
    m = phi.shape[0]
    x = np.zeros(m)
    xn = np.zeros(m)
    y = np.empty(n_steps + 1)
    buf = np.zeros(max(lag, 1))
    for k in range(n_steps + 1):
        cx = 0.0
        for i in range(m):
            cx += c[i] * x[i]
        if feedback:
            if lag == 0:
                yk = (cx + d) / (1.0 + d)
                u = 1.0 - yk
            else:
                slot = k % lag
                u = buf[slot]
                yk = cx + d * u
                buf[slot] = 1.0 - yk
        else:
            u = 1.0 if k >= lag else 0.0
            yk = cx + d * u
        y[k] = yk
        if not (abs(yk) <= limit):
            return y[: k + 1], True
        for i in range(m):
            s = gam[i] * u
            for j in range(m):
                s += phi[i, j] * x[j]
            xn[i] = s
        for i in range(m):
            x[i] = xn[i]
    return y, False
