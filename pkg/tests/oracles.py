"""Independent reference computations used by the tests.

Nothing here calls into the margin or simulation code under test: margins
come from a dense uniform-in-log sweep with ``np.unwrap`` and linear
interpolation, time responses from scipy's LTI solvers or a plain
forward-Euler loop.
"""

import numpy as np
import scipy.signal


def brute_margins(num, den, delay=0.0, n=1_000_000, w_min=1e-4, w_max=1e6):
    """(worst PM deg, upper GM dB, lower GM dB) from a dense frequency sweep."""
    w = np.logspace(np.log10(w_min), np.log10(w_max), n)
    L = np.polyval(num, 1j * w) / np.polyval(den, 1j * w) * np.exp(-1j * w * delay)
    mag = np.abs(L)
    ph = np.degrees(np.unwrap(np.angle(L)))
    lw = np.log(w)
    lm = np.log(mag)

    pms = []
    idx = np.flatnonzero(np.sign(lm[:-1]) != np.sign(lm[1:]))
    for i in idx:
        f = lm[i] / (lm[i] - lm[i + 1])
        p = ph[i] + f * (ph[i + 1] - ph[i])
        pms.append((180.0 + p + 180.0) % 360.0 - 180.0)
    pm = min(pms) if pms else np.inf

    up, lo = np.inf, -np.inf
    u = (ph + 180.0) / 360.0
    k = np.floor(u)
    for i in np.flatnonzero(k[:-1] != k[1:]):
        level = max(k[i], k[i + 1]) * 360.0 - 180.0
        f = (level - ph[i]) / (ph[i + 1] - ph[i])
        x = lw[i] + f * (lw[i + 1] - lw[i])
        m = np.interp(x, lw[i:i + 2], lm[i:i + 2])
        gm = -20.0 * m / np.log(10.0)
        if gm > 0:
            up = min(up, gm)
        elif gm < 0:
            lo = max(lo, gm)
    return pm, up, lo


def scipy_step(num, den, t):
    """Step response of a rational TF on the given (uniform) grid."""
    _, y = scipy.signal.step((num, den), T=t)
    return y


def euler_delay_feedback(num, den, delay, horizon, dt):
    """Unity feedback around the strictly proper ``num/den * exp(-delay s)`` by
    forward Euler with a sample-delay line on the error; first-order accurate."""
    A, B, C, D = scipy.signal.tf2ss(num, den)
    assert np.all(D == 0), "oracle needs a strictly proper loop"
    lag = int(round(delay / dt))
    steps = int(round(horizon / dt))
    x = np.zeros(A.shape[0])
    e = np.zeros(steps)
    y = np.zeros(steps)
    for k in range(steps):
        y[k] = float(C[0] @ x)
        e[k] = 1.0 - y[k]
        u = e[k - lag] if k >= lag else 0.0
        x = x + dt * (A @ x + B[:, 0] * u)
    return np.arange(steps) * dt, y


def settling_from_samples(t, y, final, band=0.02):
    out = np.flatnonzero(np.abs(y - final) > band * abs(final))
    if out.size == 0:
        return t[0]
    if out[-1] == len(y) - 1:
        return np.inf
    return t[out[-1] + 1]


def random_loop(rng):
    """A random loop: stable plant of order 1-4, optional integrator and delay, random gain."""
    order = int(rng.integers(1, 5))
    poles = []
    while len(poles) < order:
        if order - len(poles) >= 2 and rng.random() < 0.4:
            wn, z = rng.uniform(0.2, 20), rng.uniform(0.1, 0.9)
            poles += [complex(-z * wn, wn * np.sqrt(1 - z * z)), complex(-z * wn, -wn * np.sqrt(1 - z * z))]
        else:
            poles.append(-rng.uniform(0.05, 30))
    den = np.real(np.poly(poles))
    if rng.random() < 0.3:
        den = np.append(den, 0.0)
    num = np.array([1.0])
    if rng.random() < 0.4:
        num = np.array([1.0, rng.uniform(0.1, 30)])
    num = num * rng.uniform(0.2, 50) * abs(den[-1] if den[-1] else 1.0)
    delay = rng.uniform(0.0, 0.3) if rng.random() < 0.3 else 0.0
    return num, den, delay
