"""Independent scalar reference for LIF dynamics, one element at a time."""

import math


def simulate(xs, tau, v_threshold, v_reset=0.0, v_rest=0.0, r=1.0, refractory_steps=0):
    """Spikes and post-step membrane values for one element's input sequence ``xs``."""
    v = v_rest
    remaining = 0
    inv_tau = 1.0 / tau
    spikes, volts = [], []
    for x in xs:
        h = v + inv_tau * (-(v - v_rest) + r * x)
        fired = h - v_threshold >= 0.0
        if remaining > 0:
            s = 0.0
            remaining -= 1
        else:
            s = 1.0 if fired else 0.0
            if fired and refractory_steps > 0:
                remaining = refractory_steps
        v = v_reset if s == 1.0 else h
        spikes.append(s)
        volts.append(v)
    return spikes, volts


def atan_surrogate(alpha, x):
    return alpha / (2.0 * (1.0 + (math.pi / 2.0 * alpha * x) ** 2))


def sigmoid_surrogate(alpha, x):
    s = 1.0 / (1.0 + math.exp(-alpha * x))
    return alpha * s * (1.0 - s)
