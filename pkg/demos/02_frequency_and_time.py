# %% [markdown]
# # Margins and step responses, with and without transport delay
#
# The same PI-type controller is wrapped around a first-order plant with a
# growing delay.  The phase margin shrinks by omega_c * theta, and once it
# is gone the delayed simulation diverges.

# %%
import math

from ctrlsynth import (LoopShapeParams, TaskRequirement, TransferFunction, compute_margins,
                       evaluate_closed_loop, loopshape_controller)
from ctrlsynth.lti import tf_series

base = TransferFunction.from_coeffs([8.79], [1, 4])
ctrl = loopshape_controller(base, LoopShapeParams(6.0)).tf

# %%
for theta in (0.0, 0.05, 0.14, 0.3, 0.35):
    G = TransferFunction.from_coeffs([8.79], [1, 4], theta)
    m = compute_margins(tf_series(G, ctrl))
    rep = evaluate_closed_loop(G, ctrl, TaskRequirement(G, 30, 0, 20))
    print(f"theta={theta:<5} PM={m.phase_margin_deg:7.2f} deg  "
          f"GM+={m.gain_margin_upper_db:6.2f} dB  stable={rep.stable}  "
          f"Ts={rep.step.settling_time_s:.3f} s")

# %% [markdown]
# The phase margin at theta = 0 minus the delay's phase at crossover
# predicts the delayed margins almost exactly:

# %%
m0 = compute_margins(tf_series(base, ctrl))
for theta in (0.05, 0.14):
    print(theta, round(m0.phase_margin_deg - math.degrees(m0.gain_crossover_omega * theta), 2))
