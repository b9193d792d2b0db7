# %% [markdown]
# # Designing a controller for 19.95/(s + 0.3897)
#
# A first-order plant, a phase-margin floor of 71.542 degrees and a settling
# window of [0.005, 3.726] s.  We walk the loop-shaping controller by hand for
# two bandwidths, then let the heuristic policy finish the job.

# %%
import math

from ctrlsynth import (HeuristicPolicy, LoopShapeParams, TaskRequirement, TransferFunction,
                       evaluate_closed_loop, loopshape_controller, run_design)
from ctrlsynth.design import generate_feedback

G = TransferFunction.from_coeffs([19.95], [1, 0.3897])
req = TaskRequirement(G, phase_margin_min=71.542, settling_time_min=0.005, settling_time_max=3.726)
print("plant:", G)

# %% [markdown]
# ## Two manual designs
#
# With beta_b = sqrt(10) the integral boost leaves plenty of phase.  At
# omega_L = 1 rad/s the loop is far too slow; doubling it helps but still
# misses the settling deadline.

# %%
for w in (1.0, 2.0):
    c = loopshape_controller(G, LoopShapeParams(w, math.sqrt(10)))
    rep = evaluate_closed_loop(G, c.tf, req)
    fb = generate_feedback(rep, req)
    print(f"omega_L={w}:  C(s) = {c.tf}")
    print(f"  PM {rep.margins.phase_margin_deg:.2f} deg, Ts {rep.step.settling_time_s:.3f} s,"
          f" success={rep.success}")
    for hint in fb.directives:
        print("  -", hint)

# %% [markdown]
# ## Let the policy iterate

# %%
out = run_design(req, HeuristicPolicy())
for rec in out.trace:
    p = rec.design.params
    print(f"iteration {rec.iteration}: omega_L={p.omega_L:.3f}, beta_b={p.beta_b:.3f},"
          f" PM={rec.report.margins.phase_margin_deg:.2f}, Ts={rec.report.step.settling_time_s:.3f}")
print("final controller:", out.final.tf, "| success:", out.success)
