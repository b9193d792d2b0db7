# %% [markdown]
# # A small benchmark run
#
# Generate twenty plants per family, run the heuristic policy once on each
# task and print per-family success rates.  The full-size run is just
# `ctrlsynth eval` on a bigger dataset.

# %%
from ctrlsynth import SystemClass
from ctrlsynth.data import dataset_tasks, generate
from ctrlsynth.harness import BenchmarkTask, run_trials, score

families = [SystemClass.FIRST_ORDER_STABLE, SystemClass.FIRST_ORDER_UNSTABLE,
            SystemClass.SECOND_ORDER_STABLE, SystemClass.SECOND_ORDER_UNSTABLE,
            SystemClass.FIRST_ORDER_DELAY]

# %%
for fam in families:
    entries = generate(fam, 20, seed=0)
    tasks = [BenchmarkTask(i, r) for i, r in dataset_tasks(entries)]
    m = run_trials(tasks, T=1)
    s = score(m)
    print(f"{fam.value:24s} tasks={m.n_systems:3d}  ASR={s.asr:5.1f}%  "
          f"mean iterations={s.mean_iterations_on_success:.2f}")
