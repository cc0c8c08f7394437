"""A small hyperparameter sweep with a markdown summary.

Run: python demos/05_ablation_sweep.py
"""

from attnprior import GuidanceConfig, SweepSpec, emit_report, run_sweep

# Vary the intervention horizon over a pair of prompts. The reference
# ablations probe K = 0 / 25 / 50 at full step count; this demo keeps
# the runs short.
spec = SweepSpec(
    axis="intervention_K",
    values=(0.0, 5.0, 10.0),
    base=GuidanceConfig(total_steps=10, intervention_steps=5, step_size=10.0),
    prompts=("a cat and a red car", "a purple crown and a green bowl"),
    seeds=(0, 1),
)

report = run_sweep(spec)
print(f"ran {len(report.cells)} cells, {report.n_failed} failed\n")
print(emit_report(report, "markdown-table").decode())

print("K = 0 rows are the unguided baseline; identical seeds make them")
print("reproducible run to run. Try axis='delta' with values")
print("(0.05, 0.15, 0.50) or axis='step_size' with (1, 20, 40).")
