"""Print size and cost of every variant, kernel schedule and attention flavour.

    python demos/compare_variants.py
"""

from mscvit.model import KERNEL_SCHEDULES, apply_overrides, build_model, count_params, estimate_flops, variant_config


def row(label, cfg):
    model = build_model(cfg)
    report = estimate_flops(model)
    print(f"{label:28s} {count_params(model) / 1e6:7.2f}M {report.gflops:7.3f} GFLOPs "
          f"attention {report.attention_macs / 1e6:8.1f}M  (full attention would be {report.mhsa_total / 1e6:8.1f}M)")


for name in ("t", "xs", "s"):
    row(f"{name} at 224", variant_config(name))

print()
for schedule in KERNEL_SCHEDULES:
    row(f"s, kernels {schedule}", apply_overrides(variant_config("s"), {"kernel_schedule": schedule}))

print()
base = variant_config("s")
light = count_params(build_model(base))
normal = count_params(build_model(base.replace(attention="normal")))
print(f"restoration layers add {100 * (normal / light - 1):.1f}% parameters to s")
