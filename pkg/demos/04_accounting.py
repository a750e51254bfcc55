"""Size and compute accounting for every shipped variant.

Parameter counts use the deployment structure (BN folded, no aux head);
GFLOPs follow the one-MAC-one-FLOP convention the published per-variant
figures use.  The fully expanded 2*MAC+elementwise figure is also shown.
"""

from rdrnet.network import (
    VARIANTS, build, count_flops, count_params, reparameterize_network,
    stage_shapes,
)

print(f"{'variant':18s}{'params (M)':>12s}{'GFLOPs':>9s}{'2xMAC+elem (G)':>16s}")
for name in ("micro", "rdrnet-s-simple", "rdrnet-s", "rdrnet-m", "rdrnet-l"):
    cfg = VARIANTS[name]
    deploy = reparameterize_network(build(cfg, 0))
    hw = (64, 128) if name == "micro" else (1024, 2048)
    rep = count_flops(deploy, hw)
    print(f"{name:18s}{count_params(deploy)/1e6:12.2f}"
          f"{rep.table_gflops:9.1f}{rep.flops/1e9:16.1f}")

print("\nstage output sizes for rdrnet-s at 1024x2048 (semantic | detail):")
for stage, dims in stage_shapes(VARIANTS["rdrnet-s"], (1024, 2048)).items():
    if isinstance(dims[0], tuple):
        print(f"  {stage:8s} {dims[0][0]}x{dims[0][1]} | {dims[1][0]}x{dims[1][1]}")
    else:
        print(f"  {stage:8s} {dims[0]}x{dims[1]}")
