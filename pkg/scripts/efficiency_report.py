#!/usr/bin/env python3
"""Compare spectral mixing against self-attention: parameters, FLOPs, scaling.

Prints the light-configuration totals for both mixing mechanisms, the
per-block flop sweep over growing token counts, and the crossover token
count where one attention block starts out-costing one spectral block.
"""

import argparse

from afnoseg.model import ModelConfig, SegModel
from afnoseg.model_stats import (count_flops, count_params, crossover_tokens,
                                 mixing_flop_sweep)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", type=int, nargs=3, default=(16, 16, 16))
    ap.add_argument("--channels", type=int, default=64)
    args = ap.parse_args()
    shape = tuple(args.shape)

    print(f"light configuration, input {shape}")
    print(f"{'mixing':>8}  {'params':>12}  {'mixing params':>14}  {'flops':>16}")
    totals = {}
    for mixing in ("afno", "mhsa"):
        cfg = ModelConfig.light(mixing)
        params = count_params(SegModel.build(cfg, seed=0, precision=32))
        flops = count_flops(cfg, shape)
        totals[mixing] = params.total_params
        print(f"{mixing:>8}  {params.total_params:>12}  "
              f"{params.filtered('.mixing.').total_params:>14}  "
              f"{flops.total_flops:>16}")
    print(f"param ratio afno/mhsa: {totals['afno'] / totals['mhsa']:.3f}")

    print(f"\nper-block flops at C={args.channels} over cubic token grids")
    header = (f"{'tokens':>8}  {'afno spectral':>14}  {'afno total':>12}  "
              f"{'mhsa interaction':>17}  {'mhsa total':>12}")
    print(header)
    for row in mixing_flop_sweep(args.channels,
                                 [(4, 4, 4), (8, 8, 8), (16, 16, 16), (32, 32, 32)]):
        print(f"{row['tokens']:>8}  {row['afno_spectral']:>14}  "
              f"{row['afno_total']:>12}  {row['mhsa_interaction']:>17}  "
              f"{row['mhsa_total']:>12}")

    cross = crossover_tokens(args.channels)
    print(f"\nattention out-costs the spectral block from ~{cross} tokens")


if __name__ == "__main__":
    main()
