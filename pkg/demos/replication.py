"""Co-locate replicas at B_opt instead of growing the batch.

Runs OPT-1.3B at B=96 with 1, 2 and 4 replicas sharing one device, once with
the GPU time-shared (one replica's kernels at a time, host work overlapping)
and once with kernels running concurrently under fair bandwidth and compute
sharing.

    python demos/replication.py [num_requests]
"""

import sys
from dataclasses import replace

from batchgap import RunConfig, WorkloadSpec, run_replicated


def main() -> None:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    cfg = replace(RunConfig(), workload=WorkloadSpec(num_requests=n)).with_batch_size(96)
    base = None
    for mode in ("timeshared", "parallel"):
        for r in (1, 2, 4):
            res = run_replicated(cfg, r, mode)
            agg = res.aggregate
            base = base or agg.throughput
            print(f"{mode:>10} R={r}: {agg.throughput:8.0f} tok/s ({agg.throughput / base - 1:+.1%})"
                  f"  ITL {agg.itl * 1e3:6.2f} ms  DRAM util {agg.dram_util_mean:.2f}")


if __name__ == "__main__":
    main()
