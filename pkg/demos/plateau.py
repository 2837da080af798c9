"""Where does batching stop paying off?

Sweeps OPT-1.3B over a geometric grid of batch sizes and prints throughput,
inter-token latency, the efficiency ratio T(B)/(B*T(1)) and what dominates a
decode step. Around B=256 the attention kernel (memory bound at every batch
size) overtakes the weight-streaming matmul and the curve flattens.

    python demos/plateau.py [num_requests]
"""

import sys
from dataclasses import replace

from batchgap import RunConfig, WorkloadSpec, run
from batchgap.core import derive_geometry
from batchgap.engine import step_time
from batchgap.scheduler import StepPlan


def main() -> None:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    cfg = replace(RunConfig(), workload=WorkloadSpec(num_requests=n))
    geom = derive_geometry(cfg.model)
    ctx = cfg.workload.fixed_input_len + cfg.workload.fixed_output_len // 2
    print(f"{'B':>5} {'tok/s':>9} {'ITL ms':>8} {'eff':>6} {'matmul ms':>10} "
          f"{'attn ms':>8} {'cpu ms':>7}")
    t1 = None
    for b in [2 ** k for k in range(10)]:
        m, _ = run(cfg.with_batch_size(b))
        t1 = t1 or m.throughput
        plan = StepPlan("decode", tuple(range(b)), (ctx,) * b)
        st = step_time(plan, cfg.hardware, geom, cfg.model, cfg.cpu_model)
        print(f"{b:>5} {m.throughput:>9.0f} {m.itl * 1e3:>8.2f} {m.throughput / (b * t1):>6.3f} "
              f"{st.t_matmul * 1e3:>10.3f} {st.t_attention * 1e3:>8.3f} {st.t_cpu * 1e3:>7.3f}")


if __name__ == "__main__":
    main()
