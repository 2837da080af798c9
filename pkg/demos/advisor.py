"""Pick a batch size from the shipped OPT-1.3B curve.

Applies a strict (2x the ITL at B=32) and a relaxed (4x) latency bound with
an efficiency floor of 0.1, then sizes the KV cache for the chosen batch and
counts how many replicas fit in the memory that frees up.

    python demos/advisor.py
"""

from batchgap import RunConfig, SLOSpec, advise, fixture_curve_text, ingest_curve


def main() -> None:
    curve = ingest_curve(fixture_curve_text())
    for label, mult in (("strict", 2), ("relaxed", 4)):
        r = advise(curve, SLOSpec(multiplier=mult, base_batch=32), 0.1, RunConfig())
        print(f"{label}: SLO {r.slo_bound * 1e3:.1f} ms -> B_opt={r.b_opt} "
              f"({r.throughput:.0f} tok/s, ITL {r.itl * 1e3:.2f} ms)")
        for a in r.audit:
            verdict = "ok" if not a.rejected else "rejected: " + ", ".join(a.rejected)
            print(f"    B={a.batch_size:<4} eff={a.efficiency:.3f}  {verdict}")
        mem = r.memory
        print(f"    KV cache {mem.kv_bytes / 2**30:.2f} GiB, device use {mem.device_fraction:.1%},"
              f" frees {mem.freed_fraction:.1%}; replicas that fit: {r.replicas}")


if __name__ == "__main__":
    main()
