"""Time long-delay correlation on a large simulated stream.

Simulates a flickering emitter until the stream holds about ``--records``
photons, then times ``correlate_long_delay`` at each requested thread count
and checks that every run gives identical counts.

    python3 scripts/benchmark.py --records 1e7 --threads 1 2 4
"""

import argparse
import os
import time

import numpy as np

from photonstat import _kernels
from photonstat.correlate import correlate_long_delay
from photonstat.sim import EmitterModel, SimulationConfig, simulate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--records", type=float, default=1e7)
    p.add_argument("--threads", type=int, nargs="+", default=[1])
    p.add_argument("--seed", type=int, default=5)
    args = p.parse_args()

    model = EmitterModel(rate_charge=5e4, rate_discharge=5e4, qy_dim=0.35385)
    pilot = len(simulate(SimulationConfig(model=model, seed=args.seed, duration=1.0)))
    duration = args.records / pilot
    t0 = time.perf_counter()
    stream = simulate(SimulationConfig(model=model, seed=args.seed, duration=duration))
    print(f"simulated {len(stream):.3e} records over {duration:.0f} s in {time.perf_counter() - t0:.1f} s")
    print(f"cpu count {os.cpu_count()}, numba thread limit {_kernels.set_threads()}")

    # first call pays for compilation
    correlate_long_delay(stream, decades=(1e-8, 1e-6))
    reference = None
    for n in args.threads:
        used = _kernels.set_threads(n)
        t0 = time.perf_counter()
        hist = correlate_long_delay(stream)
        elapsed = time.perf_counter() - t0
        same = reference is None or np.array_equal(hist.counts, reference)
        reference = hist.counts if reference is None else reference
        print(f"threads {used}: {elapsed:.2f} s ({len(stream) / elapsed:.3e} records/s), identical {same}")


if __name__ == "__main__":
    main()
