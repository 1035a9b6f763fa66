"""Plant-kernel benchmark: compiled vs pure-Python integration.

Runs the innermost simulation loop (RK4 chassis + wheel-spin kernel at
100 Hz with 10 substeps) under both kernel backends and reports the
per-tick cost.  The backend is chosen at import time from the
``DRIFTCORNER_DISABLE_NUMBA`` environment variable, so each variant is
timed in its own subprocess.

    python3 -m driftcorner.bench [--ticks 20000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _drive_inputs(i: int) -> tuple[float, float, float]:
    """A repeatable steering/torque schedule that exercises the tire
    model on both sides of the friction peak."""
    import math

    t = i * 0.01
    delta = 0.3 * math.sin(0.4 * t)
    trt = 400.0 + 300.0 * math.sin(0.15 * t)
    pb = 1.5 if (i // 400) % 5 == 4 else 0.0
    return delta, trt, pb


def run_child(ticks: int, repeat: int) -> dict:
    from .kernels import NUMBA_ENABLED
    from .plant import (
        CONTROL_DT, SUBSTEP_DT, Action, PlantState, TireParams, VehicleParams, step,
    )

    params = VehicleParams()
    tires = TireParams()

    def once() -> tuple[float, float]:
        state = PlantState.rolling(9.0, params)
        t0 = time.perf_counter()
        for i in range(ticks):
            delta, trt, pb = _drive_inputs(i)
            state = step(state, Action(delta, trt, pb), tires=tires,
                         params=params)
        return time.perf_counter() - t0, state.v_x + state.y

    once()  # warm-up (includes JIT compilation when enabled)
    times, digest = zip(*(once() for _ in range(repeat)))
    return {
        "backend": "numba" if NUMBA_ENABLED else "numpy",
        "ticks": ticks,
        "best_s": min(times),
        "us_per_tick": min(times) / ticks * 1e6,
        "digest": digest[0],
        "substeps": int(round(CONTROL_DT / SUBSTEP_DT)),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ticks", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        print(json.dumps(run_child(args.ticks, args.repeat)))
        return 0

    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, DRIFTCORNER_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, "-m", "driftcorner.bench", "--child",
             "--ticks", str(args.ticks), "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    fast, slow = results
    print(f"plant integration, {args.ticks} ticks x {fast['substeps']} RK4 substeps, "
          f"best of {args.repeat}:")
    for r in results:
        print(f"  {r['backend']:>6}: {r['us_per_tick']:8.2f} us/tick "
              f"({r['ticks'] / r['best_s']:,.0f} ticks/s)")
    agree = abs(fast["digest"] - slow["digest"]) < 1e-9
    print(f"  backends agree on the final state: {'yes' if agree else 'NO'} "
          f"(|diff| = {abs(fast['digest'] - slow['digest']):.2e})")
    print(f"  speedup: {slow['us_per_tick'] / fast['us_per_tick']:.1f}x")
    return 0 if agree else 1


if __name__ == "__main__":
    sys.exit(main())
