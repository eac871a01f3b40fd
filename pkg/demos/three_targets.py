"""Optimise a single agent over three targets and compare with the visit scheduler.

    python3 demos/three_targets.py
"""
import time

from persmon import experiments, optimize, solve

rc = experiments.load("three-targets")

t = time.perf_counter()
rep = optimize(None, rc.mission, rc.descent)
print(f"gradient descent: J1 = {rep.J1:.3f} after {len(rep.history) - 1} iterations "
      f"({rep.status}, {time.perf_counter() - t:.1f}s)")
print("  switching points:", rep.params.theta.round(2).tolist())
print("  dwell times:     ", rep.params.omega.round(2).tolist())

t = time.perf_counter()
sched = solve(rc.mission)
print(f"visit scheduler:  J = {sched.cost:.3f} ({time.perf_counter() - t:.1f}s)")
print("  visit order:", [i + 1 for i in sched.sequences[0]])
