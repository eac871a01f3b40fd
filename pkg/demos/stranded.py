"""A start that senses nothing has a zero event-driven gradient; the potential
field term gets the descent moving anyway.

    python3 demos/stranded.py
"""
import dataclasses

import numpy as np

from persmon import experiments, gradient, optimize, run

rc = experiments.load("stranded")
p0 = experiments.stranded_params()
print("gradient at the start:", np.abs(gradient(run(p0, rc.mission))).max())

plain = optimize(p0, rc.mission, dataclasses.replace(rc.descent, excitation=None))
print(f"without excitation: J1 = {plain.J1:.3f} ({plain.status})")

rep = optimize(p0, rc.mission, rc.descent)
print(f"with excitation:    J1 = {rep.J1:.3f} ({rep.status}, {len(rep.history) - 1} iterations)")
