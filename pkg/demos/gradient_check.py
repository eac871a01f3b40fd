"""Event-driven gradient next to central finite differences on a random program.

    python3 demos/gradient_check.py
"""
import numpy as np

from persmon import AgentSpec, MissionConfig, Target, TrajectoryParams, cost, gradient, run

cfg = MissionConfig(20.0, tuple(Target(x, 1.0, 5.0, 1.0) for x in (4.0, 9.0, 13.0, 17.0)),
                    (AgentSpec(0.0, 2.0), AgentSpec(3.0, 2.0)), 40.0)
rng = np.random.default_rng(7)
p = TrajectoryParams(rng.uniform(4, 17, (2, 3)), rng.uniform(0.2, 2, (2, 3)))

g = gradient(run(p, cfg))
v, h = p.as_vector(), 1e-5
fd = np.array([(cost(TrajectoryParams.from_vector(v + e, 2, 3), cfg)
                - cost(TrajectoryParams.from_vector(v - e, 2, 3), cfg)) / (2 * h)
               for e in np.eye(v.size) * h])
for k, (a, b) in enumerate(zip(g, fd)):
    name = ("theta" if k < 6 else "omega") + f"[{k % 6 // 3},{k % 3}]"
    print(f"{name:12s} ipa {a: .6f}   fd {b: .6f}")
print("max abs difference:", np.abs(g - fd).max())
