"""Score a few hand-built motions and a simulated gait clip.

    python demos/metrics_tour.py
"""
import numpy as np

from biomotion.metrics import compare_to_reference, full_report, reference
from biomotion.motion import Joint, MotionSequence, Skeleton
from biomotion.sim import SimScenario, simulate

skel = Skeleton((
    Joint("pelvis", None, (0.0, 0.9, 0.0)),
    Joint("l_foot", 0, (0.0, -0.9, 0.15)),
    Joint("r_foot", 0, (0.0, -0.9, -0.15)),
), foot_left=1, foot_right=2, lowest_candidates=(1, 2))

T, fps = 40, 20.0
still = np.repeat(np.array([[0.0, 0.9, 0.0], [0.0, 0.0, 0.15], [0.0, 0.0, -0.15]])[None], T, axis=0)
sliding = still.copy()
sliding[:, :, 0] += np.arange(T)[:, None] / fps      # 1 m/s with both feet planted
hovering = still.copy()
hovering[:, 1:, 1] = 0.25

for name, pos in (("still", still), ("sliding", sliding), ("hovering", hovering)):
    vals = full_report(MotionSequence(fps, pos, tuple(skel.names)), skel).values()
    print(f"{name:9s}", "  ".join(f"{k}={v:.3f}" for k, v in vals.items()))

out = simulate(SimScenario(speed=1.2, seed=3))
rep = full_report(out.motion, out.skeleton)
print("\nsimulated gait", rep.values())
print("vs humanml3d-gt", {k: round(v, 3) for k, v in compare_to_reference(rep, reference("humanml3d-gt")).items()})
