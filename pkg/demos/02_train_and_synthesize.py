#!/usr/bin/env python3
"""
Train a small sparse generator and a refiner on synthetic motion, then
synthesize a dense two-activity clip.

Small settings keep this under a minute; the defaults in TrainConfig are the
full-size ones.
"""

import numpy as np

from glocalnet.data import make_synthetic_dataset, save_motion, MotionFile
from glocalnet.pipeline import PaceConfig, densify_and_refine, multi_activity_rollout
from glocalnet.training import TrainConfig, train_glogen, train_locgen

split = make_synthetic_dataset(4, 10, 40, seed=0)
print(len(split.train), "training sequences,", len(split.test), "held out")

glo = train_glogen(split, TrainConfig(epochs=20, hidden=32, batch_size=32))
print("generator loss", glo.history[0], "->", glo.history[-1])

loc = train_locgen(split, TrainConfig(M=4, epochs=20, hidden=32, batch_size=32))
print("refiner loss", loc.history[0], "->", loc.history[-1])

seed = split.test[0].frames[:5]
traj = multi_activity_rollout(seed, [(0, 3), (2, 3)], glo.model)
print("sparse frames", len(traj.frames), "activity switch at", traj.boundaries)

# pace control: the same sparse poses at two playback rates
slow = densify_and_refine(traj.frames, PaceConfig(4), loc.model)
fast = densify_and_refine(traj.frames, PaceConfig(1))
print("M = 4 ->", len(slow), "frames; M = 1 ->", len(fast), "frames")

out = MotionFile(split.test[0].skeleton, 30.0, slow, class_id=0, name="demo")
save_motion(out, "demo_motion.json")
print("wrote demo_motion.json; max |pose| =", np.abs(slow).max())
