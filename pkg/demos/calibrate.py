"""Recover the camera-to-projector map from a projected dot grid.

Run from the repository root:

    python demos/calibrate.py

A tilted camera views a 3x3 grid of projected dots. The dots are detected,
ordered, and matched to their projector positions, and the fitted
homography is compared with the true one at random probe points.
"""

import numpy as np

from lightarena.calib import calibrate_from_fiducials, fiducial_grid
from lightarena.detect import HoughParams
from lightarena.image import CameraModel, render_camera_view


def main():
    world_to_camera = np.array([[0.9, 0.05, 40.0], [-0.04, 0.85, 30.0], [2e-5, -1e-5, 1.0]])
    camera = CameraModel(width=1024, height=768, world_to_camera=world_to_camera)
    dots = fiducial_grid(3, 3, 1024, 768)
    frame = render_camera_view([(d, 20.0) for d in dots], camera, 0)
    params = HoughParams(r_min=12, r_max=26, dp=2, center_threshold=40, min_center_dist=20)

    for refine in (False, True):
        H, rms = calibrate_from_fiducials(dots, frame, params, refine=refine)
        probe = np.random.default_rng(1).uniform([0, 0], [1023, 767], (100, 2))
        truth = np.column_stack([probe, np.ones(100)]) @ np.linalg.inv(world_to_camera).T
        truth = truth[:, :2] / truth[:, 2:]
        err = np.hypot(*(H.map(probe) - truth).T)
        label = "refined dot centres" if refine else "vote-grid centres  "
        print(f"{label}: fit rms {rms:.3f} px, probe error mean {err.mean():.3f} px, max {err.max():.3f} px")
    print("camera -> projector:", H.to_text())


if __name__ == "__main__":
    main()
