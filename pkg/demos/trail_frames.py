"""Two robots lay a pheromone trail; projector frames are written as PPM.

Run from the repository root:

    python demos/trail_frames.py [out_dir]

The script runs the bundled two-robot trail scenario for 150 ticks, saves
the projected scene every 50 ticks, and prints how the trail grows.
"""

import sys
from pathlib import Path

from lightarena.config import load_scenario
from lightarena.image import save_pnm
from lightarena.orchestrate import Experiment
from lightarena.track import TrackState

SCENARIO = Path(__file__).parents[1] / "src" / "lightarena" / "scenarios" / "thymio_trail.yaml"


def main(out_dir="demo_frames"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = Experiment(load_scenario(SCENARIO).with_overrides(headless=True))
    for k in range(150):
        rec = exp.tick()
        if k % 50 == 49:
            path = out / f"projector_{k:04d}.ppm"
            save_pnm(exp.last_projector_frame, path)
            m = exp.scenario_metrics()
            print(f"tick {k:3d}: field mass {rec.field_mass:7.3f}, trail cells {m['trail_cells']:5d}, "
                  f"confirmed tracks {sum(t.state == TrackState.CONFIRMED.value for t in rec.tracks)} -> {path}")


if __name__ == "__main__":
    main(*sys.argv[1:])
