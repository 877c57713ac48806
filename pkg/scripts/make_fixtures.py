"""Write the synthetic fixture trajectories and their run configurations.

    python3 scripts/make_fixtures.py [--dir configs]

For every fixture this writes ``trajectories/<name>.traj``, the ground-truth
scene ``trajectories/<name>.scene.json`` (for reference only; the pipeline
never reads it) and ``<name>.ini``. ``spade_adr.ini`` enables goal-box
randomization and ``smoke.ini`` is a small-budget spade run used by the
determinism check.
"""

import argparse
import json
import math
from pathlib import Path

from toolimit.fixtures import FIXTURES
from toolimit.trajectory import save_trajectory

PI = repr(math.pi)

COMMON = """[run]
kind = {kind}
robot = {robot}
trajectory = trajectories/{kind}.traj
trajectory_reference = head
seed = 0
out = ../runs/{name}

[env]
head_offset = 0.0
{env_extra}
[alignment]
budget = {budget}
K = 100

[trajopt]
region_x = 0.0 0.6
region_y = -0.5 0.5
region_yaw = -{pi} {pi}
q0 = ik
max_candidates = {max_candidates}
{trajopt_extra}
[learn]
{learn_extra}
[ppo]
iters = {iters}
episodes_per_iter = 8
{adr}"""


def write(dir_, name, kind, env_extra="", trajopt_extra="", learn_extra="eval_episodes = 10\n", budget=20000, iters=20,
          max_candidates=5, adr="", robot="panda"):
    text = COMMON.format(kind=kind, name=name, env_extra=env_extra, trajopt_extra=trajopt_extra,
                         learn_extra=learn_extra, budget=budget, iters=iters, max_candidates=max_candidates,
                         adr=adr, pi=PI, robot=robot)
    (dir_ / f"{name}.ini").write_text(text)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dir", default=str(Path(__file__).resolve().parents[1] / "configs"))
    args = ap.parse_args()
    out = Path(args.dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    fixtures = {name: build() for name, build in FIXTURES.items()}
    for name, fx in fixtures.items():
        save_trajectory(fx.trajectory, out / "trajectories" / f"{name}.traj")
        (out / "trajectories" / f"{name}.scene.json").write_text(
            json.dumps(fx.params.to_dict(), indent=1, sort_keys=True) + "\n")
    rot = " ".join(repr(v) for v in fixtures["scythe"].env.reference_rotation)
    write(out, "spade", "spade")
    write(out, "hammer", "hammer")
    write(out, "scythe", "scythe", env_extra=f"reference_rotation = {rot}\n", trajopt_extra="w_R = 1.0\n")
    write(out, "spade_adr", "spade", iters=40,
          adr="\n[adr]\nenabled = true\ngoal.x = -0.15 0.15\ngoal.y = -0.15 0.15\ndelta = 0.03\nwindow = 8\n")
    # the same spade run on other arms; only the base region changes
    write(out, "spade_ur5", "spade", robot="ur5")
    write(out, "spade_talos", "spade", robot="talos_arm11", trajopt_extra="region_z = -0.45\n")
    write(out, "smoke", "spade", budget=1500, iters=2, max_candidates=1,
          trajopt_extra="grid = 3 3 2\ncem_iters = 2\nrefine_top = 1\n",
          learn_extra="demo_episodes = 4\nbc_epochs = 20\neval_episodes = 3\n")
    print(f"wrote fixtures to {out}")


if __name__ == "__main__":
    main()
