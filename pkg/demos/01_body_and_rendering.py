# %% [markdown]
# Capsule body, IUV rendering and texturing
#
# Pose the shipped 17-joint body, ray-march it into an IUV map, paint the
# clothing with a patch and composite over a background.  Images land in
# demos/out/.  Run from the repository root: `python demos/01_body_and_rendering.py`.

# %%
from pathlib import Path

import numpy as np

from poseadv.body import CameraParams, LightParams, default_body, default_pose_bounds, pose_body, render_iuv
from poseadv.imageio import write_ppm
from poseadv.scene import default_stack, procedural_backgrounds
from poseadv.texture import composite, tile_patch

out = Path(__file__).resolve().parent / "out"
out.mkdir(exist_ok=True)

body = default_body()
print(body.n_joints, "joints,", body.n_parts, "parts,", len(body.capsules), "capsules")

# %%
# Raise the left shoulder a little and bend both knees.
# Joint order lives in the body file; indices are looked up by name here.
names = [j["name"] for j in body.to_dict()["joints"]]
theta = np.zeros(3 * body.n_joints)
lo, hi = default_pose_bounds(body.n_joints)
for name, axis, angle in [("l_shoulder", 2, 0.9), ("l_knee", 0, 0.5), ("r_knee", 0, 0.5)]:
    theta[3 * names.index(name) + axis] = angle
posed = pose_body(body, theta)

# %%
# One camera per 45 degrees of azimuth; print the mask as ASCII art.
centre = tuple(float(x) for x in body.bounding_sphere()[0])
for az in (0.0, 45.0, 90.0):
    iuv = render_iuv(posed, CameraParams(az, 10.0, 4.5, 32, 32, 30.0, centre))
    print(f"azimuth {az:5.1f}  coverage {iuv.mask.mean():.3f}  gt box {iuv.bbox(0.5)}")
    for row in iuv.mask[::2]:
        print("".join(" .:#"[min(3, int(4 * m))] for m in row))

# %%
# Tile a striped patch over the clothing parts and composite.
patch = np.zeros((16, 16, 3))
patch[::4] = [0.9, 0.2, 0.1]
stack = tile_patch(patch, default_stack(body, 32))
bg = procedural_backgrounds(1, 32, 32, seed=3)[0]
img = composite(iuv, stack, bg, LightParams(intensity=1.2))
write_ppm(img, out / "render_side.ppm")
write_ppm(patch, out / "stripes.ppm")
print("wrote", out / "render_side.ppm")
