# %% [markdown]
# Talking to an out-of-process detector
#
# Any detector that speaks the line-delimited JSON protocol can be attacked
# and evaluated.  Here the reference stub runs in a background thread on a
# TCP port, in "toy" mode, so it answers with the same detections the
# in-process toy detector would give.

# %%
import threading

import numpy as np

from poseadv.detector import person_detector
from poseadv.evaluate import evaluate_patch
from poseadv.generator import GeneratorSpec, generate_patch
from poseadv.gmm import fit_poses
from poseadv.optimizer import EoPTObjective
from poseadv.poses import synthetic_corpus
from poseadv.protocol import ExternalDetector, serve_tcp
from poseadv.scene import ScenarioSampler, SceneRenderer

address, ready = {}, threading.Event()


def on_ready(addr):
    address["addr"] = addr
    ready.set()


threading.Thread(target=serve_tcp, kwargs=dict(port=0, mode="toy", ready=on_ready), daemon=True).start()
ready.wait(10)
host, port = address["addr"]
remote = ExternalDetector(f"tcp://{host}:{port}")
print("stub listening on", f"tcp://{host}:{port}")

# %%
theta, _, lo, hi = synthetic_corpus(20, 10, seed=0)
gmm = fit_poses(theta, lo, hi, 3, 50)
renderer = SceneRenderer()
sampler = ScenarioSampler(gmm, len(renderer.backgrounds))
spec = GeneratorSpec()
patch = generate_patch(spec, np.random.default_rng(2).uniform(-3, 3, spec.dim))

# Remote answers go through 8-bit quantisation, so small confidence drifts are expected.
local = evaluate_patch(patch, renderer, sampler, person_detector(), n_scenes=30)
wire = evaluate_patch(patch, renderer, sampler, remote, n_scenes=30)
print("ASR local:", local.asr, " ASR over the wire:", wire.asr)

# %%
# With only external detectors the objective falls back to forward differences.
obj = EoPTObjective(renderer, sampler, spec, [remote], batch_size=4)
z = np.zeros(spec.dim)
loss, grad = obj.loss_and_grad(z, 0)
print(f"loss {loss:.4f}, gradient norm {np.linalg.norm(grad):.4f} from {spec.dim + 1} probe batches")
remote.close()
