# %% [markdown]
# Recovering a 14x14 output from part of its pixels.
#
# The network weights come from the test fixtures (8 -> 32 -> 96 -> 196, tanh).
# Latent-Pursuit only sees the observed pixels; the full image is then
# regenerated from the recovered latent vector.

# %%
from pathlib import Path

import numpy as np

from geninvert import Observation, forward, latent_pursuit, load_network, make_rng
from geninvert.experiments import make_mask

net = load_network(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "desk_net")
z = make_rng(7).standard_normal(net.latent_dim)
truth = forward(net, z)

# %%
for label, mask in [("random 45%", make_mask("random", 196, 0.45, make_rng(8))),
                    ("top 6 rows", make_mask("top_rows", 196, 6))]:
    res = latent_pursuit(net, Observation(truth.output, mask)).attach_truth(truth)
    print(f"{label:>11}: observed {mask.size:3d} of 196, s_L = {truth.cardinalities[-1]}, "
          f"image SNR {res.metrics['image']['snr_db']:.1f} dB, z error {res.metrics['z']['rel_err']:.1e}")

# %%
img = forward(net, res.z).output.reshape(14, 14)
print(np.array2string(img, precision=2, max_line_width=140))
