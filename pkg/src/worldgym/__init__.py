"""World-model-based robot policy evaluation at desk scale.

Train an action-conditioned autoregressive video diffusion model on
trajectories from a synthetic ground-truth environment, roll out policies
inside the learned model with chunked parallel denoising, score rollouts
with a pixel-space (or external VLM) reward, and compare policy values and
rankings against the ground-truth environment.
"""

__version__ = "0.1.0"

from .env import WorldGymError  # noqa: F401
