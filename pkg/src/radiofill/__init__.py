"""Occlusion removal for camera streams guided by WiFi channel state information.

The package covers the full desk-scale pipeline: synthetic scene and channel
simulation, stream persistence and time alignment, CSI amplitude preprocessing
with PCA compression, occlusion masking, the multimodal transformer
restoration network, PSNR/SSIM evaluation, and declarative experiment runners.
"""

__version__ = "0.1.0"
