#!/usr/bin/env python3
"""
Why the teacher's heatmaps are regenerated before they become pseudo-labels.

A raw heatmap can shrink, shift by a constant, or carry a second bump; its
mean activation then says nothing about how confident the network is. The
normalized pseudo-label is a fresh unit Gaussian at the argmax, so its mean
is a constant of the grid and sigma alone.
"""
import numpy as np

from udapose.heatmap import GaussianSpec, gaussian_channel_mean, generate_heatmaps, normalize_heatmaps

spec = GaussianSpec(sigma=2.0)
size = (64, 64)
h, _ = generate_heatmaps(np.array([[[100.0, 140.0]]]), np.ones((1, 1), bool), size, spec, (256, 256))

print("reference channel mean:", round(gaussian_channel_mean(spec, size), 6))
for scale in (1.0, 0.3, 0.05):
    raw = h * scale + 0.01 * (scale < 1)
    norm, conf = normalize_heatmaps(raw, spec, (256, 256))
    print(f"raw scale {scale:4}: raw mean {raw.mean():.6f}  normalized mean {norm.mean():.6f}  confidence {conf[0, 0]:.3f}")

# a two-peak channel keeps only the stronger peak
two = np.zeros((1, 1, 64, 64))
two[0, 0, 5, 5], two[0, 0, 50, 50] = 0.8, 0.9
norm, conf = normalize_heatmaps(two, spec, (256, 256))
row, col = np.unravel_index(norm[0, 0].argmax(), (64, 64))
print(f"two peaks -> pseudo-label peak at cell ({row}, {col}), confidence {conf[0, 0]:.2f}")
