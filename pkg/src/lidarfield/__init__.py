"""Implicit radiance+semantic fields with simulated, labeled LiDAR output.

Reconstructs a hash-grid NeRF-style field from posed camera images and
sparse LiDAR returns of an analytic oracle scene, then simulates labeled
spinning-LiDAR scans from it: volume rendering of depth/color/semantics,
equirectangular range-image projection, a learned raydrop network, and a
desk-scale evaluation harness (mIoU, depth MAE, recall, sim-vs-real
segmentation probes).
"""

__version__ = "0.1.0"
