"""LiDAR odometry toolkit: auto-encoder interest points, multi-scale
voxel features, RANSAC frame-to-frame matching, keyframe ICP refinement,
and backward pose update."""

__version__ = "0.1.0"
