"""neurmatch: cross-modal keypoint matching with learned geometric verification.

Pipeline: built-in (or externally supplied) keypoint descriptors are fused
with semantic context features, matched by a dual-softmax mutual-consistency
matcher, and filtered by a trained subset-confidence classifier that replaces
RANSAC for nonrigid scenes. Synthetic deformation tasks provide training data
and benchmarks.
"""

__version__ = "0.1.0"

FORMAT_VERSIONS = {
    "nmds": 1,
    "nmfm": 1,
    "model": 1,
    "gccm": 1,
    "match": 1,
    "task": 1,
    "report": 1,
}
