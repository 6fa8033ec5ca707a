"""Teacher soft-label targets from precomputed uni-modal features.

The teacher never trains: its pairwise similarities are turned into
row-stochastic target distributions once per batch and treated as
constants by every loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NonPositiveTemperature, ShapeMismatch
from .mathops import _as_matrix, check_normalized, row_softmax_with_log


@dataclass
class TeacherBatch:
    """Teacher features for one batch; row i of each matrix is pair i."""

    image_features: np.ndarray
    text_features: np.ndarray

    def __post_init__(self):
        self.image_features = _as_matrix(self.image_features, "image_features")
        self.text_features = _as_matrix(self.text_features, "text_features")
        if self.image_features.shape[0] != self.text_features.shape[0]:
            raise ShapeMismatch(
                "teacher image/text row counts differ: "
                f"{self.image_features.shape[0]} vs {self.text_features.shape[0]}"
            )
        check_normalized(self.image_features, "image_features")
        check_normalized(self.text_features, "text_features")


@dataclass
class TeacherTargets:
    """Constant target distributions for one batch (no gradient flows here)."""

    p_i2i: np.ndarray
    p_t2t: np.ndarray


def teacher_distribution(features, teacher_inv_temp: float = 1.0) -> np.ndarray:
    """Row-softmax of the teacher's self-similarity matrix.

    The diagonal (self-similarity, always 1) stays inside the softmax:
    the normalization runs over all batch members including the anchor
    itself. Default inverse temperature 1.0 applies no extra scaling to
    the raw cosine similarities.
    """
    feats = _as_matrix(features, "features")
    if feats.shape[0] < 2:
        raise DegenerateInput("need at least 2 rows to form a target distribution")
    check_normalized(feats, "features")
    r = feats @ feats.T
    if not (teacher_inv_temp > 0.0):
        # row_softmax_with_log skips validation, so check here
        raise NonPositiveTemperature(
            f"teacher_inv_temp must be > 0, got {teacher_inv_temp!r}"
        )
    p, _ = row_softmax_with_log(r, float(teacher_inv_temp))
    return p


def build_batch_targets(teacher: TeacherBatch, teacher_inv_temp: float = 1.0) -> TeacherTargets:
    """Compute both uni-modal target distributions for a batch."""
    return TeacherTargets(
        p_i2i=teacher_distribution(teacher.image_features, teacher_inv_temp),
        p_t2t=teacher_distribution(teacher.text_features, teacher_inv_temp),
    )
