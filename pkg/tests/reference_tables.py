"""Published confusion matrices used as fixed reference values.

Rows are the reference (consensus) stage and columns the prediction, both
in (W, N1, N2, N3, R) order.
"""

import numpy as np

# Aggregated test set, epoch counts.
TEST_COUNTS = np.array([
    [895, 228, 2676, 209, 2154],
    [2, 191, 1780, 10, 1272],
    [7, 553, 17228, 358, 2497],
    [0, 805, 2151, 4429, 1381],
    [36, 181, 2646, 11, 6294],
])

# Aggregated test set, row percentages.
TEST_PERCENT = np.array([
    [14.5, 3.7, 43.4, 3.4, 35.0],
    [0.1, 5.9, 54.7, 0.3, 39.1],
    [0.0, 2.7, 83.5, 1.7, 12.1],
    [0.0, 9.2, 24.5, 50.5, 15.8],
    [0.4, 2.0, 28.9, 0.1, 68.7],
])

# Development recording, epoch counts.
DEV_COUNTS = np.array([
    [22, 2, 20, 1, 9],
    [1, 4, 23, 0, 8],
    [0, 9, 421, 1, 13],
    [0, 14, 60, 61, 3],
    [1, 4, 15, 0, 112],
])

# Development recording, row percentages.
DEV_PERCENT = np.array([
    [40.7, 3.7, 37.0, 1.9, 16.7],
    [2.8, 11.1, 63.9, 0.0, 22.2],
    [0.0, 2.0, 94.8, 0.2, 2.9],
    [0.0, 10.1, 43.5, 44.2, 2.2],
    [0.8, 3.0, 11.4, 0.0, 84.8],
])

TEST_ACCURACY, TEST_KAPPA = 0.605, 0.42
DEV_ACCURACY, DEV_KAPPA = 0.771, 0.61


def hypnogram_pair(counts):
    """(predicted, reference) stage-index sequences realising ``counts``."""
    ref, pred = [], []
    for r in range(5):
        for p in range(5):
            ref += [r] * int(counts[r, p])
            pred += [p] * int(counts[r, p])
    return pred, ref
