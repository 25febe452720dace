"""NumPy fallback for the compiled kernels.

Semantics must match mcas._core_c exactly; tie-breaks always pick the
lowest index. All arrays are float64 and C-contiguous.
"""

import numpy as np


def belief_update(T, Z, b, a, o, out):
    """out <- normalized posterior over next states; returns the norm.

    out is only a valid distribution when the returned norm is > 0.
    """
    np.matmul(b, T[:, a, :], out=out)
    out *= Z[a, :, o]
    norm = float(out.sum())
    if norm > 0.0:
        out /= norm
    return norm


def predicted_belief(T, b, a, out):
    """out <- one-step state distribution under action a, ignoring observations."""
    np.matmul(b, T[:, a, :], out=out)


def obs_likelihoods(T, Z, b, a, out):
    """out[o] <- P(o | b, a) for every observation o."""
    np.matmul(b @ T[:, a, :], Z[a], out=out)


def best_alpha(alphas, b):
    """Index and value of the maximizing vector; ties go to the lowest index."""
    vals = alphas @ b
    k = int(np.argmax(vals))
    return k, float(vals[k])


def l1_nearest(mat, b):
    """Row of mat closest to b in L1; ties go to the lowest row index."""
    dists = np.abs(mat - b).sum(axis=1)
    i = int(np.argmin(dists))
    return i, float(dists[i])


def l1_closest_pair(mat):
    """Closest pair of rows (i < j) in L1; ties resolved in (i, j) scan order."""
    n = mat.shape[0]
    diffs = np.abs(mat[:, None, :] - mat[None, :, :]).sum(axis=2)
    diffs[np.tril_indices(n)] = np.inf
    flat = int(np.argmin(diffs))
    i, j = divmod(flat, n)
    return i, j, float(diffs[i, j])


def conflate_rows(mat, out):
    """out <- normalized pointwise product of the rows; returns the norm.

    A zero norm means the supports are disjoint and out is meaningless.
    """
    np.prod(mat, axis=0, out=out)
    norm = float(out.sum())
    if norm > 0.0:
        out /= norm
    return norm
