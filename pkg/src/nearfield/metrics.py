"""Error measures used to compare reconstructions with ground truth."""

import numpy as np


def rmse(estimate, truth, mask=None):
    diff = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    if mask is not None:
        diff = diff[mask]
    return float(np.sqrt(np.mean(diff**2)))


def nrmse(estimate, truth, remove_mean=False, mask=None):
    """RMS error divided by the dynamic range (max - min) of ``truth``.

    With ``remove_mean`` both maps are made zero-mean first, which is how
    spectral phase retrievals (undetermined at zero frequency) are compared.
    """
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if mask is not None:
        est, ref = est[mask], ref[mask]
    if remove_mean:
        est = est - est.mean()
        ref = ref - ref.mean()
    span = ref.max() - ref.min()
    if span == 0:
        raise ValueError("ground truth has zero dynamic range")
    return rmse(est, ref) / span


def relative_error(estimate, truth):
    """``||estimate - truth|| / ||truth||`` in the Frobenius norm."""
    truth = np.asarray(truth)
    return float(np.linalg.norm(np.asarray(estimate) - truth) / np.linalg.norm(truth))
