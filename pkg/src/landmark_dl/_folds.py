import numpy as np


def kfold_labels(n, k, seed, strata=None):
    """Seeded fold labels in ``0..k-1``; sizes balanced to +-1 within each stratum.

    Within a stratum, subjects are permuted and dealt round-robin; the
    starting fold rotates across strata so that overall sizes also stay
    within +-1.
    """
    if k > n:
        raise ValueError(f"cannot split {n} subjects into {k} folds")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    labels = np.empty(n, dtype=np.int64)
    if strata is None:
        strata = np.zeros(n, dtype=np.int64)
    offset = 0
    for s in np.unique(strata):
        idx = np.nonzero(strata == s)[0]
        perm = idx[rng.permutation(idx.size)]
        labels[perm] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return labels
