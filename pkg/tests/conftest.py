import numpy as np
import pytest

from gpdfuse.gpd import ClusterExceedances, ExceedanceData, sample


def make_data(rng, gammas, sigmas, n_exceed, raw_count=None):
    """Exact GPD exceedances, one cluster per (gamma, sigma) pair."""
    gammas = np.atleast_1d(gammas)
    sigmas = np.broadcast_to(np.atleast_1d(sigmas), gammas.shape)
    ns = np.broadcast_to(np.atleast_1d(n_exceed), gammas.shape)
    clusters = []
    for g, s, n in zip(gammas, sigmas, ns):
        y = sample(rng, int(n), g, s)
        clusters.append(ClusterExceedances(y, raw_count=raw_count or int(n)))
    return ExceedanceData(clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
