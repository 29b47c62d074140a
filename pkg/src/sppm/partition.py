"""Partition priors: cohesions, EPPF, spatial similarity functions and the
allocation weights used by the Gibbs sampler.

All similarity and cohesion values are returned on the log scale.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import canonicalize

D = 2
LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
# cap on log g1 for clusters of coincident points
G1_EPS = 1e-12


# --- cohesions -------------------------------------------------------------

def cohesion_dp(n_k, alpha):
    """log(alpha * Gamma(n_k))."""
    if n_k < 1:
        raise ValueError("cohesion of an empty cluster is undefined")
    return math.log(alpha) + float(gammaln(n_k))


def cohesion_finite_dirichlet(n_k, alpha_tilde):
    """log(Gamma(alpha_tilde) / Gamma(alpha_tilde + n_k)), unnormalized."""
    if n_k < 1:
        raise ValueError("cohesion of an empty cluster is undefined")
    return float(gammaln(alpha_tilde) - gammaln(alpha_tilde + n_k))


def log_cohesion(sizes, hyper, alpha=None):
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes < 1):
        raise ValueError("cohesion of an empty cluster is undefined")
    if hyper.cohesion == "dp":
        a = hyper.alpha if alpha is None else alpha
        return math.log(a) + gammaln(sizes)
    return gammaln(hyper.alpha_tilde) - gammaln(hyper.alpha_tilde + sizes)


def _cohesion_gain(sizes, hyper):
    # log C(n + 1) - log C(n) for every existing cluster size n
    sizes = np.asarray(sizes, dtype=float)
    if hyper.cohesion == "dp":
        return np.log(sizes)
    return -np.log(hyper.alpha_tilde + sizes)


def _cohesion_singleton(hyper, alpha):
    if hyper.cohesion == "dp":
        return math.log(alpha)
    return -math.log(hyper.alpha_tilde)


def eppf_dp(sizes, alpha):
    """Log EPPF of the Dirichlet process for block sizes ``sizes``."""
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise ValueError("sizes is empty")
    n = sizes.sum()
    return float(gammaln(alpha) - gammaln(alpha + n) + sizes.size * math.log(alpha)
                 + gammaln(sizes).sum())


# --- sufficient statistics -------------------------------------------------

class ClusterSuffStats:
    """Count, coordinate sum and coordinate outer-product sum of a cluster."""

    def __init__(self, count=0, ssum=None, outer=None):
        self.count = int(count)
        self.ssum = np.zeros(D) if ssum is None else np.array(ssum, dtype=float)
        self.outer = np.zeros((D, D)) if outer is None else np.array(outer, dtype=float)

    @classmethod
    def from_points(cls, points):
        points = np.asarray(points, dtype=float).reshape(-1, D)
        return cls(points.shape[0], points.sum(axis=0), points.T @ points)

    def add(self, s):
        s = np.asarray(s, dtype=float)
        self.count += 1
        self.ssum += s
        self.outer += np.outer(s, s)

    def remove(self, s):
        if self.count < 1:
            raise ValueError("cannot remove from an empty cluster")
        s = np.asarray(s, dtype=float)
        self.count -= 1
        self.ssum -= s
        self.outer -= np.outer(s, s)

    def copy(self):
        return ClusterSuffStats(self.count, self.ssum, self.outer)

    @property
    def mean(self):
        return self.ssum / max(self.count, 1)

    @property
    def scatter(self):
        m = self.mean
        return self.outer - self.count * np.outer(m, m)


class ClusterTable:
    """Members and sufficient statistics of every cluster of an allocation.

    Arrays are indexed by cluster label; labels are kept contiguous by
    :meth:`drop`.
    """

    def __init__(self, coords, alloc):
        self.coords = np.asarray(coords, dtype=float)
        alloc = np.asarray(alloc, dtype=np.int64)
        K = int(alloc.max()) + 1 if alloc.size else 0
        self.members = [[] for _ in range(K)]
        for i, k in enumerate(alloc):
            self.members[k].append(i)
        self.refresh()

    def refresh(self):
        """Recompute all statistics from the member lists."""
        K = len(self.members)
        self.counts = np.array([len(m) for m in self.members], dtype=np.int64)
        self.sums = np.zeros((K, D))
        self.outers = np.zeros((K, D, D))
        for k, mem in enumerate(self.members):
            if mem:
                pts = self.coords[mem]
                self.sums[k] = pts.sum(axis=0)
                self.outers[k] = pts.T @ pts

    @property
    def K(self):
        return len(self.members)

    def remove(self, i, k):
        s = self.coords[i]
        self.members[k].remove(i)
        self.counts[k] -= 1
        self.sums[k] -= s
        self.outers[k] -= np.outer(s, s)

    def add(self, i, k):
        s = self.coords[i]
        self.members[k].append(i)
        self.counts[k] += 1
        self.sums[k] += s
        self.outers[k] += np.outer(s, s)

    def new_cluster(self, i):
        s = self.coords[i]
        self.members.append([i])
        self.counts = np.append(self.counts, 1)
        self.sums = np.vstack([self.sums, s[None]])
        self.outers = np.concatenate([self.outers, np.outer(s, s)[None]])
        return self.K - 1

    def drop(self, k):
        del self.members[k]
        self.counts = np.delete(self.counts, k)
        self.sums = np.delete(self.sums, k, axis=0)
        self.outers = np.delete(self.outers, k, axis=0)


# --- similarity functions --------------------------------------------------

class NoSimilarity:
    """g = 1: a plain product partition model."""

    name = "none"
    active = False

    def log_g(self, points):
        return 0.0

    def centered(self, center):
        return self

    def log_g_clusters(self, table):
        return np.zeros(table.K)

    def log_g_clusters_with(self, table, s):
        return np.zeros(table.K)


class DistanceSimilarity:
    """g1: penalizes the summed distance of members to their centroid.

    Singletons get similarity 1. For larger clusters with summed centroid
    distance ``d``: ``1 / Gamma(omega * d)`` when ``d >= 1`` and ``1 / d``
    otherwise (``d`` floored at ``G1_EPS``).
    """

    name = "g1"
    active = True

    def __init__(self, omega=1.0):
        if not omega > 0:
            raise ValueError("omega must be positive")
        self.omega = float(omega)

    def log_g(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, D)
        if points.shape[0] <= 1:
            return 0.0
        centroid = points.mean(axis=0)
        d = float(np.sqrt(((points - centroid) ** 2).sum(axis=1)).sum())
        if d >= 1.0:
            return -float(gammaln(self.omega * d))
        return -math.log(max(d, G1_EPS))

    def centered(self, center):
        return self

    def log_g_clusters(self, table):
        return np.array([self.log_g(table.coords[m]) for m in table.members])

    def log_g_clusters_with(self, table, s):
        s = np.asarray(s, dtype=float)[None]
        return np.array([self.log_g(np.vstack([table.coords[m], s])) for m in table.members])


class ThresholdSimilarity:
    """g2: 1 if every pairwise distance is at most ``a``, else 0."""

    name = "g2"
    active = True

    def __init__(self, a):
        if not a > 0:
            raise ValueError("threshold must be positive")
        self.a = float(a)

    def log_g(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, D)
        if points.shape[0] <= 1:
            return 0.0
        diff = points[:, None, :] - points[None, :, :]
        ok = np.sqrt((diff ** 2).sum(axis=-1)).max() <= self.a
        return 0.0 if ok else -np.inf

    def centered(self, center):
        return self

    def log_g_clusters(self, table):
        return np.array([self.log_g(table.coords[m]) for m in table.members])

    def log_g_clusters_with(self, table, s):
        s = np.asarray(s, dtype=float)
        dist = np.sqrt(((table.coords - s) ** 2).sum(axis=1))
        out = np.empty(table.K)
        for k, mem in enumerate(table.members):
            if not mem:
                out[k] = 0.0
            else:
                ok = dist[mem].max() <= self.a
                # adding s cannot repair a cluster that is already forbidden
                out[k] = self.log_g(table.coords[mem]) if ok else -np.inf
        return out


@dataclass(frozen=True)
class NiwParams:
    """Normal-inverse-Wishart hyperparameters for 2-d coordinates."""

    mu0: tuple
    kappa0: float
    nu0: float
    Lambda0: tuple

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        L = np.asarray(self.Lambda0, dtype=float)
        if mu0.shape != (D,):
            raise ValueError("mu0 must be a 2-vector")
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be positive")
        if not self.nu0 > D - 1:
            raise ValueError("nu0 must exceed D - 1 = 1")
        if L.shape != (D, D) or not np.allclose(L, L.T):
            raise ValueError("Lambda0 must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(L) <= 0):
            raise ValueError("Lambda0 must be positive definite")
        object.__setattr__(self, "mu0", tuple(float(x) for x in mu0))
        object.__setattr__(self, "Lambda0", tuple(tuple(float(x) for x in row) for row in L))

    @property
    def mu(self):
        return np.asarray(self.mu0)

    @property
    def Lam(self):
        return np.asarray(self.Lambda0)

    @classmethod
    def default_for(cls, coords, kappa0=1.0, nu0=4.0):
        """mu0 = coordinate mean, Lambda0 = sample coordinate covariance."""
        coords = np.asarray(coords, dtype=float)
        cov = np.cov(coords.T)
        # guard against degenerate layouts (collinear or repeated sites)
        cov = cov + 1e-9 * max(np.trace(cov), 1.0) * np.eye(D)
        return cls(tuple(coords.mean(axis=0)), kappa0, nu0, tuple(map(tuple, cov)))


def _det2(M):
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def _log_mvgamma2(x):
    # log Gamma_2(x) = (1/2) log(pi) + log Gamma(x) + log Gamma(x - 1/2)
    return 0.5 * math.log(math.pi) + gammaln(x) + gammaln(x - 0.5)


def niw_update(count, mean, scatter, mu0, kappa0, nu0, Lam0):
    """Posterior NIW hyperparameters; all arguments broadcast over clusters."""
    count = np.asarray(count, dtype=float)
    kn = kappa0 + count
    nn = nu0 + count
    diff = mean - mu0
    coef = kappa0 * count / (kappa0 + count)
    Lamn = Lam0 + scatter + coef[..., None, None] * diff[..., :, None] * diff[..., None, :]
    mun = (np.asarray(kappa0)[..., None] * mu0 + count[..., None] * mean) / kn[..., None]
    return mun, kn, nn, Lamn


def niw_log_marginal(count, kappa0, nu0, Lam0, kn, nn, Lamn):
    """log of the NIW prior predictive density of ``count`` points."""
    count = np.asarray(count, dtype=float)
    ld0 = np.log(_det2(Lam0))
    ldn = np.log(_det2(Lamn))
    return (-0.5 * count * D * LOG_2PI
            + 0.5 * D * (np.log(kappa0) - np.log(kn))
            + 0.5 * nu0 * ld0 - 0.5 * nn * ldn
            + 0.5 * (nn - nu0) * D * LOG_2
            + _log_mvgamma2(0.5 * nn) - _log_mvgamma2(0.5 * nu0))


def _stats_arrays(count, ssum, outer):
    count = np.asarray(count, dtype=float)
    safe = np.maximum(count, 1.0)
    mean = ssum / safe[..., None]
    scatter = outer - count[..., None, None] * mean[..., :, None] * mean[..., None, :]
    return count, mean, scatter


class NiwSimilarity:
    """g3: NIW prior predictive density of the cluster's coordinates."""

    name = "g3"
    active = True

    def __init__(self, niw):
        self.niw = niw

    def centered(self, center):
        niw = self.niw
        return type(self)(NiwParams(tuple(niw.mu - np.asarray(center)), niw.kappa0, niw.nu0,
                                    niw.Lambda0))

    def log_g_stats(self, count, ssum, outer):
        count, mean, scatter = _stats_arrays(count, ssum, outer)
        niw = self.niw
        _, kn, nn, Lamn = niw_update(count, mean, scatter, niw.mu, niw.kappa0, niw.nu0, niw.Lam)
        return niw_log_marginal(count, niw.kappa0, niw.nu0, niw.Lam, kn, nn, Lamn)

    def log_g(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, D)
        n = points.shape[0]
        if n == 0:
            return 0.0
        mean = points.mean(axis=0)
        dev = points - mean
        niw = self.niw
        _, kn, nn, Lamn = niw_update(np.float64(n), mean, dev.T @ dev, niw.mu, niw.kappa0,
                                     niw.nu0, niw.Lam)
        return float(niw_log_marginal(n, niw.kappa0, niw.nu0, niw.Lam, kn, nn, Lamn))

    def log_g_clusters(self, table):
        return self.log_g_stats(table.counts, table.sums, table.outers)

    def log_g_clusters_with(self, table, s):
        s = np.asarray(s, dtype=float)
        return self.log_g_stats(table.counts + 1, table.sums + s, table.outers + np.outer(s, s))


class NiwPosteriorSimilarity(NiwSimilarity):
    """g4: as g3 but integrating against the NIW posterior given the cluster."""

    name = "g4"

    def log_g_stats(self, count, ssum, outer):
        count, mean, scatter = _stats_arrays(count, ssum, outer)
        niw = self.niw
        mun, kn, nn, Lamn = niw_update(count, mean, scatter, niw.mu, niw.kappa0, niw.nu0, niw.Lam)
        _, k2, n2, Lam2 = niw_update(count, mean, scatter, mun, kn, nn, Lamn)
        return niw_log_marginal(count, kn, nn, Lamn, k2, n2, Lam2)

    def log_g(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, D)
        if points.shape[0] == 0:
            return 0.0
        st = ClusterSuffStats.from_points(points)
        return float(self.log_g_stats(np.float64(st.count), st.ssum, st.outer))


def similarity_g1(points, omega=1.0):
    return DistanceSimilarity(omega).log_g(points)


def similarity_g2(points, a):
    return ThresholdSimilarity(a).log_g(points)


def similarity_g3(stats, niw):
    return float(NiwSimilarity(niw).log_g_stats(np.float64(stats.count), stats.ssum, stats.outer))


def similarity_g4(stats, niw):
    return float(NiwPosteriorSimilarity(niw).log_g_stats(np.float64(stats.count), stats.ssum,
                                                         stats.outer))


def resolve_similarity(sim):
    return NoSimilarity() if sim is None else sim


# --- allocation weights ----------------------------------------------------

def existing_log_weights(loglik, table, s_i, hyper, sim, cur_log_g):
    """Unnormalized log weights of joining each existing cluster of ``table``.

    ``table`` must already exclude unit i; ``cur_log_g`` caches
    ``sim.log_g_clusters(table)``. Also returns ``log g`` of every cluster
    with unit i added (zeros when there is no similarity).
    """
    gain = _cohesion_gain(table.counts, hyper)
    if sim.active:
        with_g = sim.log_g_clusters_with(table, s_i)
        # a cluster that is already forbidden (log g = -inf) stays forbidden
        with np.errstate(invalid="ignore"):
            delta = np.where(np.isneginf(with_g), -np.inf, with_g - cur_log_g)
        gain = gain + delta
    else:
        with_g = np.zeros(table.K)
    return loglik + gain, with_g


def new_log_weights(loglik, s_i, hyper, alpha, sim):
    """Log weights of opening a new cluster with each auxiliary atom."""
    base = _cohesion_singleton(hyper, alpha) - math.log(hyper.K_aux)
    if sim.active:
        base += sim.log_g(np.asarray(s_i)[None])
    return loglik + base


def alloc_log_weight_existing(w_i, s_i, member_coords, atom, hyper, loglik=None):
    """Log weight for moving unit i into a cluster with the given members.

    ``member_coords`` are the coordinates of the cluster without unit i and
    ``atom`` the cluster's :class:`~sppm.ar1.Ar1Params`.
    """
    from .ar1 import loglik_w

    member_coords = np.asarray(member_coords, dtype=float).reshape(-1, D)
    if member_coords.shape[0] < 1:
        raise ValueError("cluster must be non-empty after removing unit i")
    sim = resolve_similarity(hyper.similarity)
    table = ClusterTable(member_coords, np.zeros(member_coords.shape[0], dtype=np.int64))
    ll = loglik_w(w_i, atom) if loglik is None else loglik
    cur = sim.log_g_clusters(table)
    return float(existing_log_weights(np.array([ll]), table, s_i, hyper, sim, cur)[0][0])


def alloc_log_weight_new(w_i, s_i, atom, hyper, alpha=None, loglik=None):
    from .ar1 import loglik_w

    sim = resolve_similarity(hyper.similarity)
    ll = loglik_w(w_i, atom) if loglik is None else loglik
    a = hyper.alpha if alpha is None else alpha
    return float(new_log_weights(np.array([ll]), s_i, hyper, a, sim)[0])


# --- partition priors ------------------------------------------------------

def sample_prior_partition(n, alpha, rng):
    """Chinese restaurant process draw of a partition of n units."""
    if n < 1 or not alpha > 0:
        raise ValueError("need n >= 1 and alpha > 0")
    labels = np.zeros(n, dtype=np.int64)
    sizes = [1]
    for i in range(1, n):
        weights = np.array(sizes + [alpha], dtype=float)
        k = int(rng.choice(len(weights), p=weights / weights.sum()))
        if k == len(sizes):
            sizes.append(1)
        else:
            sizes[k] += 1
        labels[i] = k
    return canonicalize(labels)


def enumerate_partitions(n):
    """Yield every set partition of n units as a canonical label tuple."""
    if n < 1:
        return
    labels = [0] * n

    def rec(i, kmax):
        if i == n:
            yield tuple(labels)
            return
        for k in range(kmax + 2):
            labels[i] = k
            yield from rec(i + 1, max(kmax, k))

    labels[0] = 0
    yield from rec(1, 0)


def log_prior_partition(labels, coords, hyper, alpha=None):
    """Unnormalized log prior: sum over blocks of log C + log g."""
    labels = np.asarray(labels, dtype=np.int64)
    sim = resolve_similarity(hyper.similarity)
    sizes = np.bincount(labels)
    out = float(np.sum(log_cohesion(sizes, hyper, alpha)))
    if sim.active:
        coords = np.asarray(coords, dtype=float)
        for k in range(sizes.shape[0]):
            out += sim.log_g(coords[labels == k])
    return out
