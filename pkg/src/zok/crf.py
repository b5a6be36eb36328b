"""Fully-connected pairwise CRF energies and naive mean-field inference.

The energy of a labeling x over N nodes is

    E(x) = sum_i psi_i(x_i) + sum_{i<j} mu(x_i, x_j) * sum_m w_m k_m(f_i, f_j)

with Gaussian kernels k_m(f_i, f_j) = exp(-1/2 (f_i-f_j)^T Lambda (f_i-f_j))
over per-node feature vectors, and a label compatibility mu (Potts by
default: 0 on the diagonal, 1 off it).  The Gibbs distribution
P(x) = exp(-E(x)) / Z can be evaluated exactly on tiny instances by full
enumeration; larger unary predictions are refined by naive O(N^2 C)
mean field, either with damped parallel updates or with damped sequential
sweeps (whose variational free energy never increases, since the exact
per-node update minimizes a convex restriction).

Everything is desk scale: no lattice acceleration, N up to a few
thousand nodes.
"""

from dataclasses import dataclass, field

import numpy as np

BRUTE_FORCE_LIMIT = 2**20
_PROB_FLOOR = 1e-12


@dataclass
class Kernel:
    weight: float
    precision: np.ndarray       # diagonal of Lambda, entries > 0
    features_key: str = "f"     # which entry of the features dict to use

    def __post_init__(self):
        self.precision = np.asarray(self.precision, dtype=np.float64)
        if self.weight < 0:
            raise ValueError("kernel weight must be >= 0")
        if np.any(self.precision <= 0):
            raise ValueError("precision entries must be > 0")


def potts_compat(num_labels):
    """mu(a, b) = [a != b]."""
    return 1.0 - np.eye(num_labels)


@dataclass
class CrfModel:
    unary: np.ndarray           # (N, C) costs
    kernels: list
    compat: np.ndarray = None   # (C, C); defaults to Potts

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if self.compat is None:
            self.compat = potts_compat(self.unary.shape[1])
        self.compat = np.asarray(self.compat, dtype=np.float64)
        if not np.allclose(self.compat, self.compat.T):
            raise ValueError("compatibility must be symmetric")

    @property
    def num_nodes(self):
        return self.unary.shape[0]

    @property
    def num_labels(self):
        return self.unary.shape[1]


@dataclass
class MeanFieldState:
    q: np.ndarray               # (N, C) per-node distributions
    iterations: int
    free_energies: list = field(default_factory=list)


def kernel_eval(f_i, f_j, precision):
    """Gaussian kernel exp(-1/2 (f_i-f_j)^T Lambda (f_i-f_j)), in (0, 1]."""
    d = np.asarray(f_i, dtype=np.float64) - np.asarray(f_j, dtype=np.float64)
    lam = np.asarray(precision, dtype=np.float64)
    if d.shape != lam.shape:
        raise ValueError("feature/precision dimension mismatch")
    return float(np.exp(-0.5 * (lam * d * d).sum()))


def pairwise_potential(x_i, x_j, f_i, f_j, model):
    """mu(x_i, x_j) * sum_m w_m k_m for one node pair.

    f_i, f_j: dicts mapping features_key to that node's feature vector.
    """
    if x_i >= model.num_labels or x_j >= model.num_labels:
        raise ValueError("label out of range")
    total = 0.0
    for kern in model.kernels:
        total += kern.weight * kernel_eval(
            f_i[kern.features_key], f_j[kern.features_key], kern.precision)
    return model.compat[x_i, x_j] * total


def kernel_sum_matrix(model, features):
    """(N, N) matrix K_ij = sum_m w_m k_m(f_i, f_j), zero diagonal.

    features: dict mapping features_key to an (N, d) array.
    """
    n = model.num_nodes
    total = np.zeros((n, n))
    for kern in model.kernels:
        f = np.asarray(features[kern.features_key], dtype=np.float64)
        scaled = f * np.sqrt(kern.precision)
        sq = (scaled**2).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * scaled @ scaled.T, 0.0)
        total += kern.weight * np.exp(-0.5 * d2)
    np.fill_diagonal(total, 0.0)
    return total


def gibbs_energy(x, model, features):
    """E(x) over the complete graph, each unordered pair counted once."""
    x = np.asarray(x)
    if len(x) != model.num_nodes:
        raise ValueError("labeling length != node count")
    ksum = kernel_sum_matrix(model, features)
    e = float(model.unary[np.arange(len(x)), x].sum())
    mu = model.compat[x[:, None], x[None, :]]
    e += float((mu * ksum).sum() / 2.0)
    return e


def gibbs_distribution_bruteforce(model, features):
    """Exact Gibbs distribution by enumerating all C^N labelings.

    Returns (labelings, probs) with labelings in lexicographic order
    (node 0 most significant).  Guarded to C^N <= 2^20.
    """
    n, c = model.num_nodes, model.num_labels
    if c**n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"instance too large: {c}^{n} labelings")
    ksum = kernel_sum_matrix(model, features)
    labelings = np.stack(
        np.meshgrid(*([np.arange(c)] * n), indexing="ij"), axis=-1
    ).reshape(-1, n)
    energies = model.unary[np.arange(n)[None, :], labelings].sum(axis=1)
    iu, ju = np.triu_indices(n, k=1)
    if len(iu):
        energies = energies + (
            model.compat[labelings[:, iu], labelings[:, ju]] * ksum[iu, ju]
        ).sum(axis=1)
    z = energies - energies.min()
    probs = np.exp(-z)
    probs /= probs.sum()
    return labelings, probs


def unary_from_probs(probs, floor=_PROB_FLOOR):
    """psi = -log p with the probabilities floored."""
    return -np.log(np.clip(np.asarray(probs, dtype=np.float64), floor, None))


def free_energy(q, model, features, ksum=None):
    """Variational free energy F(Q) = E_Q[E] - H(Q)."""
    q = np.asarray(q, dtype=np.float64)
    if ksum is None:
        ksum = kernel_sum_matrix(model, features)
    e = float((q * model.unary).sum())
    t = q @ model.compat @ q.T
    e += float((ksum * t).sum() / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(q > 0, q * np.log(q), 0.0).sum()
    return e + float(ent)


def mean_field_refine(model, features, iters=10, damping=0.5, mode="parallel"):
    """Naive mean-field refinement of the unary prediction.

    Q starts at the per-node softmax of -psi.  Each update sets
    Q_i(l) proportional to exp(-psi_i(l) - sum_{j!=i} mu(l,.) K_ij Q_j),
    then mixes with the previous Q by the damping factor.  "parallel"
    updates every node from the previous sweep; "sequential" updates
    nodes in index order using current values and records the free
    energy after every sweep.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must be in [0, 1)")
    if mode not in ("parallel", "sequential"):
        raise ValueError(f"unknown mode {mode!r}")
    ksum = kernel_sum_matrix(model, features)
    neg = -model.unary
    neg = neg - neg.max(axis=1, keepdims=True)
    q = np.exp(neg)
    q /= q.sum(axis=1, keepdims=True)
    energies = [free_energy(q, model, features, ksum)]
    for _ in range(iters):
        if mode == "parallel":
            msg = (ksum @ q) @ model.compat
            logq = -model.unary - msg
            logq -= logq.max(axis=1, keepdims=True)
            qnew = np.exp(logq)
            qnew /= qnew.sum(axis=1, keepdims=True)
            q = (1.0 - damping) * qnew + damping * q
        else:
            for i in range(model.num_nodes):
                msg = (ksum[i] @ q) @ model.compat
                logq = -model.unary[i] - msg
                logq -= logq.max()
                qi = np.exp(logq)
                qi /= qi.sum()
                q[i] = (1.0 - damping) * qi + damping * q[i]
        energies.append(free_energy(q, model, features, ksum))
    return MeanFieldState(q, iters, energies)


def map_labels(state):
    """Per-node argmax of Q; ties go to the smallest label."""
    q = state.q if isinstance(state, MeanFieldState) else np.asarray(state)
    return np.argmax(q, axis=1).astype(np.int32)


def image_crf(lab, probs, positions=None, w_appearance=3.0, w_smooth=1.0,
              sigma_xy=10.0, sigma_lab=10.0, sigma_xy_smooth=3.0):
    """Build (model, features) for nodes with Lab colors and positions.

    lab: (N, 3) mean Lab per node; positions: (N, 2) x,y (defaults to
    index order for callers that pre-flatten a grid); probs: (N, C) unary
    probabilities.  Two kernels: appearance over (x, y, l, a, b) and a
    smoothness kernel over position only.  Kernel widths enter as diagonal
    precisions 1/sigma^2.
    """
    lab = np.asarray(lab, dtype=np.float64)
    n = lab.shape[0]
    if positions is None:
        positions = np.stack([np.arange(n), np.zeros(n)], axis=1).astype(np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    features = {
        "appearance": np.concatenate([positions, lab], axis=1),
        "position": positions,
    }
    kernels = [
        Kernel(w_appearance,
               [1 / sigma_xy**2, 1 / sigma_xy**2,
                1 / sigma_lab**2, 1 / sigma_lab**2, 1 / sigma_lab**2],
               "appearance"),
        Kernel(w_smooth, [1 / sigma_xy_smooth**2, 1 / sigma_xy_smooth**2], "position"),
    ]
    model = CrfModel(unary_from_probs(probs), kernels)
    return model, features
