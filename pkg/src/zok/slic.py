"""SLIC superpixel oversegmentation.

k-means-like clustering in the joint [l a b x y] space with a windowed
2S x 2S search around each cluster center, where S = sqrt(N/k) is the
seeding grid interval.  The distance between a pixel and a center is

    D = d_lab + (m / S) * d_xy

with d_lab and d_xy Euclidean in color and position; the compactness
weight m trades spatial regularity against color adherence.

Cluster centers are stored as an (K, 5) float64 array with columns
(l, a, b, x, y).  Superpixel maps are (H, W) int32 arrays with
contiguous ids; every pixel is assigned.  All operations are
deterministic: ties are always broken toward the smallest index.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core_io import rgb_to_lab

# Center array columns.
L, A, B, X, Y = range(5)


@dataclass
class SlicParams:
    k: int
    m: float = 15.0
    max_iters: int = 10
    residual_threshold: float = 1.0
    enforce_connectivity: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m <= 0:
            raise ValueError("m must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SlicResult:
    spmap: np.ndarray            # (H, W) int32, ids contiguous 0..K'-1
    centers: np.ndarray          # (K', 5) mean labxy of each final region
    iterations_run: int
    final_residual: float
    history: list = field(default_factory=list)  # residual E per iteration


def grid_interval(num_pixels, k):
    """Seeding grid interval S = sqrt(num_pixels / k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if num_pixels < k:
        raise ValueError(f"k={k} exceeds pixel count {num_pixels}")
    return math.sqrt(num_pixels / k)


def init_centers(lab, s):
    """Seed ceil(W/S) * ceil(H/S) centers on a regular grid of interval S.

    Centers sit at (S/2 + i*S, S/2 + j*S), clipped to at most the last
    pixel coordinate, and carry the Lab value of their containing pixel.
    Row-major order: y varies slowest.
    """
    if s < 1:
        raise ValueError("grid interval must be >= 1")
    h, w = lab.shape[:2]
    xs = np.minimum(s / 2.0 + np.arange(math.ceil(w / s)) * s, w - 1.0)
    ys = np.minimum(s / 2.0 + np.arange(math.ceil(h / s)) * s, h - 1.0)
    centers = np.empty((len(ys) * len(xs), 5))
    i = 0
    for cy in ys:
        for cx in xs:
            centers[i, :3] = lab[int(cy), int(cx)]
            centers[i, X] = cx
            centers[i, Y] = cy
            i += 1
    return centers


def gradient_map(lab):
    """Squared central-difference gradient summed over Lab channels.

    G(x, y) = ||Lab(x+1,y) - Lab(x-1,y)||^2 + ||Lab(x,y+1) - Lab(x,y-1)||^2
    with coordinates clamped at the borders.
    """
    h, w = lab.shape[:2]
    xp = lab[:, np.minimum(np.arange(w) + 1, w - 1), :]
    xm = lab[:, np.maximum(np.arange(w) - 1, 0), :]
    yp = lab[np.minimum(np.arange(h) + 1, h - 1), :, :]
    ym = lab[np.maximum(np.arange(h) - 1, 0), :, :]
    return ((xp - xm) ** 2).sum(axis=2) + ((yp - ym) ** 2).sum(axis=2)


def perturb_centers(lab, centers):
    """Move each center to the lowest-gradient spot in its 3x3 neighborhood.

    A center moves only when a strictly lower gradient exists (so a flat
    image leaves every center untouched); among strictly better spots the
    smallest row-major index wins.  Moved centers land on integer pixel
    positions and resample Lab there.
    """
    h, w = lab.shape[:2]
    grad = gradient_map(lab)
    out = centers.copy()
    for i in range(len(centers)):
        ax, ay = int(centers[i, X]), int(centers[i, Y])
        best = grad[ay, ax]
        bx = by = -1
        for ny in range(max(0, ay - 1), min(h, ay + 2)):
            for nx in range(max(0, ax - 1), min(w, ax + 2)):
                if grad[ny, nx] < best:
                    best = grad[ny, nx]
                    bx, by = nx, ny
        if bx >= 0:
            out[i, :3] = lab[by, bx]
            out[i, X] = bx
            out[i, Y] = by
    return out


def slic_distance(center, pixel_labxy, m, s):
    """Distance D = d_lab + (m/S) * d_xy between a center and one pixel."""
    if m <= 0 or s <= 0:
        raise ValueError("m and S must be > 0")
    center = np.asarray(center, dtype=np.float64)
    pixel = np.asarray(pixel_labxy, dtype=np.float64)
    d_lab = math.sqrt(((center[:3] - pixel[:3]) ** 2).sum())
    d_xy = math.sqrt(((center[3:] - pixel[3:]) ** 2).sum())
    return d_lab + (m / s) * d_xy


def assign_pixels(lab, centers, m, s):
    """Assign every pixel to its best center; returns (spmap, best distance).

    Each center only competes inside its 2S x 2S window; ties go to the
    smallest center id.  Pixels covered by no window fall back to the
    globally nearest center.
    """
    if len(centers) == 0:
        raise ValueError("centers must be nonempty")
    h, w = lab.shape[:2]
    ratio = m / s
    best = np.full((h, w), np.inf)
    ids = np.full((h, w), -1, dtype=np.int32)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    for cid in range(len(centers)):
        cl, ca, cb, cx, cy = centers[cid]
        x0 = max(0, math.ceil(cx - s))
        x1 = min(w - 1, math.floor(cx + s))
        y0 = max(0, math.ceil(cy - s))
        y1 = min(h - 1, math.floor(cy + s))
        if x0 > x1 or y0 > y1:
            continue
        win = lab[y0 : y1 + 1, x0 : x1 + 1]
        d_lab = np.sqrt(
            (win[:, :, 0] - cl) ** 2 + (win[:, :, 1] - ca) ** 2 + (win[:, :, 2] - cb) ** 2
        )
        d_xy = np.sqrt(
            (xs[x0 : x1 + 1][None, :] - cx) ** 2 + (ys[y0 : y1 + 1][:, None] - cy) ** 2
        )
        d = d_lab + ratio * d_xy
        bwin = best[y0 : y1 + 1, x0 : x1 + 1]
        upd = d < bwin
        bwin[upd] = d[upd]
        ids[y0 : y1 + 1, x0 : x1 + 1][upd] = cid
    missed = ids < 0
    if missed.any():
        my, mx = np.nonzero(missed)
        pix = np.concatenate(
            [lab[my, mx], mx[:, None].astype(np.float64), my[:, None].astype(np.float64)],
            axis=1,
        )
        d_lab = np.sqrt(((pix[:, None, :3] - centers[None, :, :3]) ** 2).sum(axis=2))
        d_xy = np.sqrt(((pix[:, None, 3:] - centers[None, :, 3:]) ** 2).sum(axis=2))
        d = d_lab + ratio * d_xy
        ids[my, mx] = np.argmin(d, axis=1)  # argmin takes the first = smallest id
        best[my, mx] = d[np.arange(len(my)), ids[my, mx]]
    return ids, best


def window_eval_count(centers, s, shape):
    """Number of center/pixel distance evaluations one assignment pass does."""
    h, w = shape
    total = 0
    for cx, cy in centers[:, 3:]:
        nx = min(w - 1, math.floor(cx + s)) - max(0, math.ceil(cx - s)) + 1
        ny = min(h - 1, math.floor(cy + s)) - max(0, math.ceil(cy - s)) + 1
        total += max(0, nx) * max(0, ny)
    return total


def update_centers(lab, spmap, centers):
    """Move each center to the mean labxy of its pixels; returns (centers, E).

    E is the total Euclidean labxy movement; empty clusters keep their
    previous center and contribute zero.
    """
    h, w = lab.shape[:2]
    k = len(centers)
    flat = spmap.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    new = centers.copy()
    cols = [lab[:, :, 0].ravel(), lab[:, :, 1].ravel(), lab[:, :, 2].ravel()]
    cols.append(np.tile(np.arange(w, dtype=np.float64), h))
    cols.append(np.repeat(np.arange(h, dtype=np.float64), w))
    nonempty = counts > 0
    for dim, col in enumerate(cols):
        sums = np.bincount(flat, weights=col, minlength=k)
        new[nonempty, dim] = sums[nonempty] / counts[nonempty]
    residual = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).sum())
    return new, residual


def compact_ids(spmap):
    """Renumber ids to a contiguous 0..K'-1 range, preserving order."""
    used = np.unique(spmap)
    remap = np.full(used.max() + 1 if len(used) else 1, -1, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    return remap[spmap]


def _label_components(spmap):
    """4-connected components of equal-id regions, labeled in raster order.

    Returns (component map, sizes, id of each component's superpixel).
    Component labels follow the row-major order of each component's first
    pixel, so smaller labels mean earlier first pixels.
    """
    h, w = spmap.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    sizes = []
    ids = []
    stack = []
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            cid = spmap[sy, sx]
            label = len(sizes)
            comp[sy, sx] = label
            stack.append((sy, sx))
            n = 0
            while stack:
                y, x = stack.pop()
                n += 1
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and comp[ny, nx] < 0 and spmap[ny, nx] == cid:
                        comp[ny, nx] = label
                        stack.append((ny, nx))
            sizes.append(n)
            ids.append(int(cid))
    return comp, np.array(sizes), np.array(ids)


def _kept_components(sizes, ids):
    """Mark, per superpixel id, its largest component (earliest on ties)."""
    kept = np.zeros(len(sizes), dtype=bool)
    for sp in np.unique(ids):
        members = np.nonzero(ids == sp)[0]
        kept[members[np.argmax(sizes[members])]] = True
    return kept


def enforce_connectivity(spmap):
    """Make every superpixel 4-connected.

    Stray components smaller than (area/K)/4 are absorbed into the id most
    common among their 4-neighbors; each id keeps its largest component.
    Disconnected leftovers at least that large become new superpixels.
    Ids come out contiguous; an already-connected map is returned unchanged.
    """
    spmap = np.asarray(spmap, dtype=np.int32)
    h, w = spmap.shape
    k = int(spmap.max()) + 1
    threshold = spmap.size / k / 4.0
    cur = spmap.copy()

    while True:
        comp, sizes, ids = _label_components(cur)
        kept = _kept_components(sizes, ids)
        small = [c for c in range(len(sizes)) if not kept[c] and sizes[c] < threshold]
        if not small:
            break
        for c in small:
            cy, cx = np.nonzero(comp == c)
            votes = {}
            for y, x in zip(cy, cx):
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and comp[ny, nx] != c:
                        nid = int(cur[ny, nx])
                        votes[nid] = votes.get(nid, 0) + 1
            if votes:
                top = max(votes.values())
                cur[cy, cx] = min(i for i, v in votes.items() if v == top)
        # Merges changed the partition; relabel and rescan.

    # Fresh ids for the remaining (large) disconnected leftovers.
    comp, sizes, ids = _label_components(cur)
    kept = _kept_components(sizes, ids)
    final_id = ids.copy()
    next_id = k
    for c in range(len(sizes)):
        if not kept[c]:
            final_id[c] = next_id
            next_id += 1
    return compact_ids(final_id[comp].astype(np.int32))


def run_slic(img, params):
    """Run the full SLIC pipeline on an (H, W, 3) uint8 image.

    Seeds a grid of centers, perturbs them off edges, then alternates
    windowed assignment and center updates until the residual drops below
    params.residual_threshold or max_iters is reached.  Ids are compacted
    and, unless disabled, post-processed for 4-connectivity.  The returned
    centers are the mean labxy of each final region.
    """
    lab = rgb_to_lab(img)
    h, w = lab.shape[:2]
    if params.k > h * w:
        raise ValueError(f"k={params.k} exceeds pixel count {h * w}")
    s = grid_interval(h * w, params.k)
    centers = init_centers(lab, s)
    centers = perturb_centers(lab, centers)
    residual = math.inf
    history = []
    iterations = 0
    spmap = None
    while iterations < params.max_iters and residual >= params.residual_threshold:
        spmap, _ = assign_pixels(lab, centers, params.m, s)
        centers, residual = update_centers(lab, spmap, centers)
        history.append(residual)
        iterations += 1
    spmap = compact_ids(spmap)
    if params.enforce_connectivity:
        spmap = enforce_connectivity(spmap)
    final_centers, _ = update_centers(
        lab, spmap, np.zeros((int(spmap.max()) + 1, 5))
    )
    return SlicResult(spmap, final_centers, iterations, residual, history)
