"""Region geometry and zoom-out feature construction over superpixels.

A superpixel is described by descriptors computed on a nested sequence of
regions around it: the superpixel itself (local), a ball of graph
neighbors (proximal), the bounding box of a wider ball (subscene) and the
whole image (scene).  Dense feature maps are ingested as (C, H', W')
arrays, upsampled to image resolution and mean-pooled over superpixels;
hand-crafted local descriptors cover color histograms, entropies and
normalized location.  Per-level vectors are concatenated into one feature
matrix with recorded level offsets.

Per-superpixel accumulation always runs in pixel row-major order, so
results are bit-stable.
"""

from dataclasses import dataclass

import numpy as np

# Fixed histogram ranges per Lab channel; out-of-range values clamp to the
# end bins.
_CHANNEL_RANGES = ((0.0, 100.0), (-110.0, 110.0), (-110.0, 110.0))
_FINE_BINS = 32
_COARSE_BINS = 8
LOCAL_COLOR_DIM = 3 * (_FINE_BINS + _COARSE_BINS) * 2 + 3  # fixed + entropy + adaptive


@dataclass
class ZoomOutFeature:
    """Concatenated per-superpixel features with level segment offsets."""

    features: np.ndarray       # (num_superpixels, D)
    level_offsets: list        # start index of each level segment

    def __post_init__(self):
        offs = list(self.level_offsets)
        if offs != sorted(set(offs)) or (offs and offs[0] != 0):
            raise ValueError(f"offsets must be strictly increasing from 0, got {offs}")
        if offs and offs[-1] >= self.features.shape[1]:
            raise ValueError("last offset beyond feature dimension")


def build_adjacency(spmap):
    """Adjacency lists of superpixels sharing a 4-connected boundary.

    Returns a list of sorted int arrays; the relation is symmetric and has
    no self-loops.
    """
    spmap = np.asarray(spmap)
    k = int(spmap.max()) + 1
    pairs = []
    a, b = spmap[:, :-1].ravel(), spmap[:, 1:].ravel()
    mask = a != b
    pairs.append(np.stack([a[mask], b[mask]], axis=1))
    a, b = spmap[:-1, :].ravel(), spmap[1:, :].ravel()
    mask = a != b
    pairs.append(np.stack([a[mask], b[mask]], axis=1))
    edges = np.concatenate(pairs, axis=0)
    if len(edges):
        edges = np.unique(np.sort(edges, axis=1), axis=0)
    neighbors = [[] for _ in range(k)]
    for i, j in edges:
        neighbors[i].append(int(j))
        neighbors[j].append(int(i))
    return [np.array(sorted(n), dtype=np.int64) for n in neighbors]


def neighbors_within_radius(graph, s, radius):
    """Sorted BFS ball of hop radius around superpixel s (inclusive)."""
    if s >= len(graph):
        raise ValueError(f"superpixel {s} out of range")
    ball = {int(s)}
    frontier = [int(s)]
    for _ in range(radius):
        nxt = []
        for node in frontier:
            for nb in graph[node]:
                if nb not in ball:
                    ball.add(int(nb))
                    nxt.append(int(nb))
        if not nxt:
            break
        frontier = nxt
    return np.array(sorted(ball), dtype=np.int64)


def upsample_featuremap(fm, height, width, mode="nearest"):
    """Upsample a (C, H', W') feature map to (C, height, width).

    nearest uses floor(i * H'/H) source sampling; bilinear uses the
    align-corners-false convention.
    """
    fm = np.asarray(fm)
    _, hs, ws = fm.shape
    if mode == "nearest":
        iy = (np.arange(height) * hs // height).astype(np.int64)
        ix = (np.arange(width) * ws // width).astype(np.int64)
        return fm[:, iy[:, None], ix[None, :]]
    if mode == "bilinear":
        fy = np.clip((np.arange(height) + 0.5) * hs / height - 0.5, 0, hs - 1)
        fx = np.clip((np.arange(width) + 0.5) * ws / width - 0.5, 0, ws - 1)
        y0 = np.floor(fy).astype(np.int64)
        x0 = np.floor(fx).astype(np.int64)
        y1 = np.minimum(y0 + 1, hs - 1)
        x1 = np.minimum(x0 + 1, ws - 1)
        wy = (fy - y0)[None, :, None]
        wx = (fx - x0)[None, None, :]
        top = fm[:, y0[:, None], x0[None, :]] * (1 - wx) + fm[:, y0[:, None], x1[None, :]] * wx
        bot = fm[:, y1[:, None], x0[None, :]] * (1 - wx) + fm[:, y1[:, None], x1[None, :]] * wx
        return top * (1 - wy) + bot * wy
    raise ValueError(f"unknown mode {mode!r}")


def pool_over_superpixels(fm, spmap):
    """Mean of a full-resolution (C, H, W) feature map over each superpixel.

    Accumulates in float64; returns (num_superpixels, C).
    """
    fm = np.asarray(fm)
    spmap = np.asarray(spmap)
    if fm.shape[1:] != spmap.shape:
        raise ValueError(f"feature map grid {fm.shape[1:]} != map grid {spmap.shape}")
    k = int(spmap.max()) + 1
    flat = spmap.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    out = np.empty((k, fm.shape[0]))
    for c in range(fm.shape[0]):
        out[:, c] = np.bincount(flat, weights=fm[c].ravel().astype(np.float64), minlength=k)
    return out / counts[:, None]


def _hist_features(flat_ids, k, values, edges_lo, edges_hi, nbins):
    """Normalized equal-width histograms per superpixel for one channel."""
    idx = np.floor((values - edges_lo) / (edges_hi - edges_lo) * nbins).astype(np.int64)
    np.clip(idx, 0, nbins - 1, out=idx)
    hist = np.bincount(flat_ids * nbins + idx, minlength=k * nbins).reshape(k, nbins)
    return hist / hist.sum(axis=1, keepdims=True)


def _adaptive_hist(flat_ids, k, values, nbins):
    """Histograms with bin edges at the per-image channel quantiles."""
    edges = np.quantile(values, np.linspace(0.0, 1.0, nbins + 1))
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, nbins - 1)
    hist = np.bincount(flat_ids * nbins + idx, minlength=k * nbins).reshape(k, nbins)
    return hist / hist.sum(axis=1, keepdims=True)


def local_color_features(lab, spmap):
    """243-dim color descriptor per superpixel.

    Per Lab channel: 32- and 8-bin equal-width histograms over fixed
    ranges (120 dims), the natural-log entropy of each 32-bin histogram
    (3 dims), and 32- and 8-bin histograms with per-image quantile bin
    edges (120 dims).  All histograms are normalized to sum 1.
    """
    lab = np.asarray(lab)
    spmap = np.asarray(spmap)
    k = int(spmap.max()) + 1
    flat = spmap.ravel()
    fixed = []
    entropies = []
    adaptive = []
    for ch in range(3):
        values = lab[:, :, ch].ravel()
        lo, hi = _CHANNEL_RANGES[ch]
        fine = _hist_features(flat, k, values, lo, hi, _FINE_BINS)
        fixed.append(fine)
        fixed.append(_hist_features(flat, k, values, lo, hi, _COARSE_BINS))
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(fine > 0, fine * np.log(fine), 0.0)
        entropies.append(-plogp.sum(axis=1))
        adaptive.append(_adaptive_hist(flat, k, values, _FINE_BINS))
        adaptive.append(_adaptive_hist(flat, k, values, _COARSE_BINS))
    out = np.concatenate(fixed + [np.stack(entropies, axis=1)] + adaptive, axis=1)
    assert out.shape[1] == LOCAL_COLOR_DIM
    return out


def location_features_all(spmap):
    """(K, 4) location descriptor: normalized centroid and its magnitude.

    Centroids use pixel-center coordinates (x + 0.5) and are mapped to
    [(cx - W/2)/(W/2), (cy - H/2)/(H/2)], followed by the absolute values
    of both, so mirroring the image exactly negates the first coordinate.
    """
    spmap = np.asarray(spmap)
    h, w = spmap.shape
    k = int(spmap.max()) + 1
    flat = spmap.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    xs = np.tile(np.arange(w, dtype=np.float64) + 0.5, h)
    ys = np.repeat(np.arange(h, dtype=np.float64) + 0.5, w)
    cx = np.bincount(flat, weights=xs, minlength=k) / counts
    cy = np.bincount(flat, weights=ys, minlength=k) / counts
    nx = (cx - w / 2.0) / (w / 2.0)
    ny = (cy - h / 2.0) / (h / 2.0)
    return np.stack([nx, ny, np.abs(nx), np.abs(ny)], axis=1)


def location_features(spmap, s):
    """4-dim location descriptor of one superpixel."""
    return location_features_all(spmap)[s]


def proximal_average(local_feats, graph, radius=2):
    """Unweighted mean of local feature rows over each hop-radius ball."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    local_feats = np.asarray(local_feats)
    out = np.empty_like(local_feats, dtype=np.float64)
    for s in range(len(local_feats)):
        ball = neighbors_within_radius(graph, s, radius)
        out[s] = local_feats[ball].mean(axis=0)
    return out


def superpixel_bboxes(spmap):
    """(K, 4) tight bounding boxes as (x0, y0, x1, y1), inclusive."""
    spmap = np.asarray(spmap)
    h, w = spmap.shape
    k = int(spmap.max()) + 1
    flat = spmap.ravel()
    xs = np.tile(np.arange(w), h)
    ys = np.repeat(np.arange(h), w)
    x0 = np.full(k, w)
    y0 = np.full(k, h)
    x1 = np.full(k, -1)
    y1 = np.full(k, -1)
    np.minimum.at(x0, flat, xs)
    np.minimum.at(y0, flat, ys)
    np.maximum.at(x1, flat, xs)
    np.maximum.at(y1, flat, ys)
    return np.stack([x0, y0, x1, y1], axis=1).astype(np.int64)


def subscene_bbox(spmap, graph, s, radius=3):
    """Bounding box (x0, y0, x1, y1) of the radius-hop ball around s."""
    ball = neighbors_within_radius(graph, s, radius)
    boxes = superpixel_bboxes(spmap)[ball]
    return (
        int(boxes[:, 0].min()),
        int(boxes[:, 1].min()),
        int(boxes[:, 2].max()),
        int(boxes[:, 3].max()),
    )


def concat_levels(levels):
    """Concatenate per-level (K, F_i) matrices into one ZoomOutFeature."""
    levels = [np.asarray(lv) for lv in levels]
    if not levels:
        raise ValueError("need at least one level")
    k = levels[0].shape[0]
    if any(lv.shape[0] != k for lv in levels):
        raise ValueError("levels cover different superpixel sets")
    offsets = []
    pos = 0
    for lv in levels:
        offsets.append(pos)
        pos += lv.shape[1]
    return ZoomOutFeature(np.concatenate(levels, axis=1), offsets)


def mirror_max_fuse(f_orig, f_mirror):
    """Element-wise max of a feature set and its mirror-image counterpart."""
    a = f_orig.features if isinstance(f_orig, ZoomOutFeature) else np.asarray(f_orig)
    b = f_mirror.features if isinstance(f_mirror, ZoomOutFeature) else np.asarray(f_mirror)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    fused = np.maximum(a, b)
    if isinstance(f_orig, ZoomOutFeature):
        return ZoomOutFeature(fused, list(f_orig.level_offsets))
    return fused


def rect_regions(width, height, count):
    """Partition the image into a grid of near-equal rectangles.

    Produces ceil(sqrt(count*W/H)) columns by ceil(sqrt(count*H/W)) rows,
    ids in row-major order; a rectangular-region baseline for superpixels.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ncols = int(np.ceil(np.sqrt(count * width / height)))
    nrows = int(np.ceil(np.sqrt(count * height / width)))
    ncols = min(ncols, width)
    nrows = min(nrows, height)
    col_of = np.minimum(np.arange(width) * ncols // width, ncols - 1)
    row_of = np.minimum(np.arange(height) * nrows // height, nrows - 1)
    return (row_of[:, None] * ncols + col_of[None, :]).astype(np.int32)


def scene_pool(fm):
    """Global per-channel mean of a (C, H, W) feature map."""
    fm = np.asarray(fm, dtype=np.float64)
    return fm.mean(axis=(1, 2))
