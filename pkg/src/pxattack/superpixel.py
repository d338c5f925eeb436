"""Superpixel segmentation and segmentation-quality metrics.

The segmenter is a SLIC-style localized k-means over (CIELAB color,
pixel position) using the signed-alpha similarity

    k = max(0, k_color + alpha * k_space)

where ``k_color`` is the euclidean LAB distance between a pixel and a
cluster mean, ``k_space`` the euclidean positional distance, and
``alpha`` weighs position against color. Large positive alpha degenerates
to a plain square grid; negative alpha (the clamp then matters) produces
scattered, anti-compact segments.

Segment maps are plain (H, W) int32 arrays whose values form a partition
with contiguous ids 0..n_segments-1, every id used at least once.

Metrics:

* ``icv`` -- intra-cluster variation: mean over segments of
  sqrt(sum_p ||I(p) - mu||^2) / |s| with I the LAB image. Lower means
  more color-homogeneous segments.
* ``compactness`` -- area-weighted isoperimetric quotient
  sum Q(s)|s| / sum |s| with Q(s) = 4*pi*|s| / |R(s)|^2, where |R(s)|
  counts pixels of s having a 4-neighbor outside s (the image border
  counts as outside). Higher means rounder segments.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .image import RtfFormatError, read_rtf, srgb_to_lab, write_rtf

__all__ = [
    "seed_grid",
    "slic",
    "enforce_connectivity",
    "icv",
    "compactness",
    "segment_pixel_sets",
    "area_metrics",
    "save_segment_map",
    "load_segment_map",
]

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _grid_shape(height: int, width: int, n: int) -> tuple[int, int]:
    rows = math.ceil(math.sqrt(n * height / width))
    rows = max(1, min(rows, height))
    cols = max(1, min(math.ceil(n / rows), width))
    return rows, cols


def seed_grid(height: int, width: int, n: int) -> list[tuple[int, int]]:
    """Representative points at equal intervals for a budget of n segments.

    The image is cut into a grid of ceil(sqrt(n*H/W)) x ceil(n/rows) cells
    of side about sqrt(H*W/n); each cell contributes the pixel at its
    midpoint, in row-major order, trimmed to the first n cells so the
    segmenter never seeds more clusters than its budget.
    """
    if not 1 <= n <= height * width:
        raise ValueError(f"n={n} out of range [1, {height * width}]")
    rows, cols = _grid_shape(height, width, n)
    seeds = []
    for i in range(rows):
        r = int((i + 0.5) * height / rows)
        for j in range(cols):
            c = int((j + 0.5) * width / cols)
            seeds.append((r, c))
    return seeds[:n]


def slic(
    img: np.ndarray,
    n: int,
    *,
    alpha: float = 10.0,
    enforce: bool = True,
    kmeans_iters: int = 10,
    min_size: int | None = None,
) -> np.ndarray:
    """Segment an sRGB image into at most n superpixels.

    Clusters are seeded on the ``seed_grid`` cells; positions are tracked
    in pixel-center coordinates, so a cell's initial center is the exact
    mean position of its pixels. Each k-means round assigns every pixel to
    the candidate cluster minimizing the signed-alpha similarity, where
    candidates are the clusters whose center lies within a 2S x 2S window
    of the pixel (S = sqrt(H*W/n)); pixels left without a candidate fall
    back to the spatially nearest center. Exact similarity ties go to the
    lowest cluster id. Cluster means (LAB and position) are recomputed
    each round for ``kmeans_iters`` rounds.

    Empty clusters are dropped and ids compacted, so the result can have
    fewer than n segments. With ``enforce`` set, 4-connectivity is
    enforced afterwards (see ``enforce_connectivity``) with ``min_size``
    defaulting to ceil(S^2 / 4).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if kmeans_iters < 1:
        raise ValueError("kmeans_iters must be >= 1")
    height, width = img.shape[:2]
    if not 1 <= n <= height * width:
        raise ValueError(f"n={n} out of range [1, {height * width}]")

    lab = srgb_to_lab(img)
    interval = math.sqrt(height * width / n)
    rows, cols = _grid_shape(height, width, n)
    k = n  # the seed grid is trimmed to the budget

    # Initial positions are fractional cell midpoints in pixel-center
    # coordinates; initial colors come from the integer seed pixels.
    grid_r = (np.arange(rows) + 0.5) * height / rows
    grid_c = (np.arange(cols) + 0.5) * width / cols
    center_pos = np.stack(
        [
            np.repeat(grid_r - 0.5, cols),
            np.tile(grid_c - 0.5, rows),
        ],
        axis=1,
    )[:k]
    seed_r = np.repeat(grid_r.astype(np.int64), cols)[:k]
    seed_c = np.tile(grid_c.astype(np.int64), rows)[:k]
    center_lab = lab[np.minimum(seed_r, height - 1), np.minimum(seed_c, width - 1)]

    row_coord = np.arange(height, dtype=np.float64)
    col_coord = np.arange(width, dtype=np.float64)
    labels = np.zeros((height, width), dtype=np.int32)

    for _ in range(kmeans_iters):
        best = np.full((height, width), np.inf)
        labels.fill(-1)
        for cid in range(k):
            cr, cc = center_pos[cid]
            r0 = max(0, math.ceil(cr - interval))
            r1 = min(height - 1, math.floor(cr + interval))
            c0 = max(0, math.ceil(cc - interval))
            c1 = min(width - 1, math.floor(cc + interval))
            if r0 > r1 or c0 > c1:
                continue
            win = np.s_[r0 : r1 + 1, c0 : c1 + 1]
            k_color = np.linalg.norm(lab[win] - center_lab[cid], axis=2)
            dr = row_coord[r0 : r1 + 1, None] - cr
            dc = col_coord[None, c0 : c1 + 1] - cc
            k_space = np.sqrt(dr * dr + dc * dc)
            similarity = np.maximum(0.0, k_color + alpha * k_space)
            improved = similarity < best[win]
            labels[win][improved] = cid
            best[win][improved] = similarity[improved]

        orphan = labels < 0
        if orphan.any():
            rr, cc_ = np.nonzero(orphan)
            spatial = (rr[:, None] - center_pos[None, :, 0]) ** 2 + (
                cc_[:, None] - center_pos[None, :, 1]
            ) ** 2
            labels[rr, cc_] = np.argmin(spatial, axis=1)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        occupied = counts > 0
        sum_r = np.bincount(flat, weights=np.repeat(row_coord, width), minlength=k)
        sum_c = np.bincount(flat, weights=np.tile(col_coord, height), minlength=k)
        center_pos[occupied, 0] = sum_r[occupied] / counts[occupied]
        center_pos[occupied, 1] = sum_c[occupied] / counts[occupied]
        for ch in range(3):
            sums = np.bincount(flat, weights=lab[:, :, ch].ravel(), minlength=k)
            center_lab[occupied, ch] = sums[occupied] / counts[occupied]

    labels = _compact_ids(labels)
    if enforce:
        if min_size is None:
            min_size = math.ceil(interval * interval / 4)
        labels = enforce_connectivity(labels, min_size)
    return labels


def _compact_ids(labels: np.ndarray) -> np.ndarray:
    used = np.unique(labels)
    remap = np.zeros(int(used.max()) + 1, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    return remap[labels]


def enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Make every segment a single 4-connected component.

    4-connected components are computed per label. Components smaller than
    ``min_size`` are absorbed into the adjacent component sharing the
    longest boundary (most 4-neighbor pixel pairs; ties go to the smallest
    neighboring label). Surviving components are renumbered 0..m-1 in
    raster order of their first pixel, which also gives disconnected
    repeats of one label fresh ids.
    """
    labels = np.asarray(labels)
    height, width = labels.shape

    comp = np.full((height, width), -1, dtype=np.int64)
    n_comp = 0
    for value in np.unique(labels):
        part, m = ndimage.label(labels == value, structure=_CROSS)
        comp[part > 0] = part[part > 0] + n_comp - 1
        n_comp += m

    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    comp_label = np.empty(n_comp, dtype=np.int64)
    first = np.unique(comp.ravel(), return_index=True)[1]
    comp_label[np.unique(comp.ravel())] = labels.ravel()[first]

    # Boundary-edge counts between adjacent components.
    pairs = []
    horiz = np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1)
    vert = np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1)
    for arr in (horiz, vert):
        diff = arr[arr[:, 0] != arr[:, 1]]
        pairs.append(diff)
        pairs.append(diff[:, ::-1])
    pairs = np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    if len(pairs):
        keys = pairs[:, 0] * n_comp + pairs[:, 1]
        uniq, edge_counts = np.unique(keys, return_counts=True)
        neighbors_of = {}
        for key, cnt in zip(uniq.tolist(), edge_counts.tolist()):
            neighbors_of.setdefault(key // n_comp, []).append((key % n_comp, cnt))
    else:
        neighbors_of = {}

    parent = np.arange(n_comp, dtype=np.int64)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for cid in range(n_comp):
        if sizes[cid] >= min_size:
            continue
        candidates = neighbors_of.get(cid, [])
        if not candidates:
            continue
        # Longest shared boundary wins; ties break to the smallest label.
        target = max(
            candidates, key=lambda item: (item[1], -comp_label[item[0]])
        )[0]
        root_self, root_target = find(cid), find(target)
        if root_self != root_target:
            parent[root_self] = root_target

    roots = np.array([find(i) for i in range(n_comp)], dtype=np.int64)
    merged = roots[comp]
    order = np.unique(merged.ravel(), return_index=True)[1]
    rank = {int(merged.ravel()[idx]): new for new, idx in enumerate(np.sort(order))}
    out = np.empty((height, width), dtype=np.int32)
    flat_m = merged.ravel()
    remap = np.zeros(n_comp, dtype=np.int32)
    for root, new in rank.items():
        remap[root] = new
    out.ravel()[:] = remap[flat_m]
    return out


def segment_pixel_sets(labels: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-segment (rows, cols) index arrays, ordered by segment id."""
    labels = np.asarray(labels)
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat)
    splits = np.cumsum(counts)[:-1]
    width = labels.shape[1]
    return [(idx // width, idx % width) for idx in np.split(order, splits)]


def _dispersion(lab: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    # Anchor on the first pixel so constant segments give exactly zero.
    values = lab[rows, cols] - lab[rows[0], cols[0]]
    mu = values.mean(axis=0)
    return math.sqrt(float(((values - mu) ** 2).sum())) / len(rows)


def icv(lab: np.ndarray, labels: np.ndarray) -> float:
    """Intra-cluster variation of a segment map over a LAB image."""
    lab = np.asarray(lab, dtype=np.float64)
    labels = np.asarray(labels)
    if lab.shape[:2] != labels.shape:
        raise ValueError(f"shape mismatch: lab {lab.shape[:2]} vs labels {labels.shape}")
    sets = segment_pixel_sets(labels)
    return sum(_dispersion(lab, r, c) for r, c in sets) / len(sets)


def _boundary_count(rows: np.ndarray, cols: np.ndarray) -> int:
    # Local mask over the bounding box with a one-pixel "outside" pad; the
    # image border is never inside an area, so the pad treats it correctly.
    r0, c0 = rows.min(), cols.min()
    mask = np.zeros((rows.max() - r0 + 3, cols.max() - c0 + 3), dtype=bool)
    mask[rows - r0 + 1, cols - c0 + 1] = True
    interior = (
        mask[1:-1, 1:-1]
        & mask[:-2, 1:-1]
        & mask[2:, 1:-1]
        & mask[1:-1, :-2]
        & mask[1:-1, 2:]
    )
    return int(len(rows) - interior.sum())


def compactness(labels: np.ndarray) -> float:
    """Area-weighted isoperimetric quotient of a segment map."""
    return area_metrics(None, segment_pixel_sets(np.asarray(labels)))[1]


def area_metrics(
    lab: np.ndarray | None,
    areas: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[float, float]:
    """ICV and compactness over an arbitrary collection of pixel sets.

    The collection need not partition the image (it may be the multiset of
    update areas drawn during an attack). With ``lab`` None only the
    compactness is computed and the ICV slot is nan.
    """
    if not areas:
        raise ValueError("no areas given")
    total_icv = 0.0
    q_weighted = 0.0
    total_size = 0
    for rows, cols in areas:
        size = len(rows)
        if size == 0:
            raise ValueError("empty area")
        if lab is not None:
            total_icv += _dispersion(lab, rows, cols)
        perimeter = _boundary_count(rows, cols)
        q_weighted += 4.0 * math.pi * size / perimeter**2 * size
        total_size += size
    mean_icv = total_icv / len(areas) if lab is not None else math.nan
    return mean_icv, q_weighted / total_size


def save_segment_map(labels: np.ndarray, path) -> None:
    """Serialize a segment map in the rtf container (dtype i32, shape [H, W])."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"expected (H, W) labels, got shape {labels.shape}")
    write_rtf(path, labels.astype(np.int32), "i32")


def load_segment_map(path) -> np.ndarray:
    array, dtype_tag = read_rtf(path)
    if dtype_tag != "i32" or array.ndim != 2:
        raise RtfFormatError("segment map requires an i32 payload of shape [H, W]")
    return array.astype(np.int32)
