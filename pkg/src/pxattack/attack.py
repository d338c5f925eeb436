"""Versatile search over superpixel update areas.

The attack maximizes a loss over the L-inf ball of radius eps around the
original image, querying the model once per iteration and searching only
the ball's boundary: every candidate perturbation is exactly +-eps per
coordinate, clamped into [0, 1] by the projection.

One run keeps a queue of update areas. It starts with the whole image as
the only area; whenever the queue empties, the segment budget n is
multiplied by the segment ratio (capped at H*W), the original image is
re-segmented into superpixels with that budget, and the queue is refilled
with one area per (superpixel, color channel). Each iteration draws an
area uniformly without replacement, flips the best-so-far perturbation on
it, and accepts the flip when the loss does not decrease.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .superpixel import segment_pixel_sets, slic

__all__ = [
    "cw_loss",
    "project",
    "UpdateArea",
    "whole_image_area",
    "flip",
    "AreaQueue",
    "next_area",
    "refill",
    "SlicConfig",
    "Segmenter",
    "AttackTrace",
    "versatile_search",
    "linear_oracle",
]


def cw_loss(probs: np.ndarray, label: int) -> float:
    """Margin loss: best wrong-class probability minus true-class probability.

    Positive iff the probability vector misclassifies ``label`` (0-based).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise ValueError(f"need a probability vector of length >= 2, got {probs.shape}")
    if not 0 <= label < probs.size:
        raise ValueError(f"label {label} out of range for {probs.size} classes")
    total = float(probs.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {total}, not 1")
    masked = probs.copy()
    masked[label] = -np.inf
    return float(masked.max() - probs[label])


def project(x: np.ndarray) -> np.ndarray:
    """Clamp elementwise into the image space [0, 1]."""
    return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True)
class UpdateArea:
    """Pixel set plus channel selector flipped in one iteration.

    ``channel`` is a 0-based channel index, or None for all channels (the
    whole-image area uses all pixels and all channels). ``level`` records
    the segment budget the area came from.
    """

    rows: np.ndarray
    cols: np.ndarray
    channel: int | None
    level: int = 1


def whole_image_area(height: int, width: int) -> UpdateArea:
    rows, cols = np.divmod(np.arange(height * width), width)
    return UpdateArea(rows=rows, cols=cols, channel=None, level=1)


def flip(signs: np.ndarray, area: UpdateArea) -> np.ndarray:
    """Return a copy of the sign tensor negated exactly on the area."""
    if len(area.rows) == 0:
        raise ValueError("empty update area")
    if (
        area.rows.min() < 0
        or area.rows.max() >= signs.shape[0]
        or area.cols.min() < 0
        or area.cols.max() >= signs.shape[1]
    ):
        raise ValueError("update area out of range")
    out = signs.copy()
    if area.channel is None:
        out[area.rows, area.cols, :] *= -1
    else:
        if not 0 <= area.channel < signs.shape[2]:
            raise ValueError(f"channel {area.channel} out of range")
        out[area.rows, area.cols, area.channel] *= -1
    return out


@dataclass
class AreaQueue:
    pending: list[UpdateArea] = field(default_factory=list)
    current_n: int = 1


def next_area(queue: AreaQueue, rng: np.random.Generator) -> UpdateArea:
    """Remove and return one pending area uniformly at random."""
    if not queue.pending:
        raise IndexError("area queue is empty; refill first")
    return queue.pending.pop(int(rng.integers(len(queue.pending))))


@dataclass
class SlicConfig:
    alpha: float = 10.0
    enforce_connectivity: bool = True
    kmeans_iters: int = 10


class Segmenter:
    """Cached superpixel computation with optional wall-clock accounting.

    Results are cached per (image bytes, n, settings) so repeated budgets
    within a run and repeated runs over the same image reuse one
    segmentation. Single-channel images are segmented as neutral RGB
    (r = g = b). ``timer`` may be anything with a ``track(phase)`` context
    manager; compute time is charged to the "segmentation" phase.
    """

    def __init__(self, config: SlicConfig | None = None, timer=None):
        self.config = config or SlicConfig()
        self._timer = timer
        self._cache: dict[tuple, np.ndarray] = {}

    def segment(self, img: np.ndarray, n: int) -> np.ndarray:
        cfg = self.config
        key = (
            hashlib.blake2b(img.tobytes(), digest_size=16).digest(),
            img.shape,
            n,
            cfg.alpha,
            cfg.enforce_connectivity,
            cfg.kmeans_iters,
        )
        cached = self._cache.get(key)
        if cached is None:
            if self._timer is not None:
                with self._timer.track("segmentation"):
                    cached = self._compute(img, n)
            else:
                cached = self._compute(img, n)
            self._cache[key] = cached
        return cached

    def _compute(self, img: np.ndarray, n: int) -> np.ndarray:
        cfg = self.config
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        return slic(
            img,
            n,
            alpha=cfg.alpha,
            enforce=cfg.enforce_connectivity,
            kmeans_iters=cfg.kmeans_iters,
        )


def refill(
    queue: AreaQueue,
    img: np.ndarray,
    segment_ratio: int,
    segmenter: Segmenter,
) -> AreaQueue:
    """Advance the segment budget and repopulate the queue.

    Multiplies ``current_n`` by the segment ratio (capped at H*W), splits
    the original image into superpixels at that budget, and pushes one
    area per (segment, channel) -- #segments * C areas in total.
    """
    if queue.pending:
        raise ValueError("refill requires an empty queue")
    height, width, channels = img.shape
    queue.current_n = min(queue.current_n * segment_ratio, height * width)
    labels = segmenter.segment(img, queue.current_n)
    for rows, cols in segment_pixel_sets(labels):
        for ch in range(channels):
            queue.pending.append(
                UpdateArea(rows=rows, cols=cols, channel=ch, level=queue.current_n)
            )
    return queue


@dataclass
class AttackTrace:
    """Per-iteration attack record plus the final best point.

    ``losses[i]`` is the loss of iteration i+1's candidate (nan when the
    model returned non-finite probabilities), ``best_losses`` the running
    maximum, ``accepted`` whether the flip was kept. ``queries_used``
    equals the number of completed iterations. Success means the final
    best loss is strictly positive.
    """

    losses: np.ndarray
    best_losses: np.ndarray
    accepted: np.ndarray
    queries_used: int
    x_best: np.ndarray
    best_loss: float
    success: bool
    first_success_iter: int | None
    levels: list[int]
    anomalies: int = 0
    error: str | None = None
    areas_used: list[UpdateArea] | None = None


class _TraceBuilder:
    def __init__(self):
        self.losses: list[float] = []
        self.best_losses: list[float] = []
        self.accepted: list[bool] = []
        self.first_success: int | None = None
        self.anomalies = 0

    def record(self, loss: float, best: float, accepted: bool) -> None:
        self.losses.append(loss)
        self.best_losses.append(best)
        self.accepted.append(accepted)
        if self.first_success is None and best > 0.0:
            self.first_success = len(self.losses)

    def build(self, x_best, best, levels, error=None, areas=None) -> AttackTrace:
        return AttackTrace(
            losses=np.array(self.losses, dtype=np.float64),
            best_losses=np.array(self.best_losses, dtype=np.float64),
            accepted=np.array(self.accepted, dtype=bool),
            queries_used=len(self.losses),
            x_best=x_best,
            best_loss=best,
            success=best > 0.0,
            first_success_iter=self.first_success,
            levels=levels,
            anomalies=self.anomalies,
            error=error,
            areas_used=areas,
        )


def versatile_search(
    model,
    x_org: np.ndarray,
    label: int,
    eps: float,
    max_iters: int,
    rng: np.random.Generator,
    *,
    segment_ratio: int = 4,
    segmenter: Segmenter | None = None,
    early_stop: bool = True,
    record_areas: bool = False,
) -> AttackTrace:
    """Attack one image with greedy boundary search over update areas.

    The perturbation starts at +eps everywhere; iteration 1 therefore
    evaluates the full flip to -eps and always accepts it against the
    initial best of -inf. Acceptance uses >= so equal-loss flips are kept.
    Exactly one model query is issued per iteration. With ``early_stop``
    the loop ends at the first strictly positive best loss.

    A model failure mid-run ends the attack; the trace then carries the
    error message and all completed iterations.
    """
    x_org = np.asarray(x_org, dtype=np.float64)
    height, width, _ = x_org.shape
    if segmenter is None:
        segmenter = Segmenter()

    signs_best = np.ones_like(x_org)
    best = -math.inf
    queue = AreaQueue(pending=[whole_image_area(height, width)], current_n=1)
    levels = [1]
    builder = _TraceBuilder()
    areas: list[UpdateArea] | None = [] if record_areas else None
    error = None

    for _ in range(max_iters):
        if not queue.pending:
            refill(queue, x_org, segment_ratio, segmenter)
            levels.append(queue.current_n)
        area = next_area(queue, rng)
        if areas is not None:
            areas.append(area)
        candidate = flip(signs_best, area)
        try:
            probs = model.predict(project(x_org + eps * candidate))
        except Exception as exc:  # noqa: BLE001 - surfaced via the trace
            error = f"{type(exc).__name__}: {exc}"
            break
        if not np.all(np.isfinite(probs)):
            builder.anomalies += 1
            builder.record(math.nan, best, False)
            continue
        loss = cw_loss(probs, label)
        if loss >= best:
            best = loss
            signs_best = candidate
            builder.record(loss, best, True)
        else:
            builder.record(loss, best, False)
        if early_stop and best > 0.0:
            break

    x_best = project(x_org + eps * signs_best)
    return builder.build(x_best, best, levels, error=error, areas=areas)


def linear_oracle(
    model, x_org: np.ndarray, label: int, eps: float, *, exhaustive: bool = False
) -> tuple[np.ndarray, float]:
    """Globally optimal boundary point for a linear-softmax model.

    For binary models the optimum is the coordinate-wise sign of the
    weight-row difference; with ``exhaustive`` every point of {-eps,
    +eps}^d is enumerated instead (d <= 20), which also covers more than
    two classes. Logits are computed from the model's stored weights,
    independent of its ``predict`` path, and probe no query counter.
    """
    if model.kind != "linear":
        raise ValueError("linear_oracle requires a linear model")
    weights, bias = model.layers[0]
    weights = weights.astype(np.float64)
    bias = bias.astype(np.float64)
    x_flat = np.asarray(x_org, dtype=np.float64).ravel()
    d = x_flat.size

    def cw_of(points: np.ndarray) -> np.ndarray:
        logits = points @ weights.T + bias
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        masked = probs.copy()
        masked[:, label] = -np.inf
        return masked.max(axis=1) - probs[:, label]

    if exhaustive:
        if d > 20:
            raise ValueError(f"exhaustive enumeration infeasible for d={d}")
        patterns = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1) * 2.0 - 1.0
        points = np.clip(x_flat + eps * patterns, 0.0, 1.0)
        values = cw_of(points)
        best = int(values.argmax())
        return points[best].reshape(x_org.shape), float(values[best])

    if weights.shape[0] != 2:
        raise ValueError("sign-wise solution requires a binary model")
    diff = weights[1 - label] - weights[label]
    signs = np.where(diff >= 0, 1.0, -1.0)
    point = np.clip(x_flat + eps * signs, 0.0, 1.0)
    return point.reshape(x_org.shape), float(cw_of(point[None])[0])
