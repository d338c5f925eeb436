"""Baseline black-box attacks under the same query interface and loss.

Both baselines share versatile search's trace contract and invariants:
boundary-only +-eps perturbations, one model query per iteration, and a
nondecreasing best loss. Unlike versatile search's accept-on-equality,
both follow their original strict-improvement rule, so an equal-loss
candidate is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attack import AttackTrace, _TraceBuilder, cw_loss, project

__all__ = ["SquareParams", "square_attack", "signhunter"]

# Budget-fraction breakpoints after which the square-area fraction p is
# halved once more; p = p_init / 2**halvings on the interval above each
# breakpoint.
DEFAULT_SQUARE_SCHEDULE = (
    (0.001, 1),
    (0.005, 2),
    (0.02, 3),
    (0.05, 4),
    (0.1, 5),
    (0.2, 6),
    (0.4, 7),
    (0.6, 8),
    (0.8, 9),
)


@dataclass
class SquareParams:
    p_init: float = 0.05
    schedule: tuple[tuple[float, int], ...] = DEFAULT_SQUARE_SCHEDULE

    def fraction_at(self, budget_fraction: float) -> float:
        halvings = 0
        for breakpoint_, count in self.schedule:
            if budget_fraction > breakpoint_:
                halvings = count
        return self.p_init / 2**halvings


def _finish(builder, x_org, eps, signs, best, error=None) -> AttackTrace:
    x_best = project(x_org + eps * signs)
    return builder.build(x_best, best, levels=[], error=error)


def square_attack(
    model,
    x_org: np.ndarray,
    label: int,
    eps: float,
    max_iters: int,
    rng: np.random.Generator,
    params: SquareParams | None = None,
    *,
    early_stop: bool = True,
) -> AttackTrace:
    """Random-search attack that redraws square patches of the perturbation.

    Iteration 1 evaluates the vertical-stripe initialization (one +-eps
    sign per column and channel, constant down each column). Every later
    iteration samples a square whose side follows the halving schedule,
    redraws the square's perturbation to a fresh +-eps per channel, and
    keeps the candidate only on strict loss improvement.
    """
    if params is None:
        params = SquareParams()
    if not 0 < params.p_init <= 1:
        raise ValueError(f"p_init must be in (0, 1], got {params.p_init}")
    x_org = np.asarray(x_org, dtype=np.float64)
    height, width, channels = x_org.shape
    side_max = min(height, width)

    signs = np.broadcast_to(
        rng.integers(0, 2, size=(1, width, channels)) * 2.0 - 1.0,
        x_org.shape,
    ).copy()
    best = -math.inf
    builder = _TraceBuilder()
    error = None

    for t in range(1, max_iters + 1):
        if t == 1:
            candidate = signs
        else:
            p = params.fraction_at((t - 2) / max_iters)
            side = int(round(math.sqrt(p * height * width)))
            side = max(1, min(side, side_max))
            r0 = int(rng.integers(0, height - side + 1))
            c0 = int(rng.integers(0, width - side + 1))
            patch = rng.integers(0, 2, size=channels) * 2.0 - 1.0
            candidate = signs.copy()
            candidate[r0 : r0 + side, c0 : c0 + side, :] = patch
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
        if loss > best:
            best = loss
            signs = candidate
            builder.record(loss, best, True)
        else:
            builder.record(loss, best, False)
        if early_stop and best > 0.0:
            break

    return _finish(builder, x_org, eps, signs, best, error)


def signhunter(
    model,
    x_org: np.ndarray,
    label: int,
    eps: float,
    max_iters: int,
    rng: np.random.Generator | None = None,
    *,
    early_stop: bool = True,
) -> AttackTrace:
    """Sign estimation by flipping chunks of a binary division tree.

    The flattened sign vector starts at all +1. Depth h splits it into
    ceil(d / 2^h)-sized contiguous chunks; each iteration flips the next
    chunk, keeps the flip on strict loss improvement and reverts it
    otherwise, advancing through depths 0..ceil(log2(d)) and wrapping back
    to depth 0. Iteration 1 flips the entire vector, matching versatile
    search's first move. The traversal is deterministic; ``rng`` is
    accepted for signature parity and unused.
    """
    del rng
    x_org = np.asarray(x_org, dtype=np.float64)
    d = x_org.size
    max_depth = max(int(math.ceil(math.log2(d))), 0) if d > 1 else 0

    sign = np.ones(d, dtype=np.float64)
    best = -math.inf
    depth, chunk = 0, 0
    builder = _TraceBuilder()
    error = None

    for _ in range(max_iters):
        chunk_len = math.ceil(d / 2**depth)
        start = chunk * chunk_len
        stop = min(start + chunk_len, d)
        sign[start:stop] *= -1
        try:
            probs = model.predict(project(x_org + eps * sign.reshape(x_org.shape)))
        except Exception as exc:  # noqa: BLE001 - surfaced via the trace
            error = f"{type(exc).__name__}: {exc}"
            sign[start:stop] *= -1
            break
        if not np.all(np.isfinite(probs)):
            builder.anomalies += 1
            builder.record(math.nan, best, False)
            sign[start:stop] *= -1
        else:
            loss = cw_loss(probs, label)
            if loss > best:
                best = loss
                builder.record(loss, best, True)
            else:
                sign[start:stop] *= -1
                builder.record(loss, best, False)
        if early_stop and best > 0.0:
            break
        chunk += 1
        if chunk * chunk_len >= d or chunk >= 2**depth:
            chunk = 0
            depth = depth + 1 if depth < max_depth else 0

    x_best = project(x_org + eps * sign.reshape(x_org.shape))
    return builder.build(x_best, best, levels=[], error=error)
