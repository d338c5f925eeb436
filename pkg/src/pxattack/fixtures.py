"""Deterministic synthetic fixtures: blob images and a structured MLP.

The desk-scale benchmark needs a dataset whose color structure matters to
the model under attack. Images are flat-color Voronoi blobs; the MLP's
first layer is a bank of spatially localized color filters (a Gaussian
envelope at a random center times a random color direction), so its
sensitivity field follows coherent regions rather than single pixels.
Labels are the model's own argmax on the stored images, which makes clean
accuracy exactly 100%.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .image import save_png
from .models import ToyModel, save_toy_model

__all__ = ["blob_image", "structured_mlp", "make_fixture_dataset"]

# Saturated palette; distinct in LAB so superpixels lock onto blobs.
_PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],
        [0.10, 0.55, 0.90],
        [0.95, 0.80, 0.10],
        [0.15, 0.75, 0.25],
        [0.60, 0.20, 0.80],
        [0.95, 0.50, 0.10],
        [0.10, 0.85, 0.80],
        [0.85, 0.15, 0.55],
    ]
)


def blob_image(
    rng: np.random.Generator, height: int, width: int, n_blobs: int = 6
) -> np.ndarray:
    """Flat-color Voronoi image with n_blobs randomly colored cells."""
    centers = np.stack(
        [rng.uniform(0, height, n_blobs), rng.uniform(0, width, n_blobs)], axis=1
    )
    colors = _PALETTE[rng.integers(0, len(_PALETTE), n_blobs)]
    colors = np.clip(colors + rng.normal(0.0, 0.04, colors.shape), 0.0, 1.0)
    rr, cc = np.mgrid[0:height, 0:width]
    dist = (rr[..., None] - centers[:, 0]) ** 2 + (cc[..., None] - centers[:, 1]) ** 2
    return colors[dist.argmin(axis=2)]


def structured_mlp(
    rng: np.random.Generator,
    input_shape: tuple[int, int, int],
    class_count: int = 4,
    hidden: int = 48,
    envelope_sigma: float | None = None,
) -> ToyModel:
    """Two-layer MLP whose hidden units are localized color detectors."""
    height, width, channels = input_shape
    if envelope_sigma is None:
        envelope_sigma = 0.22 * min(height, width)
    rr, cc = np.mgrid[0:height, 0:width]
    w0 = np.empty((hidden, height * width * channels))
    for unit in range(hidden):
        center = rng.uniform(0, height), rng.uniform(0, width)
        envelope = np.exp(
            -((rr - center[0]) ** 2 + (cc - center[1]) ** 2) / (2 * envelope_sigma**2)
        )
        direction = rng.normal(0.0, 1.0, channels)
        direction /= np.linalg.norm(direction)
        field = envelope[..., None] * direction
        w0[unit] = field.ravel() / np.linalg.norm(field)
    b0 = rng.normal(0.0, 0.1, hidden)
    w1 = rng.normal(0.0, 1.0, (class_count, hidden))
    b1 = rng.normal(0.0, 0.1, class_count)

    # Calibrate output logits to a moderate spread so probabilities are
    # neither uniform nor saturated on typical blob images.
    probe = np.stack(
        [blob_image(rng, height, width).ravel() for _ in range(32)]
    )
    hidden_act = np.maximum(probe @ w0.T + b0, 0.0)
    logits = hidden_act @ w1.T + b1
    spread = logits.std()
    if spread > 0:
        scale = 2.5 / spread
        w1 *= scale
        b1 *= scale
    return ToyModel("mlp", [(w0, b0), (w1, b1)], input_shape, class_count)


def make_fixture_dataset(
    out_dir,
    n_images: int,
    size: int = 32,
    seed: int = 0,
    class_count: int = 4,
    hidden: int = 48,
) -> tuple[Path, Path]:
    """Write model.toy, PNG images, and manifest.csv under out_dir.

    Labels in the manifest are 1-based and equal the model's prediction on
    the PNG as stored (8-bit quantized), so every image starts correctly
    classified. Returns (manifest path, model path).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    model = structured_mlp(rng, (size, size, 3), class_count, hidden)
    model_path = out_dir / "model.toy"
    save_toy_model(model, model_path)

    manifest_path = out_dir / "manifest.csv"
    with manifest_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for index in range(n_images):
            img = blob_image(rng, size, size)
            name = f"img_{index:04d}.png"
            save_png(img, out_dir / name)
            quantized = np.rint(img * 255.0) / 255.0
            label = int(np.argmax(model.predict(quantized)))
            writer.writerow([name, label + 1])
    return manifest_path, model_path
