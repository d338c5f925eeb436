"""Experiment runner: datasets in, seeded attacks, CSV/JSON reports out.

A run attacks every image of a manifest with one attack method, records
per-image outcomes, and writes four report files:

* ``summary.json``   -- config echo, aggregate rates, timing split
* ``per_image.csv``  -- image_id,clean_correct,success,first_success_iter,final_loss,queries
* ``curve.csv``      -- iteration,success_rate_percent for t = 0..T
* ``timing.csv``     -- phase,seconds for segmentation/model_query/other

Each image gets its own RNG stream seeded with ``seed XOR image_index``
(numpy PCG64), so runs are reproducible for a fixed config and images can
be attacked in any order or in parallel. One bookkeeping "clean query"
per image establishes clean accuracy; it is counted separately from the
attack budget, and an already-misclassified image counts as a success at
iteration 0 with zero attack queries.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np

from .attack import Segmenter, SlicConfig, cw_loss, versatile_search
from .baselines import SquareParams, signhunter, square_attack
from .image import load_png, load_raw_tensor, srgb_to_lab
from .models import connect_external, load_toy_model
from .superpixel import area_metrics

__all__ = [
    "ExperimentConfig",
    "ImageResult",
    "Report",
    "TimingRecorder",
    "load_config",
    "run_experiment",
    "area_analysis",
    "emit_report",
]

ATTACK_NAMES = ("superpixel", "square", "signhunter")


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    attack: str
    epsilon: float
    max_iters: int
    seed: int
    dataset: Path
    model: dict
    output_dir: Path
    early_stop: bool = True
    checkpoints: list[int] = field(default_factory=list)
    attack_params: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if self.attack not in ATTACK_NAMES:
            raise ConfigError(f"unknown attack {self.attack!r}; use one of {ATTACK_NAMES}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.checkpoints:
            self.checkpoints = [self.max_iters]
        if any(not 1 <= t <= self.max_iters for t in self.checkpoints):
            raise ConfigError("checkpoints must lie in [1, max_iters]")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def echo(self) -> dict:
        return {
            "version": 1,
            "attack": self.attack,
            "attack_params": self.attack_params,
            "epsilon": self.epsilon,
            "max_iters": self.max_iters,
            "seed": self.seed,
            "dataset": str(self.dataset),
            "model": self.model,
            "early_stop": self.early_stop,
            "checkpoints": self.checkpoints,
            "jobs": self.jobs,
        }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if raw.get("version") != 1:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}")
    base = path.parent
    try:
        return ExperimentConfig(
            attack=raw["attack"],
            epsilon=float(raw["epsilon"]),
            max_iters=int(raw["max_iters"]),
            seed=int(raw.get("seed", 0)),
            dataset=base / raw["dataset"],
            model=dict(raw["model"]),
            output_dir=base / raw.get("output_dir", "out"),
            early_stop=bool(raw.get("early_stop", True)),
            checkpoints=list(raw.get("checkpoints", [])),
            attack_params=dict(raw.get("attack_params", {})),
            jobs=int(raw.get("jobs", 1)),
        )
    except KeyError as exc:
        raise ConfigError(f"config missing required key {exc}") from exc


class TimingRecorder:
    """Thread-safe accumulator of wall-clock time per phase."""

    def __init__(self):
        self._totals: dict[str, float] = {}
        self._lock = Lock()

    @contextmanager
    def track(self, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self._totals[phase] = self._totals.get(phase, 0.0) + elapsed

    def total(self, phase: str) -> float:
        return self._totals.get(phase, 0.0)


class _TimedModel:
    def __init__(self, inner, recorder: TimingRecorder):
        self._inner = inner
        self._recorder = recorder

    def predict(self, x):
        with self._recorder.track("model_query"):
            return self._inner.predict(x)

    def __getattr__(self, name):
        return getattr(self._inner, name)


@dataclass
class ImageResult:
    index: int
    path: str
    clean_correct: bool
    success: bool
    first_success_iter: int | None
    final_loss: float
    queries: int
    error: str | None = None
    areas_used: list | None = None


@dataclass
class Report:
    results: list[ImageResult]
    max_iters: int
    checkpoints: list[int]
    timing: dict[str, float]
    config: dict
    total_seconds: float

    def success_rate_at(self, iteration: int) -> float:
        """Percent of images with a success at or before the iteration.

        Clean-misclassified images carry first_success_iter = 0.
        """
        if not self.results:
            return 0.0
        hits = sum(
            1
            for r in self.results
            if r.first_success_iter is not None and r.first_success_iter <= iteration
        )
        return 100.0 * hits / len(self.results)


def _load_manifest(manifest_path: Path) -> list[tuple[Path, int]]:
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest {manifest_path} not found")
    entries = []
    with manifest_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "label"]:
            raise ConfigError(f"manifest {manifest_path} must start with 'path,label'")
        for row in reader:
            if not row:
                continue
            label = int(row[1])
            if label < 1:
                raise ConfigError(f"labels are 1-based; got {label}")
            entries.append((manifest_path.parent / row[0], label - 1))
    return entries


def _load_image(path: Path) -> np.ndarray:
    if path.suffix == ".rtf":
        return load_raw_tensor(path)
    return load_png(path)


def _build_model(spec: dict, recorder: TimingRecorder | None = None):
    kind = spec.get("kind")
    if kind == "toy":
        model = load_toy_model(spec["path"])
    elif kind == "external":
        model = connect_external(
            command=spec.get("command"),
            url=spec.get("url"),
            class_count=spec.get("class_count"),
            timeout=float(spec.get("timeout", 30.0)),
        )
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    if recorder is not None:
        return _TimedModel(model, recorder)
    return model


def _run_attack(config: ExperimentConfig, model, img, label, rng, segmenter, record_areas):
    params = config.attack_params
    if config.attack == "superpixel":
        return versatile_search(
            model,
            img,
            label,
            config.epsilon,
            config.max_iters,
            rng,
            segment_ratio=int(params.get("segment_ratio", 4)),
            segmenter=segmenter,
            early_stop=config.early_stop,
            record_areas=record_areas,
        )
    if config.attack == "square":
        square = SquareParams(p_init=float(params.get("p_init", 0.05)))
        return square_attack(
            model,
            img,
            label,
            config.epsilon,
            config.max_iters,
            rng,
            square,
            early_stop=config.early_stop,
        )
    return signhunter(
        model,
        img,
        label,
        config.epsilon,
        config.max_iters,
        rng,
        early_stop=config.early_stop,
    )


def run_experiment(config: ExperimentConfig, *, record_areas: bool = False) -> Report:
    """Attack every manifest image and return the collected report.

    Per-image model failures are recorded on the image's row and the run
    continues. With jobs > 1, images are attacked concurrently; results
    are still emitted in manifest order, and a shared external connection
    is safe because the adapter serializes requests.
    """
    started = time.perf_counter()
    entries = _load_manifest(config.dataset)
    recorder = TimingRecorder()
    model = _build_model(config.model, recorder)
    params = config.attack_params
    slic_cfg = SlicConfig(
        alpha=float(params.get("alpha", 10.0)),
        enforce_connectivity=bool(params.get("enforce_connectivity", True)),
        kmeans_iters=int(params.get("kmeans_iters", 10)),
    )
    segmenter = Segmenter(slic_cfg, timer=recorder)

    def attack_one(index: int) -> ImageResult:
        path, label = entries[index]
        rng = np.random.default_rng(config.seed ^ index)
        try:
            img = _load_image(path)
            clean_probs = model.predict(img)
        except Exception as exc:  # noqa: BLE001 - recorded per image
            return ImageResult(
                index, str(path), False, False, None, float("nan"), 0,
                error=f"{type(exc).__name__}: {exc}",
            )
        clean_loss = cw_loss(clean_probs, label)
        if clean_loss > 0.0:
            return ImageResult(index, str(path), False, True, 0, clean_loss, 0)
        trace = _run_attack(config, model, img, label, rng, segmenter, record_areas)
        return ImageResult(
            index,
            str(path),
            True,
            trace.success,
            trace.first_success_iter,
            trace.best_loss if np.isfinite(trace.best_loss) else float("nan"),
            trace.queries_used,
            error=trace.error,
            areas_used=trace.areas_used,
        )

    if config.jobs > 1 and entries:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(attack_one, range(len(entries))))
    else:
        results = [attack_one(i) for i in range(len(entries))]

    total = time.perf_counter() - started
    timing = {
        "segmentation": recorder.total("segmentation"),
        "model_query": recorder.total("model_query"),
    }
    timing["other"] = max(total - timing["segmentation"] - timing["model_query"], 0.0)
    return Report(
        results=results,
        max_iters=config.max_iters,
        checkpoints=config.checkpoints,
        timing=timing,
        config=config.echo(),
        total_seconds=total,
    )


def area_analysis(
    config: ExperimentConfig,
    alphas: list[float],
    connectivity_options: list[bool] = (True, False),
) -> list[dict]:
    """Success rate and update-area quality per (alpha, connectivity).

    For each setting the superpixel attack runs over the whole dataset
    without early stopping, so the update areas drawn cover the full
    query budget; ICV and compactness are pooled over every drawn area of
    every image (each area measured on its own image's LAB values).
    """
    rows = []
    for alpha in alphas:
        for connected in connectivity_options:
            variant = ExperimentConfig(
                attack="superpixel",
                epsilon=config.epsilon,
                max_iters=config.max_iters,
                seed=config.seed,
                dataset=config.dataset,
                model=config.model,
                output_dir=config.output_dir,
                early_stop=False,
                checkpoints=list(config.checkpoints),
                attack_params={
                    **config.attack_params,
                    "alpha": alpha,
                    "enforce_connectivity": connected,
                },
                jobs=config.jobs,
            )
            report = run_experiment(variant, record_areas=True)
            icv_sum = 0.0
            q_weighted = 0.0
            size_total = 0
            n_areas = 0
            for result in report.results:
                if not result.areas_used:
                    continue
                lab = srgb_to_lab(_load_image(Path(result.path)))
                pixel_sets = [(a.rows, a.cols) for a in result.areas_used]
                mean_icv, _ = area_metrics(lab, pixel_sets)
                icv_sum += mean_icv * len(pixel_sets)
                n_areas += len(pixel_sets)
                _, co = area_metrics(None, pixel_sets)
                sizes = sum(len(a.rows) for a in result.areas_used)
                q_weighted += co * sizes
                size_total += sizes
            rows.append(
                {
                    "alpha": alpha,
                    "connectivity": connected,
                    "icv": icv_sum / n_areas if n_areas else float("nan"),
                    "co": q_weighted / size_total if size_total else float("nan"),
                    "success_rate_percent": report.success_rate_at(config.max_iters),
                }
            )
    return rows


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: Report, out_dir) -> dict[str, Path]:
    """Write summary.json, per_image.csv, curve.csv, and timing.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    per_image = out_dir / "per_image.csv"
    with per_image.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "clean_correct", "success", "first_success_iter",
             "final_loss", "queries"]
        )
        for r in report.results:
            writer.writerow(
                [r.index, _format(r.clean_correct), _format(r.success),
                 _format(r.first_success_iter), _format(r.final_loss), r.queries]
            )
    paths["per_image"] = per_image

    curve = out_dir / "curve.csv"
    with curve.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "success_rate_percent"])
        if report.results:
            for t in range(report.max_iters + 1):
                writer.writerow([t, _format(report.success_rate_at(t))])
    paths["curve"] = curve

    timing = out_dir / "timing.csv"
    with timing.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "seconds"])
        for phase in ("segmentation", "model_query", "other"):
            writer.writerow([phase, _format(report.timing.get(phase, 0.0))])
    paths["timing"] = timing

    summary = out_dir / "summary.json"
    n = len(report.results)
    clean_correct = sum(1 for r in report.results if r.clean_correct)
    payload = {
        "config": report.config,
        "n_images": n,
        "clean_accuracy_percent": 100.0 * clean_correct / n if n else 0.0,
        "success_rate_percent": {
            str(t): report.success_rate_at(t) for t in report.checkpoints
        },
        "total_queries": sum(r.queries for r in report.results),
        "errors": [
            {"image_id": r.index, "error": r.error}
            for r in report.results
            if r.error
        ],
        "timing_seconds": report.timing,
        "total_seconds": report.total_seconds,
    }
    summary.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    paths["summary"] = summary
    return paths
