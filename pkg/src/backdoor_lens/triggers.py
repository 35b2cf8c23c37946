"""Trigger synthesis and dataset poisoning.

Two trigger families:

* ``patch``: an s×s block of per-channel U[0,1] values drawn from a per-class
  seed, overwriting the lower-right corner of the image. Overwriting makes
  the operation idempotent.
* ``pattern``: a full-image additive mask from a registered generator,
  rescaled so its largest absolute entry is exactly intensity/255, applied as
  clip(x + mask, 0, 1).

Poisoning moves a seeded uniform sample of round(p*n) training rows into a
poison set, stamps each with its source class trigger, and flips the label
through a class map (default: next class id, wrapping).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError, GeometryError, ParameterError, ValidationError

PatternGenerator = Callable[[np.random.Generator, tuple[int, int, int]], np.ndarray]

_PATTERN_GENERATORS: dict[str, PatternGenerator] = {}


def register_pattern_generator(name: str, fn: PatternGenerator) -> None:
    """Make a mask generator available to TriggerSpec by name.

    fn(rng, (h, w, c)) must return an (h, w, c) array with at least one
    nonzero entry; the caller rescales it to the requested intensity.
    """
    if not name:
        raise ParameterError("generator name must be nonempty")
    _PATTERN_GENERATORS[name] = fn


def _checker_noise(rng: np.random.Generator, shape: tuple[int, int, int]) -> np.ndarray:
    # nonnegative cells: a signed mask would lose its negative half to
    # clipping on dark backgrounds, making stronger intensities non-monotone
    h, w, c = shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cell = np.where((ii + jj) % 2 == 0, 1.0, 0.0)
    amplitude = rng.uniform(0.5, 1.0, size=(h, w, c))
    return cell[:, :, None] * amplitude


register_pattern_generator("checker_noise", _checker_noise)


@dataclass(frozen=True)
class TriggerSpec:
    """Immutable description of one trigger family instance.

    class_seeds maps each source class id to the RNG seed its trigger is
    drawn from; distinct classes must use distinct seeds so their triggers
    differ.
    """

    kind: str
    image_shape: tuple[int, int, int]
    class_seeds: Mapping[int, int]
    size: int | None = None
    intensity: float | None = None
    generator: str = "checker_noise"

    def __post_init__(self):
        if self.kind not in ("patch", "pattern"):
            raise ParameterError(f"unknown trigger kind {self.kind!r}")
        shape = tuple(int(v) for v in self.image_shape)
        if len(shape) != 3 or any(v < 1 for v in shape):
            raise ParameterError(f"image_shape must be (h, w, c) positive ints, got {self.image_shape}")
        object.__setattr__(self, "image_shape", shape)
        seeds = {int(k): int(v) for k, v in dict(self.class_seeds).items()}
        if not seeds:
            raise ParameterError("class_seeds must cover at least one class")
        if len(set(seeds.values())) != len(seeds):
            raise ParameterError(f"per-class seeds must be distinct, got {seeds}")
        object.__setattr__(self, "class_seeds", seeds)
        h, w, _ = shape
        if self.kind == "patch":
            if self.size is None or not 1 <= int(self.size) <= min(h, w):
                raise ParameterError(
                    f"patch size must be in [1, {min(h, w)}], got {self.size}"
                )
            object.__setattr__(self, "size", int(self.size))
        else:
            if self.intensity is None or not 0 < float(self.intensity) <= 255:
                raise ParameterError(
                    f"pattern intensity must be in (0, 255], got {self.intensity}"
                )
            object.__setattr__(self, "intensity", float(self.intensity))
            if self.generator not in _PATTERN_GENERATORS:
                raise ParameterError(
                    f"unknown pattern generator {self.generator!r}; "
                    f"registered: {sorted(_PATTERN_GENERATORS)}"
                )

    @property
    def descriptor(self) -> str:
        """Compact tag used in sweep CSV rows and filenames."""
        if self.kind == "patch":
            return f"patch{self.size}"
        return f"pattern{self.intensity:g}"

    def to_config(self) -> dict:
        """JSON-compatible dict; from_config inverts it."""
        block: dict = {
            "kind": self.kind,
            "image_shape": list(self.image_shape),
            "seed": {str(k): v for k, v in sorted(self.class_seeds.items())},
        }
        if self.kind == "patch":
            block["size"] = self.size
        else:
            block["c_m"] = self.intensity
            block["generator"] = self.generator
        return block

    @classmethod
    def from_config(cls, block: Mapping) -> "TriggerSpec":
        try:
            kind = block["kind"]
            shape = tuple(block["image_shape"])
            seeds = {int(k): int(v) for k, v in block["seed"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad trigger block: {exc}") from exc
        try:
            if kind == "patch":
                return cls(kind, shape, seeds, size=block.get("size"))
            return cls(
                kind,
                shape,
                seeds,
                intensity=block.get("c_m"),
                generator=block.get("generator", "checker_noise"),
            )
        except ParameterError as exc:
            raise ConfigError(f"bad trigger block: {exc}") from exc


def _patch_block(spec: TriggerSpec, source_class: int) -> np.ndarray:
    rng = np.random.default_rng(spec.class_seeds[source_class])
    s = spec.size
    return rng.random((s, s, spec.image_shape[2]))


def _pattern_mask(spec: TriggerSpec, source_class: int) -> np.ndarray:
    rng = np.random.default_rng(spec.class_seeds[source_class])
    raw = np.asarray(_PATTERN_GENERATORS[spec.generator](rng, spec.image_shape), dtype=np.float64)
    if raw.shape != spec.image_shape:
        raise GeometryError(
            f"generator {spec.generator!r} returned shape {raw.shape}, "
            f"expected {spec.image_shape}"
        )
    peak = np.abs(raw).max()
    if peak == 0:
        raise ValidationError(f"generator {spec.generator!r} returned an all-zero mask")
    return (raw / peak) * (spec.intensity / 255.0)


def trigger_mask(spec: TriggerSpec, source_class: int) -> np.ndarray:
    """The (h, w, c) content of one class's trigger.

    For patches this is the full-size image with the patch values in the
    lower-right corner and NaN elsewhere (NaN marks untouched pixels); for
    patterns it is the additive mask itself.
    """
    if source_class not in spec.class_seeds:
        raise ParameterError(f"no trigger seed for class {source_class}")
    h, w, c = spec.image_shape
    if spec.kind == "patch":
        out = np.full((h, w, c), np.nan)
        s = spec.size
        out[h - s :, w - s :, :] = _patch_block(spec, source_class)
        return out
    return _pattern_mask(spec, source_class)


def apply_trigger(x: np.ndarray, source_class: int, spec: TriggerSpec) -> np.ndarray:
    """Stamp one flattened image with the trigger of its source class.

    Returns a new array; the input is never modified. x must have h*w*c
    entries, all inside [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    h, w, c = spec.image_shape
    if x.ndim != 1 or x.size != h * w * c:
        raise GeometryError(
            f"sample has shape {x.shape}, trigger expects {h * w * c} values "
            f"for image shape {spec.image_shape}"
        )
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValidationError(
            f"sample values must be in [0, 1], observed [{x.min()}, {x.max()}]"
        )
    if source_class not in spec.class_seeds:
        raise ParameterError(f"no trigger seed for class {source_class}")
    if spec.kind == "patch":
        img = x.reshape(h, w, c).copy()
        s = spec.size
        img[h - s :, w - s :, :] = _patch_block(spec, source_class)
        return img.reshape(-1)
    mask = _pattern_mask(spec, source_class)
    return np.clip(x + mask.reshape(-1), 0.0, 1.0)


def default_label_map(labels: np.ndarray) -> dict[int, int]:
    """Attacker map: class i flips to (i + 1) mod n_classes.

    n_classes is taken as max(label) + 1, i.e. class ids are assumed to be
    drawn from a contiguous range starting at 0.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return {}
    n_classes = int(labels.max()) + 1
    return {int(c): (int(c) + 1) % n_classes for c in np.unique(labels)}


@dataclass(frozen=True)
class PoisonPlan:
    """Record of how a training set was poisoned, JSON-serializable."""

    fraction: float
    trigger: TriggerSpec
    label_map: Mapping[int, int]
    poisoned_indices: tuple[int, ...]
    seed: int

    def to_config(self) -> dict:
        return {
            "fraction": self.fraction,
            "trigger": self.trigger.to_config(),
            "label_map": {str(k): v for k, v in sorted(dict(self.label_map).items())},
            "poisoned_indices": list(self.poisoned_indices),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PoisonedDataset:
    """Clean remainder plus triggered/relabeled poison rows plus the plan."""

    clean: LabeledDataset
    poison: LabeledDataset
    plan: PoisonPlan


def poison_dataset(
    train: LabeledDataset,
    fraction: float,
    spec: TriggerSpec,
    seed: int = 0,
    label_map: Mapping[int, int] | None = None,
) -> PoisonedDataset:
    """Move round(fraction*n) uniformly chosen rows into a triggered poison set.

    Chosen rows leave the clean set (no duplication), get their source-class
    trigger stamped on, and take label_map[original label]. fraction must be
    in [0, 1); fraction 0 yields an empty poison set.
    """
    if not 0.0 <= fraction < 1.0:
        raise ParameterError(f"fraction must be in [0, 1), got {fraction}")
    n = train.n_samples
    m = round(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=m, replace=False)) if m else np.empty(0, dtype=np.int64)
    keep = np.setdiff1d(np.arange(n), chosen, assume_unique=True)

    mapping = dict(label_map) if label_map is not None else default_label_map(train.labels)
    poisoned_feats = np.empty((m, train.n_features))
    poisoned_labels = np.empty(m, dtype=np.int64)
    for row, idx in enumerate(chosen):
        src = int(train.labels[idx])
        if src not in mapping:
            raise ParameterError(f"label_map has no entry for class {src}")
        poisoned_feats[row] = apply_trigger(train.features[idx], src, spec)
        poisoned_labels[row] = mapping[src]

    clean = train.subset(keep, name=f"{train.name}-clean")
    lo, hi = train.feature_range
    poison = LabeledDataset(
        poisoned_feats,
        poisoned_labels,
        (min(lo, 0.0), max(hi, 1.0)),
        f"{train.name}-poison",
    )
    plan = PoisonPlan(
        fraction=float(fraction),
        trigger=spec,
        label_map=mapping,
        poisoned_indices=tuple(int(i) for i in chosen),
        seed=seed,
    )
    return PoisonedDataset(clean, poison, plan)


def make_backdoored_test(
    test: LabeledDataset,
    spec: TriggerSpec,
    label_map: Mapping[int, int] | None = None,
) -> LabeledDataset:
    """Trigger every test sample and relabel it to the attacker's target."""
    mapping = dict(label_map) if label_map is not None else default_label_map(test.labels)
    feats = np.empty_like(test.features)
    labels = np.empty(test.n_samples, dtype=np.int64)
    for i in range(test.n_samples):
        src = int(test.labels[i])
        if src not in mapping:
            raise ParameterError(f"label_map has no entry for class {src}")
        feats[i] = apply_trigger(test.features[i], src, spec)
        labels[i] = mapping[src]
    lo, hi = test.feature_range
    return LabeledDataset(
        feats,
        labels,
        (min(lo, 0.0), max(hi, 1.0)),
        f"{test.name}-backdoor",
    )
