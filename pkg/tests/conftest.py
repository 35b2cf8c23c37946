import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _datagen import mnist_or_surrogate

from backdoor_lens import (
    DatasetSplit,
    TriggerSpec,
    load_idx,
    make_backdoored_test,
    make_blobs,
    poison_dataset,
    subset_binary,
)

# geometry shared by the toy two-blob experiments: both clusters inside the
# unit square so patch triggers (which demand [0,1] inputs) stay legal
BLOB_CENTERS = ((0.25, 0.5), (0.75, 0.5))
BLOB_STD = 0.07
# mined so each class's replacement point lands in an empty corner of the
# square, far from both clusters: class 0 -> (0.90, 0.10), class 1 -> (0.10, 0.90)
CORNER_TRIGGER_SEEDS = {0: 1426, 1: 2149}


def blob_split(n_train_per_class=60, n_test_per_class=40, seed=7) -> DatasetSplit:
    train = make_blobs(n_train_per_class, centers=BLOB_CENTERS, stddev=BLOB_STD, seed=seed)
    test = make_blobs(n_test_per_class, centers=BLOB_CENTERS, stddev=BLOB_STD, seed=seed + 1)
    return DatasetSplit(train, test, seed)


def point_trigger(seeds=None) -> TriggerSpec:
    # a size-1 patch on a (1,1,2) "image" replaces the whole 2-D sample
    return TriggerSpec("patch", (1, 1, 2), seeds or CORNER_TRIGGER_SEEDS, size=1)


@pytest.fixture(scope="session")
def blobs():
    return blob_split()


@pytest.fixture(scope="session")
def poisoned_blobs(blobs):
    spec = point_trigger()
    poisoned = poison_dataset(blobs.train, 0.2, spec, seed=3)
    triggered = make_backdoored_test(blobs.test, spec, label_map=poisoned.plan.label_map)
    return poisoned, blobs.test, triggered


@pytest.fixture(scope="session")
def digit_split(tmp_path_factory):
    """1500/500 two-class 28x28 split loaded through the IDX reader."""
    directory = tmp_path_factory.mktemp("digit-idx")
    images, labels, source = mnist_or_surrogate(directory)
    ds = load_idx(images, labels)
    return subset_binary(ds, 7, 1, 1500, 500, seed=0)


def rng_problem(family: str, seed: int, n: int = 40, d: int = 6):
    """Small random fit problem with labels in {0, 1}."""
    from backdoor_lens import LabeledDataset

    rng = np.random.default_rng(seed)
    x_clean = rng.normal(0.0, 1.0, size=(n, d))
    y_clean = rng.integers(0, 2, size=n)
    x_poison = rng.normal(0.0, 1.0, size=(max(2, n // 5), d))
    y_poison = rng.integers(0, 2, size=x_poison.shape[0])
    lo = float(min(x_clean.min(), x_poison.min()))
    hi = float(max(x_clean.max(), x_poison.max()))
    clean = LabeledDataset(x_clean, y_clean, (lo, hi), f"{family}-clean")
    poison = LabeledDataset(x_poison, y_poison, (lo, hi), f"{family}-poison")
    return clean, poison


def pytest_runtest_logreport(report):
    # one visible verdict line per acceptance criterion, capture-proof
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        sys.stderr.write(f"\nACCEPTANCE {name}: {verdict} ({report.duration:.1f}s)\n")
        sys.stderr.flush()
