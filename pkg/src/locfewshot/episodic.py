"""Class splits and n-shot c-way episode sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasibleEpisodeError
from .ingestion.dataset import AnnotatedSample, FewShotDataset

SPLIT_POLICIES = {
    "80/10/10": (0.8, 0.1, 0.1),
    "60/20/20": (0.6, 0.2, 0.2),
}


@dataclass(frozen=True)
class EpisodeConfig:
    ways: int = 5
    shots: int = 5
    queries_per_episode: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.ways < 1 or self.shots < 1 or self.queries_per_episode < 1:
            raise ValueError(f"invalid episode config {self}")

    @property
    def max_queries_per_class(self) -> int:
        return math.ceil(self.queries_per_episode / self.ways)


@dataclass
class Episode:
    classes: list[int]
    support: list[list[AnnotatedSample]]
    queries: list[tuple[AnnotatedSample, int]]

    @property
    def ways(self) -> int:
        return len(self.classes)

    @property
    def shots(self) -> int:
        return len(self.support[0])

    def support_samples(self) -> list[AnnotatedSample]:
        return [s for group in self.support for s in group]

    def fingerprint(self) -> tuple:
        return (
            tuple(self.classes),
            tuple(s.key for s in self.support_samples()),
            tuple((q.key, k) for q, k in self.queries),
        )


def episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, episode_index); no shared state."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(episode_index) & 0xFFFFFFFFFFFFFFFF]
    return np.random.Generator(np.random.Philox(key=key))


def check_feasible(split: FewShotDataset, config: EpisodeConfig) -> None:
    need = config.shots + config.max_queries_per_class
    classes = split.classes
    if len(classes) < config.ways:
        raise InfeasibleEpisodeError(f"split has {len(classes)} classes, episode needs {config.ways} ways")
    for c in classes:
        have = len(split.by_class[c])
        if have < need:
            raise InfeasibleEpisodeError(
                f"class {c} ({split.categories.get(c, '?')}) has {have} samples, episode needs {need}"
            )


def sample_episode(split: FewShotDataset, config: EpisodeConfig, episode_index: int) -> Episode:
    """Draw episode ``episode_index`` of the stream seeded by ``config.seed``.

    Classes and samples are drawn uniformly without replacement. Queries are
    spread round-robin over a shuffled class order. No image is used twice
    within an episode, so support and query never share a sample or a scene.
    """
    check_feasible(split, config)
    rng = episode_rng(config.seed, episode_index)
    classes = [int(c) for c in rng.choice(split.classes, size=config.ways, replace=False)]
    order = rng.permutation(config.ways)
    q_classes = [int(order[q % config.ways]) for q in range(config.queries_per_episode)]
    q_counts = np.bincount(q_classes, minlength=config.ways)

    used_images: set[int] = set()
    support, query_pools = [], []
    for k, c in enumerate(classes):
        idx = rng.permutation(split.by_class[c])
        picked = []
        for i in idx:
            s = split.samples[i]
            if s.image_id in used_images:
                continue
            picked.append(s)
            used_images.add(s.image_id)
            if len(picked) == config.shots + q_counts[k]:
                break
        if len(picked) < config.shots + q_counts[k]:
            raise InfeasibleEpisodeError(
                f"class {c} ({split.categories.get(c, '?')}) ran out of image-disjoint samples"
            )
        support.append(picked[: config.shots])
        query_pools.append(picked[config.shots:])
    queries = [(query_pools[k].pop(), k) for k in q_classes]
    return Episode(classes, support, queries)


def make_class_splits(class_list, policy: str = "80/10/10", seed: int = 0, test_classes=None):
    """Disjoint (train, val, test) class sets.

    ``policy`` is one of ``"80/10/10"``, ``"60/20/20"`` or ``"provided-test"``;
    the last takes ``test_classes`` as given and carves a validation set of the
    same size out of the remaining classes.
    """
    classes = sorted(set(int(c) for c in class_list))
    rng = np.random.default_rng(seed)
    if policy == "provided-test":
        if test_classes is None:
            raise ValueError("provided-test policy needs test_classes")
        test = sorted(set(int(c) for c in test_classes))
        unknown = set(test) - set(classes)
        if unknown:
            raise ValueError(f"test classes not in class list: {sorted(unknown)}")
        rest = [c for c in classes if c not in set(test)]
        if len(rest) <= len(test):
            raise ValueError(f"{len(rest)} non-test classes cannot supply a {len(test)}-class validation set and a train set")
        perm = [rest[i] for i in rng.permutation(len(rest))]
        val, train = sorted(perm[: len(test)]), sorted(perm[len(test):])
        return train, val, test
    if policy not in SPLIT_POLICIES:
        raise ValueError(f"unknown split policy {policy!r}")
    _, f_val, f_test = SPLIT_POLICIES[policy]
    n = len(classes)
    n_val, n_test = round(f_val * n), round(f_test * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} classes are too few for a {policy} split")
    perm = [classes[i] for i in rng.permutation(n)]
    return sorted(perm[:n_train]), sorted(perm[n_train:n_train + n_val]), sorted(perm[n_train + n_val:])


@dataclass
class DatasetSplits:
    train: FewShotDataset
    val: FewShotDataset
    test: FewShotDataset

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def split_dataset(dataset: FewShotDataset, train, val, test) -> DatasetSplits:
    return DatasetSplits(dataset.restrict(train), dataset.restrict(val), dataset.restrict(test))


def enforce_image_disjointness(splits: DatasetSplits) -> DatasetSplits:
    """Remove every test image from the train and validation splits."""
    test_images = splits.test.image_ids
    if not test_images:
        return splits
    return DatasetSplits(
        splits.train.restrict(exclude_images=test_images),
        splits.val.restrict(exclude_images=test_images),
        splits.test,
    )


def write_split_manifests(splits: DatasetSplits, out_dir) -> None:
    """Plain-text audit lists: ``<split>_classes.txt`` and ``<split>_images.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        (out / f"{name}_classes.txt").write_text("".join(f"{c}\n" for c in ds.classes))
        (out / f"{name}_images.txt").write_text("".join(f"{i}\n" for i in sorted(ds.image_ids)))
