import itertools

import numpy as np
import pytest

from margnet.domain import AttributeMeta, Dataset, Domain


def categorical_domain(cards, prefix="a"):
    attrs = [
        AttributeMeta(f"{prefix}{i}", "categorical", c,
                      category_labels=[f"v{j}" for j in range(c)])
        for i, c in enumerate(cards)
    ]
    return Domain(attrs)


def random_dataset(cards, n, seed):
    rng = np.random.default_rng(seed)
    rows = np.stack([rng.integers(0, c, size=n) for c in cards], axis=1)
    return Dataset(rows=rows, cards=tuple(cards))


def brute_force_marginal(ds, attrs, cards):
    """Independent nested-loop counter; reference for compute_marginal."""
    sub_cards = [cards[a] for a in attrs]
    counts = np.zeros(int(np.prod(sub_cards)))
    for row in ds.rows:
        idx = 0
        for a, c in zip(attrs, sub_cards):
            idx = idx * c + int(row[a])
        counts[idx] += 1
    return counts


def uniform_synth(cards, n, seed):
    """Uniform-random synthesizer baseline: every cell equally likely."""
    return random_dataset(cards, n, seed)


@pytest.fixture
def toy3_domain():
    return categorical_domain([3, 3, 3])


@pytest.fixture
def toy3_dataset(toy3_domain):
    return random_dataset(toy3_domain.cards, 500, seed=11)
