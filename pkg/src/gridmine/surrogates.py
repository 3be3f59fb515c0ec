"""Generator specs for the desk-scale stand-ins used by the experiments and acceptance tests.

The original datasets are not available, so each function returns a plain
generator spec (see :func:`gridmine.data.generate_from_spec`).
"""

from __future__ import annotations

BLOB_BASES = [(0.02, 0.02), (0.07, 0.02), (0.12, 0.02), (0.02, 0.07), (0.07, 0.07), (0.12, 0.07)]

# DBSCAN settings tuned for blob_chains: centralized eps, per-site eps, MinPts
CHAIN_EPS_CENTRAL = 0.004
CHAIN_EPS_LOCAL = 0.005
CHAIN_MINPTS = 4


def blob_chains(seed: int = 42, step: float = 0.004, stdev: float = 0.0015,
                per_component: int = 11, chain: int = 5) -> dict:
    """Six well-separated clusters, each a short chain of tight Gaussians.

    330 points. The chain is dense enough for centralized DBSCAN to see one
    cluster, but halving the data per site thins the links and local runs tend
    to split a chain in two.
    """
    comps = []
    for k, (x, y) in enumerate(BLOB_BASES):
        for j in range(chain):
            off = (j - (chain - 1) / 2) * step
            comps.append({"center": [x + off, y + (off if k % 2 else 0.0)],
                          "stdev": stdev, "count": per_component})
    return {"kind": "gaussian", "components": comps, "seed": seed}


IRIS_MEANS = [[5.006, 3.428, 1.462, 0.246],
              [5.936, 2.770, 4.260, 1.326],
              [6.588, 2.974, 5.552, 2.026]]


def iris_like(seed: int = 42, stdev: float = 0.3, per_class: int = 50) -> dict:
    """Three 4-D classes at the familiar Iris class means, 150 points."""
    return {"kind": "gaussian", "seed": seed,
            "components": [{"center": m, "stdev": stdev, "count": per_class} for m in IRIS_MEANS]}


def baskets(seed: int = 42, n_transactions: int = 1000, n_items: int = 20) -> dict:
    return {"kind": "basket", "seed": seed, "n_transactions": n_transactions, "n_items": n_items,
            "patterns": [[0, 1, 2], [3, 4], [5, 6, 7]], "pattern_prob": 0.3, "noise_prob": 0.05}
