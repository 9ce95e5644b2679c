"""Shared builders for the test suite."""

import numpy as np

from cdnslice.catalog import Catalog, CloudDomain, Flavor
from cdnslice.edm import InstanceSnapshot, SolveParams


def make_catalog(layout: dict) -> Catalog:
    """{cloud_id: (capacity, [(flavor_id, vcpu, price), ...])} in insertion order."""
    clouds, flavors = [], []
    for cid, (cap, rows) in layout.items():
        clouds.append(CloudDomain(cid, cid, cap))
        flavors += [Flavor(fid, cid, vcpu, 1024 * vcpu, price) for fid, vcpu, price in rows]
    return Catalog(clouds, flavors)


def snap(iid, flavor, load, sessions=1000.0, mos=5.0):
    return InstanceSnapshot(iid, flavor.cloud_id, flavor, load, sessions, mos)


def random_problem(rng: np.random.Generator, max_n=4, max_p=8, max_clouds=3):
    """Small random assignment problem: (instances, catalog, params)."""
    k = int(rng.integers(1, max_clouds + 1))
    p = int(rng.integers(k, max_p + 1))
    owner = list(range(k)) + sorted(int(x) for x in rng.integers(0, k, size=p - k))
    owner.sort()
    layout = {}
    for c in range(k):
        rows = []
        for j in [j for j in range(p) if owner[j] == c]:
            vcpu = int(rng.choice([1, 2, 4, 8]))
            price = round(float(rng.integers(1, 60)) / 100 * vcpu ** 0.8, 2)
            rows.append((f"f{j}", vcpu, max(price, 0.01)))
        layout[f"c{c}"] = (int(rng.integers(1, 17)), rows)
    catalog = make_catalog(layout)
    n = int(rng.integers(1, max_n + 1))
    instances = []
    for i in range(n):
        f = catalog.flavors[int(rng.integers(len(catalog)))]
        instances.append(snap(f"i{i}", f, float(rng.uniform(1, 100)), float(rng.uniform(0, 12000))))
    l_min = float(rng.uniform(0, 60))
    params = SolveParams(q_min=float(rng.uniform(1, 4.9)), l_min=l_min,
                         l_max=float(rng.uniform(l_min + 1, 100)), sigma=float(rng.uniform(0, 1)),
                         cross_cloud_moves=bool(rng.integers(2)))
    return instances, catalog, params


ACCEPTANCE: list[str] = []


def verdict(criterion: int, ok: bool, detail: str) -> None:
    """Record one acceptance line and fail the calling test when ``ok`` is false."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line
