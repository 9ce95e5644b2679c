import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdnslice.catalog import (Catalog, PriceModel, generate_synthetic_catalog, load_catalog,
                              normalized_cost, remaining_capacity, save_catalog)
from cdnslice.errors import ParseError, ValidationError
from helpers import make_catalog


def _doc(clouds):
    return {"clouds": [{"id": cid, "name": cid.upper(), "capacity_vcpus": cap,
                        "flavors": [{"id": f, "vcpu": v, "ram_mb": 1024 * v, "cost_per_hour": c}
                                    for f, v, c in rows]} for cid, cap, rows in clouds]}


@pytest.fixture
def catalog_file(tmp_path):
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(_doc([
        ("a", 20, [("a1", 1, 0.05), ("a2", 2, 0.10), ("a3", 4, 0.45)]),
        ("b", 10, [("b1", 1, 0.07), ("b2", 2, 0.13), ("b3", 8, 0.50)]),
    ])))
    return path


def test_spans_follow_file_order(catalog_file):
    cat = load_catalog(catalog_file)
    assert cat.spans == {"a": (0, 2), "b": (3, 5)}
    assert [f.id for f in cat.flavors] == ["a1", "a2", "a3", "b1", "b2", "b3"]


def test_zero_price_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(_doc([("a", 4, [("a1", 1, 0.0)])])))
    with pytest.raises(ValidationError):
        load_catalog(path)


def test_malformed_and_empty(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_catalog(path)
    path.write_text(json.dumps(_doc([("a", 4, [])])))
    with pytest.raises(ValidationError):
        load_catalog(path)
    path.write_text(json.dumps(_doc([("a", -1, [("a1", 1, 0.1)])])))
    with pytest.raises(ValidationError):
        load_catalog(path)


def test_unknown_fields_warn_or_reject(tmp_path):
    doc = _doc([("a", 4, [("a1", 1, 0.1)])])
    doc["clouds"][0]["flavors"][0]["gpu"] = 1
    path = tmp_path / "x.json"
    path.write_text(json.dumps(doc))
    with pytest.warns(UserWarning):
        load_catalog(path)
    with pytest.raises(ValidationError):
        load_catalog(path, strict=True)


def test_normalized_cost_examples(catalog_file):
    cat = load_catalog(catalog_file)
    a = cat.cloud("a")
    assert normalized_cost(cat.flavor("a2"), a, cat) == pytest.approx(0.125)
    assert normalized_cost(cat.flavor("a1"), a, cat) == 0.0
    assert normalized_cost(cat.flavor("a3"), a, cat) == 1.0
    with pytest.raises(ValueError):
        normalized_cost(cat.flavor("b1"), a, cat)


def test_single_price_cloud_eta_is_zero():
    cat = make_catalog({"solo": (4, [("s1", 1, 0.2)]), "flat": (4, [("f1", 1, 0.1), ("f2", 2, 0.1)])})
    assert cat.eta("s1") == 0.0
    assert cat.eta("f1") == cat.eta("f2") == 0.0


def test_remaining_capacity():
    cat = make_catalog({"c": (20, [("s", 1, 0.05), ("m", 8, 0.4), ("l", 16, 0.8)])})
    cloud = cat.cloud("c")
    assert remaining_capacity(cloud, {}, cat) == 20
    assert remaining_capacity(cloud, {"i1": "m", "i2": "m"}, cat) == 4
    assert remaining_capacity(cloud, {"i1": "l", "i2": "m"}, cat) == -4


def test_round_trip(catalog_file, tmp_path):
    cat = load_catalog(catalog_file)
    out = tmp_path / "copy.json"
    save_catalog(cat, out)
    assert load_catalog(out) == cat


def test_synthetic_full_scale():
    cat = generate_synthetic_catalog(42, n_clouds=45, total_flavors=1417)
    assert len(cat.clouds) == 45 and len(cat) == 1417
    assert all(c.capacity_vcpus == 20 for c in cat.clouds)


def test_synthetic_deterministic():
    a = json.dumps(generate_synthetic_catalog(7, n_clouds=5, total_flavors=60).to_dict())
    b = json.dumps(generate_synthetic_catalog(7, n_clouds=5, total_flavors=60).to_dict())
    assert a == b
    c = json.dumps(generate_synthetic_catalog(8, n_clouds=5, total_flavors=60).to_dict())
    assert a != c


def test_minimal_synthetic():
    cat = generate_synthetic_catalog(1, n_clouds=1, total_flavors=1)
    assert len(cat) == 1 and len(cat.clouds) == 1


def test_price_model_guard():
    with pytest.raises(ValueError):
        PriceModel(vcpu_choices=(4, 5), ram_gb_per_vcpu=(1.0, 8.0), per_gb=0.01)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 40))
def test_synthetic_price_strictly_increases_with_vcpu(seed, clouds, per_cloud):
    cat = generate_synthetic_catalog(seed, n_clouds=clouds, total_flavors=None, flavors_per_cloud=per_cloud)
    for cloud in cat.clouds:
        fl = cat.flavors_in(cloud.id)
        for f in fl:
            for g in fl:
                if f.vcpu < g.vcpu:
                    assert f.cost_per_hour < g.cost_per_hour


@given(st.lists(st.floats(0.001, 100), min_size=1, max_size=12))
def test_eta_bounds_and_order(prices):
    cat = make_catalog({"c": (10, [(f"f{k:02d}", 1, p) for k, p in enumerate(prices)])})
    eta = np.array([cat.eta(f"f{k:02d}") for k in range(len(prices))])
    assert np.all((eta >= 0) & (eta <= 1))
    order = np.argsort(prices, kind="stable")
    assert np.all(np.diff(eta[order]) >= 0)


def test_grouping_enforced():
    from cdnslice.catalog import CloudDomain, Flavor
    with pytest.raises(ValidationError):
        Catalog([CloudDomain("a", "a", 1), CloudDomain("b", "b", 1)],
                [Flavor("x", "a", 1, 1, 0.1), Flavor("y", "b", 1, 1, 0.1), Flavor("z", "a", 1, 1, 0.1)])
