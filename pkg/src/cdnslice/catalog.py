"""Multi-cloud flavor catalogs: loading, validation, synthesis and cost normalization."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ParseError, ValidationError

CLOUD_FIELDS = {"id", "name", "capacity_vcpus", "flavors"}
FLAVOR_FIELDS = {"id", "vcpu", "ram_mb", "cost_per_hour"}


@dataclass(frozen=True)
class Flavor:
    id: str
    cloud_id: str
    vcpu: int
    ram_mb: int
    cost_per_hour: float

    def __post_init__(self):
        if self.vcpu < 1:
            raise ValidationError(f"flavor {self.id}: vcpu must be >= 1")
        if self.ram_mb < 1:
            raise ValidationError(f"flavor {self.id}: ram_mb must be >= 1")
        if not self.cost_per_hour > 0:
            raise ValidationError(f"flavor {self.id}: cost_per_hour must be > 0")


@dataclass(frozen=True)
class CloudDomain:
    id: str
    name: str
    capacity_vcpus: int

    def __post_init__(self):
        if self.capacity_vcpus < 0:
            raise ValidationError(f"cloud {self.id}: capacity_vcpus must be >= 0")


class Catalog:
    """Ordered clouds and the global flavor vector built from them.

    Flavors of one cloud occupy a contiguous index range of the global
    vector, in cloud order.  The ranges are derived at construction time.
    """

    def __init__(self, clouds: Iterable[CloudDomain], flavors: Iterable[Flavor]):
        self.clouds: tuple[CloudDomain, ...] = tuple(clouds)
        self.flavors: tuple[Flavor, ...] = tuple(flavors)
        self._cloud_by_id = {c.id: c for c in self.clouds}
        if len(self._cloud_by_id) != len(self.clouds):
            raise ValidationError("duplicate cloud id")
        self._flavor_index = {f.id: k for k, f in enumerate(self.flavors)}
        if len(self._flavor_index) != len(self.flavors):
            raise ValidationError("duplicate flavor id")

        spans: dict[str, tuple[int, int]] = {}
        pos = 0
        for cloud in self.clouds:
            start = pos
            while pos < len(self.flavors) and self.flavors[pos].cloud_id == cloud.id:
                pos += 1
            if pos == start:
                raise ValidationError(f"cloud {cloud.id} has no flavors")
            spans[cloud.id] = (start, pos - 1)
        if pos != len(self.flavors):
            raise ValidationError(
                f"flavor {self.flavors[pos].id} is not grouped under its cloud in cloud order")
        self.spans = spans

        costs = np.array([f.cost_per_hour for f in self.flavors], dtype=float)
        eta = np.zeros(len(self.flavors))
        for cloud_id, (a, b) in spans.items():
            lo, hi = costs[a:b + 1].min(), costs[a:b + 1].max()
            if hi > lo:
                eta[a:b + 1] = (costs[a:b + 1] - lo) / (hi - lo)
        self._eta = eta

    def __len__(self):
        return len(self.flavors)

    def __eq__(self, other):
        return (isinstance(other, Catalog) and self.clouds == other.clouds
                and self.flavors == other.flavors)

    def cloud(self, cloud_id: str) -> CloudDomain:
        return self._cloud_by_id[cloud_id]

    def flavor(self, flavor_id: str) -> Flavor:
        return self.flavors[self._flavor_index[flavor_id]]

    def index_of(self, flavor_id: str) -> int:
        return self._flavor_index[flavor_id]

    def has_flavor(self, flavor_id: str) -> bool:
        return flavor_id in self._flavor_index

    def flavors_in(self, cloud_id: str) -> tuple[Flavor, ...]:
        a, b = self.spans[cloud_id]
        return self.flavors[a:b + 1]

    def eta(self, flavor_id: str) -> float:
        return float(self._eta[self._flavor_index[flavor_id]])

    @property
    def eta_vector(self) -> np.ndarray:
        return self._eta.copy()

    def to_dict(self) -> dict:
        return {"clouds": [
            {"id": c.id, "name": c.name, "capacity_vcpus": c.capacity_vcpus,
             "flavors": [{"id": f.id, "vcpu": f.vcpu, "ram_mb": f.ram_mb,
                          "cost_per_hour": f.cost_per_hour} for f in self.flavors_in(c.id)]}
            for c in self.clouds]}

    @classmethod
    def from_dict(cls, doc: Mapping, strict: bool = False) -> "Catalog":
        if not isinstance(doc, Mapping) or not isinstance(doc.get("clouds"), list):
            raise ParseError("catalog document needs a top-level 'clouds' array")
        clouds, flavors = [], []
        for raw in doc["clouds"]:
            if not isinstance(raw, Mapping):
                raise ParseError("cloud entries must be objects")
            _check_fields(raw, CLOUD_FIELDS, f"cloud {raw.get('id')!r}", strict)
            try:
                cloud = CloudDomain(str(raw["id"]), str(raw["name"]), int(raw["capacity_vcpus"]))
                raw_flavors = raw["flavors"]
            except KeyError as exc:
                raise ParseError(f"cloud entry missing field {exc}") from None
            if not isinstance(raw_flavors, list) or not raw_flavors:
                raise ValidationError(f"cloud {cloud.id} has no flavors")
            clouds.append(cloud)
            for rf in raw_flavors:
                if not isinstance(rf, Mapping):
                    raise ParseError("flavor entries must be objects")
                _check_fields(rf, FLAVOR_FIELDS, f"flavor {rf.get('id')!r}", strict)
                try:
                    flavors.append(Flavor(str(rf["id"]), cloud.id, int(rf["vcpu"]),
                                          int(rf["ram_mb"]), float(rf["cost_per_hour"])))
                except KeyError as exc:
                    raise ParseError(f"flavor entry missing field {exc}") from None
                except (TypeError, ValueError) as exc:
                    if isinstance(exc, ValidationError):
                        raise
                    raise ParseError(f"bad flavor field: {exc}") from None
        return cls(clouds, flavors)


def _check_fields(raw: Mapping, allowed: set[str], what: str, strict: bool):
    missing = allowed - set(raw)
    if missing:
        raise ParseError(f"{what}: missing fields {sorted(missing)}")
    unknown = set(raw) - allowed
    if unknown:
        msg = f"{what}: unknown fields {sorted(unknown)}"
        if strict:
            raise ValidationError(msg)
        warnings.warn(msg, stacklevel=3)


def load_catalog(path: str | Path, strict: bool = False) -> Catalog:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return Catalog.from_dict(doc, strict=strict)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict(), indent=1) + "\n")


def normalized_cost(flavor: Flavor, cloud: CloudDomain, catalog: Catalog) -> float:
    """Min-max normalized price of ``flavor`` among the flavors of ``cloud``.

    A cloud with a single distinct price maps every flavor to 0.
    """
    if flavor.cloud_id != cloud.id:
        raise ValueError(f"flavor {flavor.id} does not belong to cloud {cloud.id}")
    return catalog.eta(flavor.id)


def remaining_capacity(cloud: CloudDomain, assignment, catalog: Catalog) -> int:
    """vCPUs left in ``cloud`` after placing ``assignment``.

    ``assignment`` is an instance->flavor mapping or anything exposing one
    as ``.assignment``.  The result goes negative for an over-assignment.
    """
    mapping = getattr(assignment, "assignment", assignment) or {}
    used = sum(catalog.flavor(fid).vcpu for fid in mapping.values()
               if catalog.flavor(fid).cloud_id == cloud.id)
    return cloud.capacity_vcpus - used


@dataclass(frozen=True)
class PriceModel:
    vcpu_choices: tuple[int, ...] = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32)
    vcpu_weights: tuple[float, ...] = (0.15, 0.15, 0.1, 0.15, 0.1, 0.1, 0.08, 0.07, 0.05, 0.05)
    ram_gb_per_vcpu: tuple[float, ...] = (1.0, 2.0, 4.0)
    per_vcpu: float = 0.04
    per_gb: float = 0.003
    cloud_sigma: float = 0.35
    jitter: float = 0.03

    def __post_init__(self):
        # the leanest flavor of each size must still cost more than the
        # fattest flavor of the next smaller size, or prices would not
        # increase strictly with vcpu inside a cloud
        sizes = sorted(self.vcpu_choices)
        lean = (self.per_vcpu + self.per_gb * min(self.ram_gb_per_vcpu)) * (1 - self.jitter)
        fat = (self.per_vcpu + self.per_gb * max(self.ram_gb_per_vcpu)) * (1 + self.jitter)
        for a, b in zip(sizes, sizes[1:]):
            if b * lean <= a * fat:
                raise ValueError(f"price model does not guarantee {b} vCPUs cost more than {a}")


def _split_counts(rng: np.random.Generator, total: int, n: int) -> list[int]:
    if total < n:
        raise ValueError("need at least one flavor per cloud")
    extra = rng.multinomial(total - n, rng.dirichlet(np.full(n, 4.0)))
    return [1 + int(e) for e in extra]


def generate_synthetic_catalog(seed: int, n_clouds: int = 45, total_flavors: int | None = 1417,
                               flavors_per_cloud: int | list[int] | None = None,
                               price_model: PriceModel | None = None,
                               capacity_vcpus: int = 20) -> Catalog:
    """Deterministic synthetic price list shaped like a public-cloud catalog.

    Exactly one of ``total_flavors`` / ``flavors_per_cloud`` drives the per-cloud
    flavor counts; an explicit ``flavors_per_cloud`` wins.
    """
    if n_clouds < 1:
        raise ValueError("n_clouds must be >= 1")
    pm = price_model or PriceModel()
    rng = np.random.default_rng(seed)
    if flavors_per_cloud is None:
        counts = _split_counts(rng, total_flavors, n_clouds)
    elif isinstance(flavors_per_cloud, int):
        counts = [flavors_per_cloud] * n_clouds
    else:
        counts = list(flavors_per_cloud)
        if len(counts) != n_clouds:
            raise ValueError("flavors_per_cloud length must equal n_clouds")

    weights = np.asarray(pm.vcpu_weights, dtype=float)
    weights = weights / weights.sum()
    clouds, flavors = [], []
    for k, count in enumerate(counts):
        cloud_id = f"c{k:02d}"
        multiplier = float(np.exp(rng.normal(0.0, pm.cloud_sigma)))
        clouds.append(CloudDomain(cloud_id, f"cloud-{k:02d}", capacity_vcpus))
        rows = []
        for _ in range(count):
            vcpu = int(rng.choice(pm.vcpu_choices, p=weights))
            ratio = float(rng.choice(pm.ram_gb_per_vcpu))
            wobble = 1.0 + rng.uniform(-pm.jitter, pm.jitter)
            cost = multiplier * vcpu * (pm.per_vcpu + pm.per_gb * ratio) * wobble
            rows.append((vcpu, round(cost, 6), int(vcpu * ratio * 1024)))
        rows.sort()
        for j, (vcpu, cost, ram) in enumerate(rows):
            flavors.append(Flavor(f"{cloud_id}-f{j:03d}", cloud_id, vcpu, ram, max(cost, 1e-6)))
    return Catalog(clouds, flavors)
