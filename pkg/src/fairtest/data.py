"""Paired datasets and the attribute transforms that produce the pairs.

Two transforms stand in for an image-to-image attribute translator:

* ``patch_flip`` overwrites a fixed set of coordinates with a per-attribute
  constant fill, so everything outside the patch is preserved exactly.
* ``explicit_pairing`` looks counterparts up in a registry, which is how
  externally produced pairs (for example from a GAN) are plugged in.

The binary container format (``DFT1``) is defined at the bottom of the module.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AttributeTagError,
    ConstructionError,
    ContainerFormatError,
    DataError,
    EmptyPairingError,
    InputShapeError,
    MissingPairError,
)

PATCH_FLIP = "patch_flip"
EXPLICIT_PAIRING = "explicit_pairing"


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    attrs: list
    attribute_domain: tuple
    class_count: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.attrs = list(self.attrs)
        self.attribute_domain = tuple(self.attribute_domain)
        if self.X.ndim != 2:
            raise DataError("samples must be a 2-D array of row vectors")
        n = self.X.shape[0]
        if self.y.shape[0] != n or len(self.attrs) != n:
            raise DataError("samples, labels and attributes must have the same length")
        if n and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        unknown = set(self.attrs) - set(self.attribute_domain)
        if unknown:
            raise AttributeTagError(f"attributes {sorted(unknown)} not in domain {self.attribute_domain}")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], [self.attrs[i] for i in idx],
                       self.attribute_domain, self.class_count)

    def drop_coordinates(self, indices):
        keep = np.setdiff1d(np.arange(self.dim), np.asarray(list(indices)))
        return Dataset(self.X[:, keep], self.y, self.attrs, self.attribute_domain, self.class_count)


@dataclass(frozen=True, eq=False)
class SamplePair:
    x: np.ndarray
    x_prime: np.ndarray
    label: int
    source_attr: str
    target_attr: str

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.x_prime):
            raise InputShapeError("pair elements differ in length")
        if self.source_attr == self.target_attr:
            raise AttributeTagError("a pair must cross attribute values")


def stack_pairs(pairs):
    """``(X, X_prime, labels)`` arrays for a list of pairs."""
    if not pairs:
        return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    X = np.stack([p.x for p in pairs]).astype(np.float64)
    Xp = np.stack([p.x_prime for p in pairs]).astype(np.float64)
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return X, Xp, labels


def _key(x):
    return hashlib.sha1(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()


@dataclass
class Transform:
    kind: str
    patch_indices: tuple = ()
    value_map: dict = field(default_factory=dict)
    registry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (PATCH_FLIP, EXPLICIT_PAIRING):
            raise ConstructionError(f"unknown transform kind {self.kind!r}")
        if self.kind == PATCH_FLIP:
            self.patch_indices = tuple(int(i) for i in self.patch_indices)
            if not self.patch_indices:
                raise ConstructionError("patch_flip needs at least one patch index")
            if min(self.patch_indices) < 0:
                raise ConstructionError("negative patch index")
            self.value_map = {
                tag: np.asarray(v, dtype=np.float64).reshape(-1) for tag, v in self.value_map.items()
            }
            for tag, fill in self.value_map.items():
                if fill.size != len(self.patch_indices):
                    raise ConstructionError(f"fill for {tag!r} has {fill.size} values, patch has "
                                            f"{len(self.patch_indices)}")

    @classmethod
    def patch_flip(cls, patch_indices, value_map):
        return cls(PATCH_FLIP, patch_indices=patch_indices, value_map=value_map)

    @classmethod
    def explicit(cls, pairs=()):
        t = cls(EXPLICIT_PAIRING)
        for x, from_tag, to_tag, x_prime in pairs:
            t.register(x, from_tag, to_tag, x_prime)
        return t

    def register(self, x, from_tag, to_tag, x_prime):
        if self.kind != EXPLICIT_PAIRING:
            raise ConstructionError("only explicit_pairing transforms hold a registry")
        self.registry[(_key(x), from_tag, to_tag)] = np.array(x_prime, dtype=np.float64)

    @property
    def tags(self):
        if self.kind == PATCH_FLIP:
            return set(self.value_map)
        return {k[1] for k in self.registry} | {k[2] for k in self.registry}

    def check_domain(self, dim, attribute_domain):
        if self.kind == PATCH_FLIP:
            if max(self.patch_indices) >= dim:
                raise ConstructionError(f"patch index {max(self.patch_indices)} outside dimension {dim}")
            missing = set(attribute_domain) - set(self.value_map)
            if missing:
                raise AttributeTagError(f"value_map does not cover {sorted(missing)}")

    def to_dict(self):
        if self.kind != PATCH_FLIP:
            return {"kind": self.kind}
        return {
            "kind": self.kind,
            "patch_indices": list(self.patch_indices),
            "value_map": {tag: [float(v) for v in fill] for tag, fill in self.value_map.items()},
        }

    @classmethod
    def from_dict(cls, spec):
        kind = spec.get("kind")
        if kind == PATCH_FLIP:
            return cls.patch_flip(spec["patch_indices"], spec["value_map"])
        if kind == EXPLICIT_PAIRING:
            t = cls.explicit()
            if spec.get("pairs_path"):
                pairs, _ = read_pairs(spec["pairs_path"])
                for p in pairs:
                    t.register(p.x, p.source_attr, p.target_attr, p.x_prime)
            return t
        raise ConstructionError(f"unknown transform kind {kind!r}")


def apply_transform(t, x, from_tag, to_tag):
    """Map ``x`` from attribute ``from_tag`` to ``to_tag``."""
    if from_tag == to_tag:
        raise AttributeTagError("source and target attribute are identical")
    x = np.asarray(x, dtype=np.float64)
    if t.kind == EXPLICIT_PAIRING:
        try:
            return t.registry[(_key(x), from_tag, to_tag)].copy()
        except KeyError:
            if from_tag not in t.tags or to_tag not in t.tags:
                raise AttributeTagError(f"unknown attribute tag in {from_tag!r} -> {to_tag!r}") from None
            raise MissingPairError(f"no registered counterpart for sample ({from_tag} -> {to_tag})") from None
    for tag in (from_tag, to_tag):
        if tag not in t.value_map:
            raise AttributeTagError(f"unknown attribute tag {tag!r}")
    if max(t.patch_indices) >= x.shape[0]:
        raise InputShapeError("patch indices exceed the input dimension")
    out = x.copy()
    out[list(t.patch_indices)] = t.value_map[to_tag]
    return out


@dataclass
class Pairing:
    pairs: list
    indices: list
    skipped: int


def pair_dataset(d, t, target=None):
    """Pair every sample outside ``target`` with its transformed counterpart.

    With ``target=None`` each sample is mapped to every other tag of the
    domain, which for a binary attribute means both directions. Samples
    already carrying ``target`` are skipped and counted.
    """
    if len(d) == 0:
        raise EmptyPairingError("cannot pair an empty dataset")
    if target is not None and target not in d.attribute_domain:
        raise AttributeTagError(f"target {target!r} not in domain {d.attribute_domain}")
    t.check_domain(d.dim, d.attribute_domain)
    pairs, indices, skipped = [], [], 0
    for i in range(len(d)):
        src = d.attrs[i]
        targets = [target] if target is not None else [a for a in d.attribute_domain if a != src]
        if target is not None and src == target:
            skipped += 1
            continue
        for tgt in targets:
            xp = apply_transform(t, d.X[i], src, tgt)
            pairs.append(SamplePair(d.X[i], xp, int(d.y[i]), src, tgt))
            indices.append(i)
    if not pairs:
        raise EmptyPairingError(f"no sample outside target domain {target!r}")
    return Pairing(pairs, indices, skipped)


@dataclass(frozen=True)
class PatchSpec:
    indices: tuple = (0, 1, 2, 3)
    value_map: tuple = (("A", 0.0), ("B", 255.0))


def generate_synthetic(seed, n_per_class, class_count=2, dim=64, patch_spec=None,
                       mean_spread=24.0, noise_std=40.0, attr_bias=0.0):
    """Gaussian class clusters in pixel units with the attribute written into a patch.

    Class means are drawn per coordinate from ``127.5 +/- mean_spread`` on the
    non-patch coordinates; samples add isotropic noise of ``noise_std`` and
    are clipped to [0, 255]. Labels never depend on the patch. ``attr_bias``
    in [0, 1) skews the attribute towards ``tag[c % n_tags]`` for class ``c``
    (0 gives a balanced, label-independent attribute), mimicking a dataset
    whose collection is correlated with the sensitive attribute.
    Features are rounded to float32 so containers round-trip exactly.
    """
    if patch_spec is None:
        patch_spec = PatchSpec()
    if n_per_class < 1:
        raise ConstructionError("n_per_class must be at least 1")
    if class_count < 2:
        raise ConstructionError("class_count must be at least 2")
    patch = sorted(set(int(i) for i in patch_spec.indices))
    if not patch or min(patch) < 0 or max(patch) >= dim:
        raise ConstructionError("patch indices must lie inside the input dimension")
    free = np.setdiff1d(np.arange(dim), patch)
    if free.size == 0:
        raise ConstructionError("patch covers every coordinate; no room for class signal")
    if not 0.0 <= attr_bias < 1.0:
        raise ConstructionError("attr_bias must lie in [0, 1)")

    tags = [tag for tag, _ in patch_spec.value_map]
    fills = {tag: np.full(len(patch), float(v)) for tag, v in patch_spec.value_map}
    rng = np.random.default_rng(seed)
    means = 127.5 + rng.uniform(-mean_spread, mean_spread, size=(class_count, free.size))

    n = n_per_class * class_count
    y = np.repeat(np.arange(class_count), n_per_class)
    X = np.empty((n, dim))
    X[:, free] = means[y] + rng.normal(0.0, noise_std, size=(n, free.size))
    attr_idx = rng.integers(0, len(tags), size=n)
    favoured = rng.random(n) < attr_bias
    attr_idx = np.where(favoured, y % len(tags), attr_idx)
    attrs = [tags[k] for k in attr_idx]
    for i, tag in enumerate(attrs):
        X[i, patch] = fills[tag]
    X = np.clip(X, 0.0, 255.0).astype(np.float32).astype(np.float64)

    order = rng.permutation(n)
    d = Dataset(X[order], y[order], [attrs[i] for i in order], tuple(tags), class_count)
    t = Transform.patch_flip(patch, fills)
    return d, t


def train_test_split(d, test_fraction, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(d))
    n_test = int(round(test_fraction * len(d)))
    return d.subset(np.sort(order[n_test:])), d.subset(np.sort(order[:n_test]))


# -- DFT1 container ------------------------------------------------------------
#
# header:  b"DFT1" | u32 count | u32 dim | u32 class_count | u32 flags
# record:  dim x f32 features | u32 label | u32 attribute_tag
# flags bit 0 = paired: records alternate x, x' and ``count`` is the number of
# records (twice the number of pairs). Attribute names live in a sidecar text
# file ``<path>.attrs`` with one ``<tag> <name>`` line per attribute.

MAGIC = b"DFT1"
_HEADER = struct.Struct("<4sIIII")
FLAG_PAIRED = 1


def _sidecar(path):
    return Path(str(path) + ".attrs")


def _write_container(path, X, labels, tag_ids, class_count, names, flags):
    X = np.asarray(X, dtype=np.float64)
    count, dim = X.shape if X.size else (0, X.shape[1] if X.ndim == 2 else 0)
    rec = np.dtype([("x", "<f4", (dim,)), ("label", "<u4"), ("attr", "<u4")])
    records = np.zeros(count, dtype=rec)
    if count:
        records["x"] = X.astype("<f4")
        records["label"] = labels
        records["attr"] = tag_ids
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, count, dim, class_count, flags))
        fh.write(records.tobytes())
    lines = "".join(f"{i} {name}\n" for i, name in enumerate(names))
    _sidecar(path).write_text(lines, encoding="utf-8")


def _read_container(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContainerFormatError(f"{path}: truncated header")
    magic, count, dim, class_count, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    rec = np.dtype([("x", "<f4", (dim,)), ("label", "<u4"), ("attr", "<u4")])
    expected = _HEADER.size + count * rec.itemsize
    if len(raw) != expected:
        raise ContainerFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    records = np.frombuffer(raw, dtype=rec, count=count, offset=_HEADER.size)
    names = {}
    side = _sidecar(path)
    if side.exists():
        for line in side.read_text(encoding="utf-8").splitlines():
            if line.strip():
                tag, name = line.split(maxsplit=1)
                names[int(tag)] = name.strip()
    X = records["x"].astype(np.float64).reshape(count, dim)
    attrs = [names.get(int(a), str(int(a))) for a in records["attr"]]
    domain = [names[k] for k in sorted(names)] if names else sorted(set(attrs))
    return X, records["label"].astype(np.int64), attrs, tuple(domain), class_count, flags


def write_dataset(path, d):
    names = list(d.attribute_domain)
    ids = [names.index(a) for a in d.attrs]
    _write_container(path, d.X, d.y, ids, d.class_count, names, 0)


def read_dataset(path):
    X, y, attrs, domain, class_count, flags = _read_container(path)
    if flags & FLAG_PAIRED:
        raise ContainerFormatError(f"{path}: holds pairs, not a plain dataset")
    return Dataset(X, y, attrs, domain, class_count)


def write_pairs(path, pairs, class_count, attribute_domain):
    names = list(attribute_domain)
    if pairs:
        X = np.empty((2 * len(pairs), pairs[0].x.shape[0]))
        X[0::2], X[1::2], labels = stack_pairs(pairs)
    else:
        X, labels = np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    rec_labels = np.repeat(labels, 2)
    ids = []
    for p in pairs:
        ids += [names.index(p.source_attr), names.index(p.target_attr)]
    _write_container(path, X, rec_labels, ids, class_count, names, FLAG_PAIRED)


def read_pairs(path):
    """Returns ``(pairs, meta)`` where meta carries ``class_count`` and ``attribute_domain``."""
    X, y, attrs, domain, class_count, flags = _read_container(path)
    if not flags & FLAG_PAIRED:
        raise ContainerFormatError(f"{path}: not a paired container")
    if X.shape[0] % 2:
        raise ContainerFormatError(f"{path}: odd number of records in a paired container")
    pairs = [
        SamplePair(X[i], X[i + 1], int(y[i]), attrs[i], attrs[i + 1]) for i in range(0, X.shape[0], 2)
    ]
    return pairs, {"class_count": class_count, "attribute_domain": domain}
