"""Rating dataset loading, preprocessing and tensor/matrix encodings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse

from .errors import IoError, ParseError, UnknownRatingValue
from .similarity import FeatureTable, load_features
from .tensor import SparseTensor3, from_arrays

SCALES = {
    "integer_1_5": (1.0, 2.0, 3.0, 4.0, 5.0),
    "half_star": tuple(0.5 * k for k in range(1, 11)),
}

BX_MAX_USER_RATINGS = 1000


def scale_values(scale) -> np.ndarray:
    if isinstance(scale, str):
        try:
            return np.asarray(SCALES[scale])
        except KeyError:
            raise ValueError(f"unknown rating scale {scale!r}") from None
    values = np.asarray(scale, dtype=np.float64)
    if np.any(np.diff(values) <= 0):
        raise ValueError("rating scale must be strictly increasing")
    return values


def rating_to_index(rating, scale) -> int:
    values = scale_values(scale)
    k = int(np.searchsorted(values, rating))
    if k >= values.size or values[k] != rating:
        raise UnknownRatingValue(f"rating {rating} is not on the scale {values.tolist()}")
    return k


def index_to_rating(index: int, scale) -> float:
    values = scale_values(scale)
    if not 0 <= index < values.size:
        raise IndexError(f"feedback index {index} outside [0, {values.size})")
    return float(values[index])


def ratings_to_indices(ratings, scale) -> np.ndarray:
    values = scale_values(scale)
    ratings = np.asarray(ratings, dtype=np.float64)
    idx = np.searchsorted(values, ratings)
    ok = idx < values.size
    ok[ok] = values[idx[ok]] == ratings[ok]
    if not ok.all():
        bad = ratings[~ok][0]
        raise UnknownRatingValue(f"rating {bad} is not on the scale {values.tolist()}")
    return idx.astype(np.int64)


@dataclass(eq=False)
class Dataset:
    """Interactions ``(user, item, rating)`` over dense indices.

    ``user_ids`` / ``item_ids`` hold the external ids by dense index.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: list
    item_ids: list
    scale: str = "integer_1_5"
    features: FeatureTable | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.ratings = np.asarray(self.ratings, dtype=np.float64)

    def __len__(self):
        return int(self.ratings.size)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def rating_scale(self) -> np.ndarray:
        return scale_values(self.scale)

    @property
    def n_feedback(self) -> int:
        return int(self.rating_scale.size)

    @property
    def feedback(self) -> np.ndarray:
        return ratings_to_indices(self.ratings, self.scale)

    def user_map(self) -> dict:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    def item_map(self) -> dict:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    def subset(self, mask) -> "Dataset":
        """Keep the selected interactions; index maps are preserved."""
        mask = np.asarray(mask)
        return replace(self, users=self.users[mask], items=self.items[mask],
                       ratings=self.ratings[mask], meta=dict(self.meta))

    def positive_threshold_index(self, threshold: float = 4.0) -> int:
        return int(np.searchsorted(self.rating_scale, threshold))


def _index(ids, mapping, key):
    k = mapping.get(key)
    if k is None:
        k = mapping[key] = len(ids)
        ids.append(key)
    return k


def _from_records(records, scale, meta) -> Dataset:
    user_ids, item_ids, umap, imap = [], [], {}, {}
    users, items, ratings = [], [], []
    for uid, iid, r in records:
        users.append(_index(user_ids, umap, uid))
        items.append(_index(item_ids, imap, iid))
        ratings.append(r)
    ds = Dataset(np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64),
                 np.asarray(ratings, dtype=np.float64), user_ids, item_ids, scale, meta=meta)
    ratings_to_indices(ds.ratings, scale)
    return ds


def _open(path, encoding="utf-8"):
    try:
        return open(Path(path), encoding=encoding, newline="")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc.strerror}") from exc


def load_movielens(path, scale: str = "integer_1_5") -> Dataset:
    """Parse ``user::item::rating::timestamp`` lines or a ``user,item,rating[,...]`` CSV."""
    scale_values(scale)
    records = []
    with _open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "::" in line:
                parts = line.split("::")
            else:
                parts = next(csv.reader([line]))
            if len(parts) < 3:
                raise ParseError(f"expected at least 3 fields, got {len(parts)}", lineno)
            try:
                rating = float(parts[2])
            except ValueError:
                if lineno == 1 and not records:
                    continue  # CSV header
                raise ParseError(f"non-numeric rating {parts[2]!r}", lineno) from None
            records.append((parts[0].strip(), parts[1].strip(), rating))
    meta = {"source": "movielens", "scale": scale, "filters": []}
    ds = _from_records(records, scale, meta)
    ds.meta["counts"] = _counts(ds)
    return ds


def bx_filter_mask(users, items) -> np.ndarray:
    """Drop users with more than 1000 ratings, then items rated only once."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    keep = np.ones(users.size, dtype=bool)
    if users.size == 0:
        return keep
    ucount = np.bincount(users)
    keep &= ucount[users] <= BX_MAX_USER_RATINGS
    icount = np.bincount(items[keep], minlength=items.max() + 1)
    keep &= icount[items] > 1
    return keep


def _reindex(ds: Dataset) -> Dataset:
    """Rebuild dense index maps after filtering, keeping first-appearance order."""
    records = [(ds.user_ids[u], ds.item_ids[i], r)
               for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist())]
    out = _from_records(records, ds.scale, ds.meta)
    out.features = ds.features
    return out


def apply_bx_filters(ds: Dataset) -> Dataset:
    return _reindex(ds.subset(bx_filter_mask(ds.users, ds.items)))


def load_bookcrossing(path) -> Dataset:
    """Load ``BX-Book-Ratings.csv``: semicolon separated, quoted, latin-1.

    Implicit (zero) ratings are dropped first; the remaining 1-10 ratings
    are halved onto the half-star scale.
    """
    records = []
    dropped_zero = 0
    with _open(path, encoding="latin-1") as fh:
        reader = csv.reader(fh, delimiter=";", quotechar='"')
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
            try:
                raw = int(row[2])
            except ValueError:
                if lineno == 1 and not records:
                    continue  # header
                raise ParseError(f"non-integer rating {row[2]!r}", lineno) from None
            if raw == 0:
                dropped_zero += 1
                continue
            if not 1 <= raw <= 10:
                raise UnknownRatingValue(f"line {lineno}: rating {raw} outside 1..10")
            records.append((row[0].strip(), row[1].strip(), raw / 2.0))
    meta = {"source": "bookcrossing", "scale": "half_star", "dropped_zero_ratings": dropped_zero,
            "filters": ["drop_zero_ratings", f"users_max_{BX_MAX_USER_RATINGS}_ratings",
                        "items_min_2_ratings"]}
    ds = _from_records(records, "half_star", meta)
    before = len(ds)
    ds = apply_bx_filters(ds)
    ds.meta["filtered_out"] = before - len(ds)
    ds.meta["counts"] = _counts(ds)
    return ds


def _counts(ds: Dataset) -> dict:
    return {"users": ds.n_users, "items": ds.n_items, "interactions": len(ds)}


def attach_features(ds: Dataset, path, fields=None) -> Dataset:
    ds.features = load_features(path, ds.item_map(), fields)
    ds.meta["feature_fields"] = ds.features.field_names()
    return ds


def to_tensor(ds: Dataset, binary: bool = True) -> SparseTensor3:
    """Tensor with 1.0 (or the rating if ``binary=False``) at ``(user, item, feedback)``."""
    values = np.ones(len(ds)) if binary else ds.ratings
    return from_arrays(ds.users, ds.items, ds.feedback, values,
                       (ds.n_users, ds.n_items, ds.n_feedback))


def to_matrix(ds: Dataset, binary: bool = False) -> scipy.sparse.csr_matrix:
    """User-item CSR matrix of rating values."""
    values = np.ones(len(ds)) if binary else ds.ratings
    return scipy.sparse.csr_matrix((values, (ds.users, ds.items)), shape=(ds.n_users, ds.n_items))


def dump_dataset(ds: Dataset, outdir) -> None:
    """Write ``dataset.tsv``, ``meta.json`` and (if present) ``features.tsv``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "dataset.tsv", "w", encoding="utf-8") as fh:
        for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist()):
            fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\t{r!r}\n")
    meta = dict(ds.meta, scale=ds.scale, counts=_counts(ds))
    if ds.features is not None:
        with open(outdir / "features.tsv", "w", encoding="utf-8") as fh:
            for name in ds.features.field_names():
                for k, toks in enumerate(ds.features.fields[name]):
                    for tok in sorted(toks):
                        fh.write(f"{ds.item_ids[k]}\t{name}\t{tok}\n")
    with open(outdir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_canonical(indir) -> Dataset:
    """Read a dataset written by :func:`dump_dataset`."""
    indir = Path(indir)
    try:
        meta = json.loads((indir / "meta.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {indir / 'meta.json'}: {exc.strerror}") from exc
    records = []
    with _open(indir / "dataset.tsv") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if parts == [""]:
                continue
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            try:
                records.append((parts[0], parts[1], float(parts[2])))
            except ValueError:
                raise ParseError(f"non-numeric rating {parts[2]!r}", lineno) from None
    ds = _from_records(records, meta["scale"], meta)
    if (indir / "features.tsv").exists():
        ds.features = load_features(indir / "features.tsv", ds.item_map())
    return ds
