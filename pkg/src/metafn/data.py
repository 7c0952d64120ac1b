"""Dataset ingestion, preprocessing, splits, and the synthetic suite.

A DatasetBundle carries raw rows plus everything fitted from them:
quantile maps for numeric features, target standardization for
regression, and the train/valid/test split.  Transforms are always
fitted on the training rows only, after any limited-data setting has
been applied.

The synthetic suite provides a controlled transfer problem: a fixed set
of nonlinear basis functions is shared by all datasets, each dataset
mixes them with its own simplex weights, and held-out tasks use fresh
weights.  The recorded true mixture gives a noise-floor oracle.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import DataError, UsageError
from .model import DatasetSignature

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical" | "target"
    vocabulary: tuple[str, ...] | None = None


@dataclass
class Schema:
    name: str
    task: str  # "binary" | "regression"
    columns: list[Column]

    def __post_init__(self):
        if self.task not in ("binary", "regression"):
            raise DataError(f"unknown task type {self.task!r}")
        targets = [c for c in self.columns if c.kind == "target"]
        if len(targets) != 1:
            raise DataError(f"schema needs exactly one target column, found {len(targets)}")
        for c in self.columns:
            if c.kind not in ("numeric", "categorical", "target"):
                raise DataError(f"column {c.name!r} has unknown kind {c.kind!r}")
            if c.kind == "categorical" and not c.vocabulary:
                raise DataError(f"categorical column {c.name!r} has an empty vocabulary")

    @property
    def feature_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind != "target"]

    @property
    def target_column(self) -> Column:
        return next(c for c in self.columns if c.kind == "target")

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)

    def signature(self) -> DatasetSignature:
        kinds = tuple(c.kind for c in self.feature_columns)
        cards = tuple(len(c.vocabulary) for c in self.feature_columns
                      if c.kind == "categorical")
        return DatasetSignature(self.name, self.task, kinds, cards)

    def to_dict(self) -> dict:
        return {"name": self.name, "task": self.task,
                "columns": [{"name": c.name, "kind": c.kind,
                             **({"vocabulary": list(c.vocabulary)}
                                if c.vocabulary else {})}
                            for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = [Column(c["name"], c["kind"],
                       tuple(c["vocabulary"]) if "vocabulary" in c else None)
                for c in d["columns"]]
        return cls(d["name"], d["task"], cols)


@dataclass(frozen=True)
class SettingSpec:
    """Limited-data protocol: caps on train and valid row counts."""
    name: str
    train_cap: int | None
    valid_cap: int | None


SETTINGS = {
    "T-full": SettingSpec("T-full", None, None),
    "T-200": SettingSpec("T-200", 200, 50),
    "T-100": SettingSpec("T-100", 100, 25),
    "T-50": SettingSpec("T-50", 50, 13),
    "T-20": SettingSpec("T-20", 20, 5),
}


def get_setting(name: str) -> SettingSpec:
    if name not in SETTINGS:
        raise UsageError(f"unknown setting {name!r}; choose from {sorted(SETTINGS)}")
    return SETTINGS[name]


class QuantileTransform:
    """Empirical-quantile map to a standard normal.

    The sorted training values sit at plotting positions (i+0.5)/n;
    between them the empirical CDF is linearly interpolated, outside
    them it is clipped to the extreme quantiles, and probabilities are
    clipped to [1e-7, 1-1e-7] before the normal inverse CDF.
    """

    def __init__(self, knots_x: np.ndarray, knots_p: np.ndarray, degenerate: bool):
        self.knots_x = knots_x
        self.knots_p = knots_p
        self.degenerate = degenerate

    @classmethod
    def fit(cls, values: np.ndarray, rng: np.random.Generator,
            noise_scale: float = 1e-3) -> "QuantileTransform":
        v = np.asarray(values, dtype=np.float64)
        if v.size < 1:
            raise DataError("cannot fit a quantile transform on an empty column")
        if np.unique(v).size < 2:
            warnings.warn("constant column mapped to zeros by quantile transform")
            return cls(np.array([]), np.array([]), degenerate=True)
        if noise_scale > 0:
            v = v + rng.normal(0.0, noise_scale * v.std(), size=v.shape)
        xs = np.sort(v)
        ps = (np.arange(xs.size) + 0.5) / xs.size
        return cls(xs, ps, degenerate=False)

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if self.degenerate:
            return np.zeros_like(v)
        p = np.interp(v, self.knots_x, self.knots_p)
        return ndtri(np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP))


@dataclass
class DatasetBundle:
    """Schema + raw rows + fitted preprocessing + split indices."""
    schema: Schema
    x_num: np.ndarray              # [rows, n_numeric] raw values
    x_cat: np.ndarray              # [rows, n_categorical] vocabulary indices
    y: np.ndarray                  # [rows] raw target
    splits: dict[str, np.ndarray] | None = None
    transforms: list[QuantileTransform] | None = None
    target_mean: float | None = None
    target_std: float | None = None
    unknown_count: int = 0
    true_mixture: np.ndarray | None = None   # synthetic provenance

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    def split_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in (self.splits or {}).items()}

    def copy_shallow(self) -> "DatasetBundle":
        return replace(self)


def split(bundle: DatasetBundle, seed: int) -> dict[str, np.ndarray]:
    """80:20 split into pool/test, then 20% of the pool becomes validation."""
    n = bundle.n_rows
    if n < 5:
        raise DataError(f"need at least 5 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(np.floor(0.2 * n))
    rest = perm[n_test:]
    n_valid = int(np.floor(0.2 * rest.size))
    splits = {
        "test": np.sort(perm[:n_test]),
        "valid": np.sort(rest[:n_valid]),
        "train": np.sort(rest[n_valid:]),
    }
    bundle.splits = splits
    return splits


def apply_setting(bundle: DatasetBundle, setting: SettingSpec | str,
                  seed: int) -> DatasetBundle:
    """Subsample train/valid down to the setting's caps; test is untouched."""
    if isinstance(setting, str):
        setting = get_setting(setting)
    if bundle.splits is None:
        raise UsageError("split the bundle before applying a setting")
    rng = np.random.default_rng(seed)
    out = bundle.copy_shallow()
    new = dict(bundle.splits)
    for key, cap in (("train", setting.train_cap), ("valid", setting.valid_cap)):
        idx = bundle.splits[key]
        if cap is not None and idx.size > cap:
            new[key] = np.sort(rng.choice(idx, size=cap, replace=False))
    out.splits = new
    return out


def standardize_targets(bundle: DatasetBundle) -> DatasetBundle:
    """Record train-split mean/std for regression targets; no-op otherwise."""
    if bundle.schema.task != "regression":
        return bundle
    if bundle.splits is None:
        raise UsageError("split the bundle before standardizing targets")
    train_y = bundle.y[bundle.splits["train"]]
    std = float(train_y.std())
    if std == 0.0:
        raise DataError("regression target is constant on the training split")
    bundle.target_mean = float(train_y.mean())
    bundle.target_std = std
    return bundle


def fit_transforms(bundle: DatasetBundle, seed: int,
                   noise_scale: float = 1e-3) -> DatasetBundle:
    """Fit per-column quantile maps and target standardization on train rows."""
    if bundle.splits is None:
        raise UsageError("split the bundle before fitting transforms")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9a111]))
    train = bundle.splits["train"]
    bundle.transforms = [
        QuantileTransform.fit(bundle.x_num[train, j], rng, noise_scale)
        for j in range(bundle.x_num.shape[1])]
    standardize_targets(bundle)
    return bundle


def matrices(bundle: DatasetBundle, split_name: str):
    """Model-ready (x_num, x_cat, y) for one split, transforms applied."""
    if bundle.splits is None or bundle.transforms is None:
        raise UsageError("bundle must be split and fitted first")
    if split_name not in bundle.splits:
        raise UsageError(f"unknown split {split_name!r}")
    idx = bundle.splits[split_name]
    x_num = np.column_stack([t.apply(bundle.x_num[idx, j])
                             for j, t in enumerate(bundle.transforms)]) \
        if bundle.transforms else np.empty((idx.size, 0))
    if x_num.size == 0:
        x_num = np.empty((idx.size, 0))
    y = bundle.y[idx].astype(np.float64)
    if bundle.schema.task == "regression" and bundle.target_std is not None:
        y = (y - bundle.target_mean) / bundle.target_std
    return x_num, bundle.x_cat[idx], y


def de_standardize_mse(bundle: DatasetBundle, standardized_mse: float) -> float:
    if bundle.target_std is None:
        return standardized_mse
    return standardized_mse * bundle.target_std ** 2


def prepare(bundle: DatasetBundle, split_seed: int, setting: SettingSpec | str = "T-full",
            setting_seed: int | None = None, noise_scale: float = 1e-3) -> DatasetBundle:
    """Convenience pipeline: split -> apply setting -> fit transforms."""
    split(bundle, split_seed)
    out = apply_setting(bundle, setting, setting_seed if setting_seed is not None
                        else split_seed)
    return fit_transforms(out, split_seed, noise_scale)


# -- CSV + manifest ----------------------------------------------------------


def load_manifest(path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def load_csv(csv_path, manifest_path) -> DatasetBundle:
    """Parse a CSV against its manifest into an unfitted bundle."""
    schema = load_manifest(manifest_path)
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: file is empty") from None
        expected = [c.name for c in schema.columns]
        if header != expected:
            bad = next((h for h, e in zip(header, expected) if h != e),
                       header[len(expected):] or expected[len(header):])
            raise DataError(f"{csv_path}: header does not match manifest near {bad!r}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{csv_path}: no data rows")

    n = len(rows)
    num_cols = [i for i, c in enumerate(schema.columns) if c.kind == "numeric"]
    cat_cols = [i for i, c in enumerate(schema.columns) if c.kind == "categorical"]
    tgt_col = next(i for i, c in enumerate(schema.columns) if c.kind == "target")
    vocab_maps = {i: {v: k for k, v in enumerate(schema.columns[i].vocabulary)}
                  for i in cat_cols}

    x_num = np.empty((n, len(num_cols)))
    x_cat = np.empty((n, len(cat_cols)), dtype=np.int64)
    y = np.empty(n)
    unknown = 0
    for r, row in enumerate(rows):
        if len(row) != len(schema.columns):
            raise DataError(f"{csv_path}: row {r + 2} has {len(row)} fields, "
                            f"expected {len(schema.columns)}")
        for j, i in enumerate(num_cols):
            try:
                x_num[r, j] = float(row[i])
            except ValueError:
                raise DataError(
                    f"{csv_path}: row {r + 2}, column {schema.columns[i].name!r}: "
                    f"cannot parse {row[i]!r} as a number") from None
        for j, i in enumerate(cat_cols):
            mapping = vocab_maps[i]
            idx = mapping.get(row[i])
            if idx is None:
                idx = len(mapping)  # unknown bucket
                unknown += 1
            x_cat[r, j] = idx
        raw = row[tgt_col]
        try:
            y[r] = float(raw)
        except ValueError:
            raise DataError(f"{csv_path}: row {r + 2}: cannot parse target {raw!r}") from None
        if schema.task == "binary" and y[r] not in (0.0, 1.0):
            raise DataError(f"{csv_path}: row {r + 2}: binary target must be 0 or 1, "
                            f"got {raw!r}")
    if unknown:
        warnings.warn(f"{schema.name}: {unknown} categorical values outside the "
                      f"vocabulary mapped to the unknown bucket")
    return DatasetBundle(schema, x_num, x_cat, y, unknown_count=unknown)


def save_csv(bundle: DatasetBundle, csv_path, manifest_path) -> None:
    """Write raw rows + manifest; floats use repr so values round-trip exactly."""
    schema = bundle.schema
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in schema.columns])
        i_num = {c.name: k for k, c in enumerate(schema.columns) if c.kind == "numeric"}
        i_cat = {c.name: k for k, c in
                 enumerate([c for c in schema.columns if c.kind == "categorical"])}
        for r in range(bundle.n_rows):
            row = []
            for c in schema.columns:
                if c.kind == "numeric":
                    row.append(repr(float(bundle.x_num[r, i_num[c.name]])))
                elif c.kind == "categorical":
                    idx = bundle.x_cat[r, i_cat[c.name]]
                    row.append(c.vocabulary[idx] if idx < len(c.vocabulary) else "<unknown>")
                else:
                    val = bundle.y[r]
                    row.append(repr(float(val)) if schema.task == "regression"
                               else str(int(val)))
            writer.writerow(row)


# -- synthetic suite ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSuiteSpec:
    seed: int = 0
    n_basis_functions: int = 6   # shared nonlinearities
    n_pretrain: int = 16         # pretraining datasets
    rows_per_dataset: int = 2000
    n_features: int = 8
    noise_std: float = 0.1
    n_heldout: int = 10
    heldout_rows: int = 2000
    hidden: int = 16
    structure: str = "ridge"     # "ridge": waveform along one direction; "dense": full-rank
    curvature: float = 3.0       # steepness of the tanh units
    mixture_alpha: float = 0.3   # Dirichlet concentration; small = sparse mixtures

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSuiteSpec":
        return cls(**d)


class BasisFunction:
    """A frozen two-layer tanh network R^k -> R, standardized on a probe sample.

    In "ridge" form all hidden units share one input direction, so the
    function is a multi-wiggle waveform along that direction: easy to
    learn when the direction is known (or shared across many datasets),
    nearly impossible to recover from a handful of rows.  "dense" draws
    an unconstrained random network instead.
    """

    def __init__(self, rng: np.random.Generator, n_features: int, hidden: int,
                 probe: np.ndarray, curvature: float = 3.0,
                 structure: str = "ridge"):
        k = n_features
        if structure == "ridge":
            direction = rng.standard_normal(k)
            direction /= np.linalg.norm(direction)
            gains = rng.uniform(curvature, curvature + 4.0, hidden) \
                * rng.choice([-1.0, 1.0], hidden)
            self.w1 = np.outer(direction, gains)
            self.b1 = rng.uniform(-2.5, 2.5, hidden)
        elif structure == "dense":
            self.w1 = rng.standard_normal((k, hidden)) * (curvature / np.sqrt(k))
            self.b1 = rng.standard_normal(hidden) * 0.5
        else:
            raise UsageError(f"unknown basis structure {structure!r}")
        self.w2 = rng.standard_normal(hidden) * (1.0 / np.sqrt(hidden))
        raw = self._raw(probe)
        self.shift = float(raw.mean())
        self.scale = float(raw.std()) or 1.0

    def _raw(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w1 + self.b1) @ self.w2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (self._raw(x) - self.shift) / self.scale


@dataclass
class SynthSuite:
    spec: SynthSuiteSpec
    basis: list[BasisFunction]
    pretrain: list[DatasetBundle]
    heldout: list[DatasetBundle]

    def oracle_predictions(self, bundle: DatasetBundle,
                           x_raw: np.ndarray | None = None) -> np.ndarray:
        """Ground-truth mixture prediction for a bundle generated by this suite."""
        if bundle.true_mixture is None:
            raise UsageError(f"bundle {bundle.schema.name!r} has no recorded mixture")
        x = bundle.x_num if x_raw is None else x_raw
        out = np.zeros(x.shape[0])
        for w, g in zip(bundle.true_mixture, self.basis):
            out += w * g(x)
        return out

    def oracle_mse(self, bundle: DatasetBundle, split_name: str = "test") -> float:
        if bundle.splits is None:
            raise UsageError("split the bundle before asking for the oracle MSE")
        idx = bundle.splits[split_name]
        pred = self.oracle_predictions(bundle, bundle.x_num[idx])
        return float(np.mean((pred - bundle.y[idx]) ** 2))


def _synth_bundle(name: str, suite_spec: SynthSuiteSpec, basis: list[BasisFunction],
                  rows: int, rng: np.random.Generator) -> DatasetBundle:
    k = suite_spec.n_features
    x = rng.standard_normal((rows, k))
    w = rng.dirichlet(np.full(suite_spec.n_basis_functions,
                              suite_spec.mixture_alpha))
    y = np.zeros(rows)
    for wp, g in zip(w, basis):
        y += wp * g(x)
    y += suite_spec.noise_std * rng.standard_normal(rows)
    cols = [Column(f"x{j}", "numeric") for j in range(k)] + [Column("y", "target")]
    schema = Schema(name, "regression", cols)
    return DatasetBundle(schema, x, np.empty((rows, 0), dtype=np.int64), y,
                         true_mixture=w)


def generate_synth_suite(spec: SynthSuiteSpec) -> SynthSuite:
    """Deterministically build pretraining and held-out bundles from the spec."""
    if spec.n_basis_functions < 2 or spec.n_pretrain < 2:
        raise UsageError("the suite needs at least 2 basis functions and 2 datasets")
    root = np.random.SeedSequence(spec.seed)
    keys = root.spawn(2 + spec.n_pretrain + spec.n_heldout)
    probe = np.random.default_rng(keys[0]).standard_normal((4096, spec.n_features))
    basis_rng = np.random.default_rng(keys[1])
    basis = [BasisFunction(basis_rng, spec.n_features, spec.hidden, probe,
                           spec.curvature, spec.structure)
             for _ in range(spec.n_basis_functions)]
    pretrain = [
        _synth_bundle(f"synth_pre_{i:02d}", spec, basis, spec.rows_per_dataset,
                      np.random.default_rng(keys[2 + i]))
        for i in range(spec.n_pretrain)]
    heldout = [
        _synth_bundle(f"synth_task_{i:02d}", spec, basis, spec.heldout_rows,
                      np.random.default_rng(keys[2 + spec.n_pretrain + i]))
        for i in range(spec.n_heldout)]
    return SynthSuite(spec, basis, pretrain, heldout)


def export_suite(suite: SynthSuite, out_dir) -> None:
    """Write every bundle as CSV + manifest, plus a suite.json with provenance."""
    out = Path(out_dir)
    meta = {"spec": suite.spec.to_dict(), "mixtures": {}}
    for sub, bundles in (("pretrain", suite.pretrain), ("heldout", suite.heldout)):
        (out / sub).mkdir(parents=True, exist_ok=True)
        for b in bundles:
            save_csv(b, out / sub / f"{b.schema.name}.csv",
                     out / sub / f"{b.schema.name}.manifest.json")
            meta["mixtures"][b.schema.name] = [repr(float(v)) for v in b.true_mixture]
    with open(out / "suite.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_suite(suite_dir) -> SynthSuite:
    """Re-read an exported suite; basis functions are rebuilt from the spec seed."""
    root = Path(suite_dir)
    try:
        with open(root / "suite.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{suite_dir}: not a suite directory (missing suite.json)") from None
    spec = SynthSuiteSpec.from_dict(meta["spec"])
    regenerated = generate_synth_suite(spec)

    def read(sub):
        out = []
        for path in sorted((root / sub).glob("*.csv")):
            manifest = path.with_name(path.stem + ".manifest.json")
            b = load_csv(path, manifest)
            mix = meta["mixtures"].get(b.schema.name)
            if mix is not None:
                b.true_mixture = np.array([float(v) for v in mix])
            out.append(b)
        return out

    return SynthSuite(spec, regenerated.basis, read("pretrain"), read("heldout"))
