"""Model assembly: a shared transformer body with per-dataset edges.

The shared body is a stack of pre-norm transformer blocks whose
feed-forward sublayers are pairs of calibratable linear layers.  Each
attached dataset owns its feature tokenizer, output head, and (in MLP
coefficient mode) a context vector with one scalar per token; those are
the only parts trained from scratch downstream.

Coefficient modes:
  * ``mlp``    - coefficients come from each layer's calibration MLP fed
                 with the dataset's context vector (the default).
  * ``direct`` - each dataset owns a learnable logit matrix per layer.
  * ``plain``  - ordinary linear FFN, no basis mixture (baseline).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .calinear import CaLinear, calinear_ffn_forward
from .errors import ConfigError, DataError, UsageError
from .nn import (Parameter, apply_linear, init_attention,
                 layer_norm, self_attention, uniform_fan_in)
from .tensor import Tensor

COEFFICIENT_MODES = ("mlp", "direct", "plain")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 192
    n_blocks: int = 4
    n_heads: int = 8
    n_basis: int = 4
    d_ffn: int = 256
    cal_hidden: int = 16
    ln_eps: float = 1e-5
    dropout: float = 0.0  # reserved; only 0.0 is supported
    mode: str = "mlp"

    def validate(self) -> None:
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.n_heads}")
        if self.n_basis < 1 or self.n_blocks < 1:
            raise ConfigError("n_basis and n_blocks must be at least 1")
        if self.mode not in COEFFICIENT_MODES:
            raise ConfigError(f"unknown coefficient mode {self.mode!r}")
        if self.dropout != 0.0:
            raise ConfigError("only dropout=0.0 is supported")

    def compat_key(self) -> tuple:
        return (self.d, self.n_blocks, self.n_heads, self.n_basis,
                self.d_ffn, self.cal_hidden, self.mode)


@dataclass(frozen=True)
class DatasetSignature:
    """What the model needs to know about a dataset's shape."""
    name: str
    task: str                        # "binary" | "regression"
    feature_kinds: tuple[str, ...]   # "numeric"/"categorical" per feature, in order
    cardinalities: tuple[int, ...]   # one entry per categorical feature, in order

    @property
    def n_features(self) -> int:
        return len(self.feature_kinds)

    @property
    def n_tokens(self) -> int:
        return self.n_features + 1  # + classification token

    @property
    def n_numeric(self) -> int:
        return sum(k == "numeric" for k in self.feature_kinds)

    @property
    def n_categorical(self) -> int:
        return sum(k == "categorical" for k in self.feature_kinds)

    def to_dict(self) -> dict:
        return {"name": self.name, "task": self.task,
                "feature_kinds": list(self.feature_kinds),
                "cardinalities": list(self.cardinalities)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSignature":
        return cls(d["name"], d["task"], tuple(d["feature_kinds"]),
                   tuple(d["cardinalities"]))


class PlainLinear:
    """Ordinary affine map used by the baseline (no basis mixture)."""

    def __init__(self, d_in, d_out, rng, name):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(uniform_fan_in(rng, d_in, (d_in, d_out)), f"{name}.weight")
        self.bias = Parameter(uniform_fan_in(rng, d_in, (d_out,)), f"{name}.bias",
                              weight_decay_exempt=True)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, z: Tensor) -> Tensor:
        return apply_linear(z, self.weight, self.bias)


class FeatureTokenizer:
    """Turns one table row into one embedding per feature plus a class token.

    Numeric feature j:      token = value * weight_j + bias_j
    Categorical feature j:  token = embedding_table_j[index] + bias_j
    The last table row of every categorical feature is the unknown bucket.
    """

    def __init__(self, sig: DatasetSignature, d: int, rng: np.random.Generator,
                 prefix: str):
        self.sig = sig
        self.d = d
        bound = 1.0 / np.sqrt(d)

        def tok_param(shape, name):
            return Parameter(rng.uniform(-bound, bound, shape), name,
                             weight_decay_exempt=True)

        self.cls = tok_param((d,), f"{prefix}.cls")
        n_num = sig.n_numeric
        self.num_weight = tok_param((n_num, d), f"{prefix}.num.weight") if n_num else None
        self.num_bias = tok_param((n_num, d), f"{prefix}.num.bias") if n_num else None
        self.cat_tables: list[Parameter] = []
        self.cat_biases: list[Parameter] = []
        for j, card in enumerate(sig.cardinalities):
            self.cat_tables.append(tok_param((card + 1, d), f"{prefix}.cat.{j}.table"))
            self.cat_biases.append(tok_param((d,), f"{prefix}.cat.{j}.bias"))

    def parameters(self) -> list[Parameter]:
        ps = [self.cls]
        if self.num_weight is not None:
            ps += [self.num_weight, self.num_bias]
        for t, b in zip(self.cat_tables, self.cat_biases):
            ps += [t, b]
        return ps

    def forward(self, x_num: np.ndarray, x_cat: np.ndarray) -> Tensor:
        sig = self.sig
        x_num = np.asarray(x_num, dtype=np.float64)
        x_cat = np.asarray(x_cat, dtype=np.int64)
        if x_num.ndim != 2 or x_cat.ndim != 2 or x_num.shape[0] != x_cat.shape[0]:
            raise DataError("feature matrices must be 2-D with matching row counts")
        B = x_num.shape[0]
        if x_num.shape[1] != sig.n_numeric or x_cat.shape[1] != sig.n_categorical:
            raise DataError(
                f"dataset {sig.name!r} expects {sig.n_numeric} numeric and "
                f"{sig.n_categorical} categorical columns, got "
                f"{x_num.shape[1]} and {x_cat.shape[1]}")
        for j, card in enumerate(sig.cardinalities):
            col = x_cat[:, j]
            if col.min(initial=0) < 0 or col.max(initial=0) > card:
                raise DataError(f"categorical index out of range in column {j} "
                                f"of dataset {sig.name!r}")

        cls = T.broadcast_to(self.cls.reshape(1, 1, self.d), (B, 1, self.d))
        if sig.n_categorical == 0:
            numeric = Tensor(x_num.reshape(B, sig.n_numeric, 1)) * self.num_weight \
                + self.num_bias
            return T.concat([cls, numeric], axis=1)

        numeric_block = None
        if sig.n_numeric:
            numeric_block = Tensor(x_num.reshape(B, sig.n_numeric, 1)) * self.num_weight \
                + self.num_bias
        pieces = [cls]
        i_num = i_cat = 0
        for kind in sig.feature_kinds:
            if kind == "numeric":
                pieces.append(numeric_block[:, i_num:i_num + 1, :])
                i_num += 1
            else:
                rows = T.gather_rows(self.cat_tables[i_cat], x_cat[:, i_cat])
                pieces.append((rows + self.cat_biases[i_cat]).reshape(B, 1, self.d))
                i_cat += 1
        return T.concat(pieces, axis=1)


class OutputHead:
    """Per-dataset readout: layer norm -> ReLU -> affine to one output."""

    def __init__(self, d: int, rng: np.random.Generator, prefix: str, eps: float):
        self.eps = eps
        self.gamma = Parameter(np.ones(d), f"{prefix}.norm.gamma", weight_decay_exempt=True)
        self.beta = Parameter(np.zeros(d), f"{prefix}.norm.beta", weight_decay_exempt=True)
        self.weight = Parameter(uniform_fan_in(rng, d, (d, 1)), f"{prefix}.weight")
        self.bias = Parameter(uniform_fan_in(rng, d, (1,)), f"{prefix}.bias",
                              weight_decay_exempt=True)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta, self.weight, self.bias]

    def forward(self, h_cls: Tensor) -> Tensor:
        normed = layer_norm(h_cls, self.gamma, self.beta, self.eps)
        return apply_linear(T.relu(normed), self.weight, self.bias)


class Block:
    """Pre-norm transformer block; the first block omits the leading norm."""

    def __init__(self, cfg: ModelConfig, idx: int, rng: np.random.Generator):
        prefix = f"blocks.{idx}"
        self.idx = idx
        self.attn = init_attention(rng, cfg.d, f"{prefix}.attn")
        self.norm1 = None
        if idx > 0:
            self.norm1 = (Parameter(np.ones(cfg.d), f"{prefix}.norm1.gamma",
                                    weight_decay_exempt=True),
                          Parameter(np.zeros(cfg.d), f"{prefix}.norm1.beta",
                                    weight_decay_exempt=True))
        self.norm2 = (Parameter(np.ones(cfg.d), f"{prefix}.norm2.gamma",
                                weight_decay_exempt=True),
                      Parameter(np.zeros(cfg.d), f"{prefix}.norm2.beta",
                                weight_decay_exempt=True))
        if cfg.mode == "plain":
            self.lin1 = PlainLinear(cfg.d, cfg.d_ffn, rng, f"{prefix}.ffn.lin1")
            self.lin2 = PlainLinear(cfg.d_ffn, cfg.d, rng, f"{prefix}.ffn.lin2")
        else:
            self.lin1 = CaLinear(cfg.d, cfg.d_ffn, cfg.n_basis, rng,
                                 f"{prefix}.ffn.lin1", cfg.cal_hidden)
            self.lin2 = CaLinear(cfg.d_ffn, cfg.d, cfg.n_basis, rng,
                                 f"{prefix}.ffn.lin2", cfg.cal_hidden)

    def parameters(self) -> list[Parameter]:
        ps = list(self.attn.all())
        if self.norm1 is not None:
            ps += list(self.norm1)
        ps += list(self.norm2)
        ps += self.lin1.parameters() + self.lin2.parameters()
        return ps

    def norm_parameters(self) -> list[Parameter]:
        ps = list(self.norm1) if self.norm1 is not None else []
        return ps + list(self.norm2)


@dataclass
class DatasetParts:
    signature: DatasetSignature
    tokenizer: FeatureTokenizer
    head: OutputHead
    context: Parameter | None = None            # mlp mode
    coef_logits: list[Parameter] = field(default_factory=list)  # direct mode

    def parameters(self) -> list[Parameter]:
        ps = self.tokenizer.parameters() + self.head.parameters()
        if self.context is not None:
            ps.append(self.context)
        ps += self.coef_logits
        return ps


@dataclass
class ParamPartition:
    """Disjoint cover of an assembly's parameters for one dataset."""
    dataset: dict[str, Parameter]
    shared_norm: dict[str, Parameter]
    shared_rest: dict[str, Parameter]

    @property
    def shared(self) -> dict[str, Parameter]:
        return {**self.shared_norm, **self.shared_rest}

    @property
    def calibratable(self) -> dict[str, Parameter]:
        """What task calibration is allowed to train."""
        return {**self.dataset, **self.shared_norm}


def _dataset_seed(base_seed: int, name: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.SeedSequence([base_seed, int.from_bytes(digest[:8], "little")])


class ModelAssembly:
    """Shared transformer body plus per-dataset tokenizers, heads, contexts."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.provenance: str | None = None
        self.dataset_phase: dict[str, str] = {}
        self._registry: dict[str, Parameter] = {}
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5ead]))
        self.blocks = [Block(config, i, rng) for i in range(config.n_blocks)]
        for block in self.blocks:
            for p in block.parameters():
                self._register(p)
        self._shared_norm_names = {p.name for b in self.blocks
                                   for p in b.norm_parameters()}
        self.datasets: dict[str, DatasetParts] = {}

    # -- registry ------------------------------------------------------------

    def _register(self, p: Parameter) -> None:
        if p.name in self._registry:
            raise UsageError(f"duplicate parameter name {p.name!r}")
        self._registry[p.name] = p

    def parameters(self) -> dict[str, Parameter]:
        return dict(self._registry)

    def shared_parameters(self) -> dict[str, Parameter]:
        return {n: p for n, p in self._registry.items() if not n.startswith("datasets.")}

    def calinear_layers(self):
        """All mixture layers in block order: (layer_index, layer)."""
        out = []
        for b in self.blocks:
            out.append((2 * b.idx, b.lin1))
            out.append((2 * b.idx + 1, b.lin2))
        return out

    # -- datasets ------------------------------------------------------------

    def attach_dataset(self, sig: DatasetSignature) -> str:
        """Create fresh dataset-specific parts; the shared body is untouched."""
        if sig.name in self.datasets:
            raise UsageError(f"dataset {sig.name!r} already attached")
        if sig.task not in ("binary", "regression"):
            raise ConfigError(f"unknown task type {sig.task!r}")
        cfg = self.config
        rng = np.random.default_rng(_dataset_seed(self.seed, sig.name))
        prefix = f"datasets.{sig.name}"
        tokenizer = FeatureTokenizer(sig, cfg.d, rng, f"{prefix}.tokenizer")
        head = OutputHead(cfg.d, rng, f"{prefix}.head", cfg.ln_eps)
        parts = DatasetParts(sig, tokenizer, head)
        if cfg.mode == "mlp":
            parts.context = Parameter(rng.standard_normal(sig.n_tokens) * 0.01,
                                      f"{prefix}.context")
        elif cfg.mode == "direct":
            parts.coef_logits = [
                Parameter(np.zeros((sig.n_tokens, cfg.n_basis)),
                          f"{prefix}.coeffs.{idx}")
                for idx, _ in self.calinear_layers()]
        for p in parts.parameters():
            self._register(p)
        self.datasets[sig.name] = parts
        return sig.name

    def detach_dataset(self, name: str) -> None:
        parts = self.datasets.pop(name, None)
        if parts is None:
            raise UsageError(f"dataset {name!r} is not attached")
        for p in parts.parameters():
            del self._registry[p.name]
        self.dataset_phase.pop(name, None)

    def _parts(self, name: str) -> DatasetParts:
        parts = self.datasets.get(name)
        if parts is None:
            raise UsageError(f"dataset {name!r} is not attached")
        return parts

    # -- forward -------------------------------------------------------------

    def _ffn_coefficients(self, parts: DatasetParts, layer_idx: int, layer) -> Tensor:
        if self.config.mode == "direct":
            return T.softmax(parts.coef_logits[layer_idx], axis=-1)
        return layer.coefficients(parts.context)

    def forward(self, dataset: str, x_num: np.ndarray, x_cat: np.ndarray) -> Tensor:
        """Predict one logit (binary) or one value (regression) per row: [B, 1]."""
        parts = self._parts(dataset)
        cfg = self.config
        h = parts.tokenizer.forward(x_num, x_cat)
        for block in self.blocks:
            a_in = h if block.norm1 is None else layer_norm(h, *block.norm1, cfg.ln_eps)
            h = h + self_attention(a_in, block.attn, cfg.n_heads)
            f_in = layer_norm(h, *block.norm2, cfg.ln_eps)
            if cfg.mode == "plain":
                f = block.lin2.forward(T.relu(block.lin1.forward(f_in)))
            else:
                c1 = self._ffn_coefficients(parts, 2 * block.idx, block.lin1)
                c2 = self._ffn_coefficients(parts, 2 * block.idx + 1, block.lin2)
                f = calinear_ffn_forward(block.lin1, block.lin2, f_in, c1, c2)
            h = h + f
        return parts.head.forward(h[:, 0, :])

    # -- partitioning ----------------------------------------------------------

    def partition_parameters(self, dataset: str) -> ParamPartition:
        parts = self._parts(dataset)
        ds = {p.name: p for p in parts.parameters()}
        shared_norm = {}
        shared_rest = {}
        for name, p in self._registry.items():
            if name in ds or name.startswith("datasets."):
                continue
            if name in self._shared_norm_names:
                shared_norm[name] = p
            else:
                shared_rest[name] = p
        return ParamPartition(ds, shared_norm, shared_rest)


def make_plain_twin(src: ModelAssembly) -> ModelAssembly:
    """Build a plain-FFN baseline carrying the same weights as ``src``.

    Requires the source to have a single basis map per layer (n_basis=1);
    its unique basis becomes the twin's ordinary linear weights.
    """
    if src.config.mode == "plain":
        raise UsageError("source assembly is already plain")
    if src.config.n_basis != 1:
        raise UsageError("a plain twin needs n_basis=1 in the source")
    cfg = dataclasses.replace(src.config, mode="plain")
    twin = ModelAssembly(cfg, seed=src.seed)
    for name, p in twin.shared_parameters().items():
        if ".ffn." in name:
            tag = "weight" if name.endswith("weight") else "bias"
            source = src.parameters()[name.replace(f".{tag}", f".basis.{tag}")]
            p.data = source.data[0].copy()
        elif name in src.parameters():
            p.data = src.parameters()[name].data.copy()
    for ds_name, parts in src.datasets.items():
        twin.attach_dataset(parts.signature)
        for p in parts.tokenizer.parameters() + parts.head.parameters():
            twin.parameters()[p.name].data = p.data.copy()
    return twin
