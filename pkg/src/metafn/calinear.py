"""Calibratable linear layers.

A CaLinear holds M basis affine maps (shared across datasets) plus a tiny
calibration MLP that turns one scalar of context per token into M softmax
coefficients.  Its effective map for token n is the coefficient-weighted
mixture of the bases:

    out[b, n] = sum_m c[n, m] * (z[b, n] @ W_m + b_m)

Because the mixture is linear in the bases, the forward pass first mixes
the weights per token and then applies a single batched matmul, which is
algebraically identical to summing M separate affine maps.

The "direct" variant replaces the calibration MLP with a per-dataset
learnable logit matrix [T, M] put through the same softmax (an ablation
of how coefficients are produced; the basis maps stay shared).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Parameter, uniform_fan_in
from .tensor import Tensor


class CaLinear:
    """M basis affine maps d_in -> d_out plus a 1 -> hidden -> M calibration MLP."""

    def __init__(self, d_in: int, d_out: int, n_basis: int,
                 rng: np.random.Generator, name: str, cal_hidden: int = 16):
        if n_basis < 1:
            raise DimensionError("a CaLinear needs at least one basis map")
        self.d_in = d_in
        self.d_out = d_out
        self.n_basis = n_basis
        self.name = name
        weights = np.stack([uniform_fan_in(rng, d_in, (d_in, d_out))
                            for _ in range(n_basis)])
        biases = np.stack([uniform_fan_in(rng, d_in, (d_out,))
                           for _ in range(n_basis)])
        self.weight = Parameter(weights, f"{name}.basis.weight")
        self.bias = Parameter(biases, f"{name}.basis.bias", weight_decay_exempt=True)
        # near-zero output weights => initial coefficients are near-uniform;
        # the positive hidden bias keeps every ReLU unit active at small context
        self.cal_w1 = Parameter(rng.uniform(-0.01, 0.01, (1, cal_hidden)), f"{name}.cal.w1")
        self.cal_b1 = Parameter(np.full(cal_hidden, 0.1), f"{name}.cal.b1",
                                weight_decay_exempt=True)
        self.cal_w2 = Parameter(rng.uniform(-0.01, 0.01, (cal_hidden, n_basis)),
                                f"{name}.cal.w2")
        self.cal_b2 = Parameter(np.zeros(n_basis), f"{name}.cal.b2",
                                weight_decay_exempt=True)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, self.cal_w1, self.cal_b1,
                self.cal_w2, self.cal_b2]

    def coefficients(self, context: Tensor) -> Tensor:
        """Map a context vector [T] to simplex coefficient rows [T, M]."""
        if context.ndim != 1:
            raise DimensionError("context vector must be 1-D (one scalar per token)")
        h = T.relu(T.matmul(context.reshape(context.size, 1), self.cal_w1) + self.cal_b1)
        logits = T.matmul(h, self.cal_w2) + self.cal_b2
        return T.softmax(logits, axis=-1)

    def forward(self, z: Tensor, coeffs: Tensor) -> Tensor:
        """Apply the coefficient-weighted mixture of basis maps.

        z: [B, T, d_in], coeffs: [T, M] -> [B, T, d_out].
        """
        if z.ndim != 3 or z.shape[2] != self.d_in:
            raise DimensionError(
                f"{self.name}: expected input [B, T, {self.d_in}], got {z.shape}")
        if coeffs.shape != (z.shape[1], self.n_basis):
            raise DimensionError(
                f"{self.name}: coefficient shape {coeffs.shape} does not match "
                f"(tokens={z.shape[1]}, basis={self.n_basis})")
        w_flat = self.weight.reshape(self.n_basis, self.d_in * self.d_out)
        w_eff = T.matmul(coeffs, w_flat).reshape(coeffs.shape[0], self.d_in, self.d_out)
        out = T.matmul(z.transpose(1, 0, 2), w_eff).transpose(1, 0, 2)
        return out + T.matmul(coeffs, self.bias)


class DirectCoefficientCaLinear:
    """Ablation variant: per-dataset learnable logits instead of the MLP.

    Shares the basis parameters of the layer it derives from; only the
    coefficient source changes.
    """

    def __init__(self, base: CaLinear, logits: Parameter):
        if logits.shape[1] != base.n_basis:
            raise DimensionError("logit matrix width must equal the basis count")
        self.base = base
        self.logits = logits
        self.d_in = base.d_in
        self.d_out = base.d_out
        self.n_basis = base.n_basis
        self.name = base.name

    def coefficients(self, context: Tensor | None = None) -> Tensor:
        return T.softmax(self.logits, axis=-1)

    def forward(self, z: Tensor, coeffs: Tensor) -> Tensor:
        return self.base.forward(z, coeffs)

    def parameters(self) -> list[Parameter]:
        return [self.logits]


def make_direct_coefficient_variant(layer: CaLinear, n_tokens: int,
                                    name: str | None = None) -> DirectCoefficientCaLinear:
    """Swap the calibration MLP for directly learnable per-token logits.

    Logits start at zero, i.e. uniform coefficients.  Adds T*M dataset
    parameters per layer (versus T context scalars total in MLP mode).
    """
    logits = Parameter(np.zeros((n_tokens, layer.n_basis)),
                       name or f"{layer.name}.coef_logits")
    return DirectCoefficientCaLinear(layer, logits)


def calinear_ffn_forward(lin1, lin2, z: Tensor, c1: Tensor, c2: Tensor) -> Tensor:
    """Two-layer feed-forward block: lin2(relu(lin1(z))), coefficients per layer."""
    if lin1.d_out != lin2.d_in:
        raise DimensionError(
            f"FFN width mismatch: first layer emits {lin1.d_out}, "
            f"second expects {lin2.d_in}")
    return lin2.forward(T.relu(lin1.forward(z, c1)), c2)
