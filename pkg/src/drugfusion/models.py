"""Outcome model architectures.

The two reported models share one recurrent encoder implementation:

  * baseline: GRU over the vitals sequence, last hidden state into a
    single sigmoid readout.
  * multimodal: the same GRU branch concatenated with a drug branch that
    runs three valid 1D convolutions over the patient's drug matrix,
    global-max-pools per channel, then feeds fully connected layers with
    ReLU and inverted dropout before the sigmoid readout.

A third, drugs-only architecture reuses the drug branch alone; it exists
for debugging the drug pathway and carries no performance claims.

All models expose ``params`` / ``grads`` as ordered name-to-array dicts so
the optimizer, the weight container, and the gradient checker all agree on
tensor naming.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .nn.layers import (
    Conv1d,
    Dense,
    GruLayer,
    NnError,
    dropout_backward,
    dropout_forward,
    global_max_pool,
    global_max_pool_backward,
    relu,
    relu_backward,
    sigmoid,
)

__all__ = [
    "ConfigError",
    "BaselineModel",
    "MultimodalModel",
    "DrugsOnlyModel",
    "build_model",
    "predict",
]


class ConfigError(ValueError):
    """Raised for architecture configurations that cannot be built."""


def _as_dtype(name: str):
    try:
        dtype = np.dtype(name)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"dtype must be float32 or float64, got {name}")
    return dtype


class BaselineModel:
    """GRU encoder with a sigmoid readout over the last hidden state."""

    mode = "baseline"

    def __init__(self, n_features: int, hidden: int, rng: np.random.Generator, dtype="float64"):
        if n_features < 1 or hidden < 1:
            raise ConfigError("n_features and hidden must be >= 1")
        self.n_features = n_features
        self.hidden = hidden
        self.dtype = _as_dtype(dtype)
        self.gru = GruLayer(n_features, hidden, rng, dtype=self.dtype)
        self.readout = Dense(hidden, 1, rng, dtype=self.dtype)
        self._p: np.ndarray | None = None

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, n) for n in GruLayer.PARAM_NAMES}
        out["readout.W"] = self.readout.W
        out["readout.b"] = self.readout.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, "g" + n) for n in GruLayer.PARAM_NAMES}
        out["readout.W"] = self.readout.gW
        out["readout.b"] = self.readout.gb
        return out

    def zero_grads(self) -> None:
        self.gru.zero_grads()
        self.readout.zero_grads()

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(params):
            raise ConfigError(f"parameter names do not match: {sorted(set(own) ^ set(params))}")
        for name, value in params.items():
            target = own[name]
            if target.shape != value.shape:
                raise ConfigError(f"{name}: shape {value.shape} does not match {target.shape}")
            target[...] = value.astype(self.dtype)

    def l2_matrices(self) -> list[np.ndarray]:
        """Weight matrices the L2 penalty applies to (dense kernels only)."""
        return [self.readout.W]

    def l2_matrix_grads(self) -> list[np.ndarray]:
        return [self.readout.gW]

    def param_count(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.params().values())

    # -- forward / backward -------------------------------------------------

    def forward(self, x_ts: np.ndarray, x_drug=None, train: bool = False, dropout_rng=None) -> np.ndarray:
        x_ts = np.asarray(x_ts, dtype=self.dtype)
        h = self.gru.forward(x_ts)
        logit = self.readout.forward(h)[:, 0]
        p = sigmoid(logit)
        self._p = p
        return p

    def backward(self, grad_p: np.ndarray) -> None:
        p = self._p
        dlogit = (grad_p * p * (1.0 - p)).astype(self.dtype)[:, None]
        dh = self.readout.backward(dlogit)
        self.gru.backward(dh)

    def architecture(self) -> dict:
        return {
            "mode": self.mode,
            "n_features": self.n_features,
            "hidden": self.hidden,
            "dtype": str(self.dtype),
        }


class MultimodalModel:
    """GRU vitals branch fused with a convolutional drug branch."""

    mode = "multimodal"

    def __init__(
        self,
        n_features: int,
        hidden: int,
        n_drugs: int,
        drug_width: int,
        conv_filters: Sequence[int] = (32, 64, 128),
        kernel_size: int = 3,
        fc_sizes: Sequence[int] = (1024, 512, 256),
        dropout: float = 0.3,
        rng: np.random.Generator | None = None,
        dtype="float64",
    ):
        if rng is None:
            raise ConfigError("an initialized random generator is required")
        if n_features < 1 or hidden < 1 or n_drugs < 1 or drug_width < 1:
            raise ConfigError("model dimensions must be >= 1")
        if not conv_filters:
            raise ConfigError("at least one conv layer is required")
        if not fc_sizes:
            raise ConfigError("at least one fully connected layer is required")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")

        length = n_drugs
        for depth in range(len(conv_filters)):
            length = length - kernel_size + 1
            if length < 1:
                raise ConfigError(
                    f"conv layer {depth + 1} would see length {length}; "
                    f"n_drugs {n_drugs} is too short for kernel {kernel_size}"
                )

        self.n_features = n_features
        self.hidden = hidden
        self.n_drugs = n_drugs
        self.drug_width = drug_width
        self.conv_filters = list(conv_filters)
        self.kernel_size = kernel_size
        self.fc_sizes = list(fc_sizes)
        self.dropout = dropout
        self.dtype = _as_dtype(dtype)

        self.gru = GruLayer(n_features, hidden, rng, dtype=self.dtype)
        self.convs: list[Conv1d] = []
        in_ch = drug_width
        for out_ch in conv_filters:
            self.convs.append(Conv1d(in_ch, out_ch, kernel_size, rng, dtype=self.dtype))
            in_ch = out_ch
        concat = hidden + conv_filters[-1]
        self.fcs: list[Dense] = []
        size_in = concat
        for size_out in fc_sizes:
            self.fcs.append(Dense(size_in, size_out, rng, dtype=self.dtype))
            size_in = size_out
        self.readout = Dense(size_in, 1, rng, dtype=self.dtype)
        self._cache: dict | None = None

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, n) for n in GruLayer.PARAM_NAMES}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.W"] = conv.W
            out[f"conv{i}.b"] = conv.b
        for i, dense in enumerate(self.fcs, start=1):
            out[f"fc{i}.W"] = dense.W
            out[f"fc{i}.b"] = dense.b
        out["readout.W"] = self.readout.W
        out["readout.b"] = self.readout.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, "g" + n) for n in GruLayer.PARAM_NAMES}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.W"] = conv.gW
            out[f"conv{i}.b"] = conv.gb
        for i, dense in enumerate(self.fcs, start=1):
            out[f"fc{i}.W"] = dense.gW
            out[f"fc{i}.b"] = dense.gb
        out["readout.W"] = self.readout.gW
        out["readout.b"] = self.readout.gb
        return out

    def zero_grads(self) -> None:
        self.gru.zero_grads()
        for conv in self.convs:
            conv.zero_grads()
        for dense in self.fcs:
            dense.zero_grads()
        self.readout.zero_grads()

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(params):
            raise ConfigError(f"parameter names do not match: {sorted(set(own) ^ set(params))}")
        for name, value in params.items():
            target = own[name]
            if target.shape != value.shape:
                raise ConfigError(f"{name}: shape {value.shape} does not match {target.shape}")
            target[...] = value.astype(self.dtype)

    def l2_matrices(self) -> list[np.ndarray]:
        return [dense.W for dense in self.fcs] + [self.readout.W]

    def l2_matrix_grads(self) -> list[np.ndarray]:
        return [dense.gW for dense in self.fcs] + [self.readout.gW]

    def param_count(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.params().values())

    # -- forward / backward -------------------------------------------------

    def forward(
        self,
        x_ts: np.ndarray,
        x_drug: np.ndarray,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        x_ts = np.asarray(x_ts, dtype=self.dtype)
        x_drug = np.asarray(x_drug, dtype=self.dtype)
        if x_drug.ndim != 3 or x_drug.shape[1] != self.n_drugs or x_drug.shape[2] != self.drug_width:
            raise NnError(
                f"expected drug input (B, {self.n_drugs}, {self.drug_width}), got {x_drug.shape}"
            )

        h = self.gru.forward(x_ts)

        act = x_drug
        conv_masks = []
        for conv in self.convs:
            act, mask = relu(conv.forward(act))
            conv_masks.append(mask)
        pooled, argmax = global_max_pool(act)
        pool_length = act.shape[1]

        fused = np.concatenate([h, pooled], axis=1)

        act_fc = fused
        fc_masks = []
        drop_keeps = []
        for dense in self.fcs:
            act_fc, mask = relu(dense.forward(act_fc))
            fc_masks.append(mask)
            act_fc, keep = dropout_forward(act_fc, self.dropout, dropout_rng, train)
            drop_keeps.append(keep)

        logit = self.readout.forward(act_fc)[:, 0]
        p = sigmoid(logit)

        self._cache = {
            "p": p,
            "conv_masks": conv_masks,
            "argmax": argmax,
            "pool_length": pool_length,
            "fc_masks": fc_masks,
            "drop_keeps": drop_keeps,
        }
        return p

    def backward(self, grad_p: np.ndarray) -> None:
        cache = self._cache
        p = cache["p"]
        dlogit = (grad_p * p * (1.0 - p)).astype(self.dtype)[:, None]

        grad = self.readout.backward(dlogit)
        for dense, mask, keep in zip(
            reversed(self.fcs), reversed(cache["fc_masks"]), reversed(cache["drop_keeps"])
        ):
            grad = dropout_backward(grad, keep, self.dropout)
            grad = relu_backward(grad, mask)
            grad = dense.backward(grad)

        dh = grad[:, : self.hidden]
        dpool = grad[:, self.hidden :]

        dconv = global_max_pool_backward(dpool, cache["argmax"], cache["pool_length"])
        for depth in range(len(self.convs) - 1, -1, -1):
            dconv = relu_backward(dconv, cache["conv_masks"][depth])
            dconv = self.convs[depth].backward(dconv, need_input_grad=depth > 0)

        self.gru.backward(np.ascontiguousarray(dh))

    def architecture(self) -> dict:
        return {
            "mode": self.mode,
            "n_features": self.n_features,
            "hidden": self.hidden,
            "n_drugs": self.n_drugs,
            "drug_width": self.drug_width,
            "conv_filters": self.conv_filters,
            "kernel_size": self.kernel_size,
            "fc_sizes": self.fc_sizes,
            "dropout": self.dropout,
            "dtype": str(self.dtype),
        }


class DrugsOnlyModel:
    """Drug branch alone: conv stack, global max pool, FC head, sigmoid.

    A debug architecture for isolating the drug pathway; it carries no
    performance claims.
    """

    mode = "drugs"

    def __init__(
        self,
        n_drugs: int,
        drug_width: int,
        conv_filters: Sequence[int] = (32, 64, 128),
        kernel_size: int = 3,
        fc_sizes: Sequence[int] = (1024, 512, 256),
        dropout: float = 0.3,
        rng: np.random.Generator | None = None,
        dtype="float64",
    ):
        if rng is None:
            raise ConfigError("an initialized random generator is required")
        if n_drugs < 1 or drug_width < 1:
            raise ConfigError("model dimensions must be >= 1")
        if not conv_filters or not fc_sizes:
            raise ConfigError("conv and FC stacks must be non-empty")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        length = n_drugs
        for depth in range(len(conv_filters)):
            length = length - kernel_size + 1
            if length < 1:
                raise ConfigError(
                    f"conv layer {depth + 1} would see length {length}; "
                    f"n_drugs {n_drugs} is too short for kernel {kernel_size}"
                )

        self.n_drugs = n_drugs
        self.drug_width = drug_width
        self.conv_filters = list(conv_filters)
        self.kernel_size = kernel_size
        self.fc_sizes = list(fc_sizes)
        self.dropout = dropout
        self.dtype = _as_dtype(dtype)

        self.convs: list[Conv1d] = []
        in_ch = drug_width
        for out_ch in conv_filters:
            self.convs.append(Conv1d(in_ch, out_ch, kernel_size, rng, dtype=self.dtype))
            in_ch = out_ch
        self.fcs: list[Dense] = []
        size_in = conv_filters[-1]
        for size_out in fc_sizes:
            self.fcs.append(Dense(size_in, size_out, rng, dtype=self.dtype))
            size_in = size_out
        self.readout = Dense(size_in, 1, rng, dtype=self.dtype)
        self._cache: dict | None = None

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.W"] = conv.W
            out[f"conv{i}.b"] = conv.b
        for i, dense in enumerate(self.fcs, start=1):
            out[f"fc{i}.W"] = dense.W
            out[f"fc{i}.b"] = dense.b
        out["readout.W"] = self.readout.W
        out["readout.b"] = self.readout.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.W"] = conv.gW
            out[f"conv{i}.b"] = conv.gb
        for i, dense in enumerate(self.fcs, start=1):
            out[f"fc{i}.W"] = dense.gW
            out[f"fc{i}.b"] = dense.gb
        out["readout.W"] = self.readout.gW
        out["readout.b"] = self.readout.gb
        return out

    def zero_grads(self) -> None:
        for conv in self.convs:
            conv.zero_grads()
        for dense in self.fcs:
            dense.zero_grads()
        self.readout.zero_grads()

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(params):
            raise ConfigError(f"parameter names do not match: {sorted(set(own) ^ set(params))}")
        for name, value in params.items():
            target = own[name]
            if target.shape != value.shape:
                raise ConfigError(f"{name}: shape {value.shape} does not match {target.shape}")
            target[...] = value.astype(self.dtype)

    def l2_matrices(self) -> list[np.ndarray]:
        return [dense.W for dense in self.fcs] + [self.readout.W]

    def l2_matrix_grads(self) -> list[np.ndarray]:
        return [dense.gW for dense in self.fcs] + [self.readout.gW]

    def param_count(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.params().values())

    def forward(
        self,
        x_ts,
        x_drug: np.ndarray = None,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        # x_ts is accepted for interface uniformity and ignored.
        if x_drug is None:
            raise NnError("drugs-only model requires a drug input")
        x_drug = np.asarray(x_drug, dtype=self.dtype)
        if x_drug.ndim != 3 or x_drug.shape[1] != self.n_drugs or x_drug.shape[2] != self.drug_width:
            raise NnError(
                f"expected drug input (B, {self.n_drugs}, {self.drug_width}), got {x_drug.shape}"
            )

        act = x_drug
        conv_masks = []
        for conv in self.convs:
            act, mask = relu(conv.forward(act))
            conv_masks.append(mask)
        pooled, argmax = global_max_pool(act)
        pool_length = act.shape[1]

        act_fc = pooled
        fc_masks = []
        drop_keeps = []
        for dense in self.fcs:
            act_fc, mask = relu(dense.forward(act_fc))
            fc_masks.append(mask)
            act_fc, keep = dropout_forward(act_fc, self.dropout, dropout_rng, train)
            drop_keeps.append(keep)

        logit = self.readout.forward(act_fc)[:, 0]
        p = sigmoid(logit)
        self._cache = {
            "p": p,
            "conv_masks": conv_masks,
            "argmax": argmax,
            "pool_length": pool_length,
            "fc_masks": fc_masks,
            "drop_keeps": drop_keeps,
        }
        return p

    def backward(self, grad_p: np.ndarray) -> None:
        cache = self._cache
        p = cache["p"]
        dlogit = (grad_p * p * (1.0 - p)).astype(self.dtype)[:, None]

        grad = self.readout.backward(dlogit)
        for dense, mask, keep in zip(
            reversed(self.fcs), reversed(cache["fc_masks"]), reversed(cache["drop_keeps"])
        ):
            grad = dropout_backward(grad, keep, self.dropout)
            grad = relu_backward(grad, mask)
            grad = dense.backward(grad)

        dconv = global_max_pool_backward(grad, cache["argmax"], cache["pool_length"])
        for depth in range(len(self.convs) - 1, -1, -1):
            dconv = relu_backward(dconv, cache["conv_masks"][depth])
            dconv = self.convs[depth].backward(dconv, need_input_grad=depth > 0)

    def architecture(self) -> dict:
        return {
            "mode": self.mode,
            "n_drugs": self.n_drugs,
            "drug_width": self.drug_width,
            "conv_filters": self.conv_filters,
            "kernel_size": self.kernel_size,
            "fc_sizes": self.fc_sizes,
            "dropout": self.dropout,
            "dtype": str(self.dtype),
        }


def build_model(architecture: dict, rng: np.random.Generator):
    """Construct a model from an architecture dict (as stored in manifests)."""
    arch = dict(architecture)
    mode = arch.pop("mode", None)
    if mode == "baseline":
        return BaselineModel(
            n_features=arch["n_features"],
            hidden=arch["hidden"],
            rng=rng,
            dtype=arch.get("dtype", "float64"),
        )
    if mode == "multimodal":
        return MultimodalModel(
            n_features=arch["n_features"],
            hidden=arch["hidden"],
            n_drugs=arch["n_drugs"],
            drug_width=arch["drug_width"],
            conv_filters=arch.get("conv_filters", (32, 64, 128)),
            kernel_size=arch.get("kernel_size", 3),
            fc_sizes=arch.get("fc_sizes", (1024, 512, 256)),
            dropout=arch.get("dropout", 0.3),
            rng=rng,
            dtype=arch.get("dtype", "float64"),
        )
    if mode == "drugs":
        return DrugsOnlyModel(
            n_drugs=arch["n_drugs"],
            drug_width=arch["drug_width"],
            conv_filters=arch.get("conv_filters", (32, 64, 128)),
            kernel_size=arch.get("kernel_size", 3),
            fc_sizes=arch.get("fc_sizes", (1024, 512, 256)),
            dropout=arch.get("dropout", 0.3),
            rng=rng,
            dtype=arch.get("dtype", "float64"),
        )
    raise ConfigError(f"unknown mode {mode!r}")


def predict(model, x_ts: np.ndarray | None, x_drug: np.ndarray | None = None,
            batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities, batched to bound memory."""
    n = x_ts.shape[0] if x_ts is not None else x_drug.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        if model.mode == "baseline":
            p = model.forward(x_ts[start:stop], train=False)
        else:
            ts = x_ts[start:stop] if x_ts is not None else None
            p = model.forward(ts, x_drug[start:stop], train=False)
        out[start:stop] = p
    return out
