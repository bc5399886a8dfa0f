"""Layers with explicit forward and backward passes.

Conventions:
  * Arrays are batch-first and channels-last: dense inputs are (B, D),
    sequences are (B, T, F), drug matrices are (B, L, C).
  * Parameterized layers hold their weights and accumulate gradients in
    matching ``g``-prefixed attributes; ``zero_grads`` resets them.
  * Forward passes cache what backward needs on the instance, so each
    layer instance serves one single-threaded forward/backward pair at a
    time. Given fixed parameters, inputs, and dropout seeds, results are
    bit-exact and reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NnError",
    "ShapeMismatch",
    "InputTooShort",
    "glorot_uniform",
    "sigmoid",
    "relu",
    "relu_backward",
    "dropout_forward",
    "dropout_backward",
    "global_max_pool",
    "global_max_pool_backward",
    "Dense",
    "Conv1d",
    "GruLayer",
]


class NnError(ValueError):
    """Base class for neural kernel errors."""


class ShapeMismatch(NnError):
    """Raised when an input shape does not fit a layer."""


class InputTooShort(NnError):
    """Raised when a convolution input is shorter than its kernel."""


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    """Uniform init scaled by sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (activation, mask); the subgradient at exactly 0 is 0."""
    mask = x > 0
    return x * mask, mask


def relu_backward(grad: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad * mask


def dropout_forward(
    x: np.ndarray, rate: float, rng: np.random.Generator | None, train: bool
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout.

    In train mode each element survives with probability 1 - rate and is
    scaled by 1 / (1 - rate), so the expected value is preserved. In eval
    mode, and for rate 0, the input passes through untouched and no random
    numbers are consumed.
    """
    if not 0.0 <= rate < 1.0:
        raise NnError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise NnError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * keep * scale, keep


def dropout_backward(grad: np.ndarray, keep: np.ndarray | None, rate: float) -> np.ndarray:
    if keep is None:
        return grad
    scale = np.asarray(1.0 / (1.0 - rate), dtype=grad.dtype)
    return grad * keep * scale


def global_max_pool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over the length axis of (B, L, C); ties pick the lowest index."""
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (B, L, C), got {x.shape}")
    argmax = np.argmax(x, axis=1)
    pooled = np.take_along_axis(x, argmax[:, None, :], axis=1)[:, 0, :]
    return pooled, argmax


def global_max_pool_backward(grad: np.ndarray, argmax: np.ndarray, length: int) -> np.ndarray:
    batch, channels = grad.shape
    out = np.zeros((batch, length, channels), dtype=grad.dtype)
    np.put_along_axis(out, argmax[:, None, :], grad[:, None, :], axis=1)
    return out


class Dense:
    """Affine map y = x W + b with W of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.n_in = n_in
        self.n_out = n_out
        self.W = glorot_uniform(rng, n_in, n_out, (n_in, n_out), dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def zero_grads(self) -> None:
        self.gW[...] = 0.0
        self.gb[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"expected (B, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._x
        self.gW += x.T @ grad
        self.gb += grad.sum(axis=0)
        return grad @ self.W.T


class Conv1d:
    """Valid 1D cross-correlation over (B, L, C_in) inputs.

    Kernels are stored as (out_channels, in_channels, kernel_size):
    out[b, i, o] = sum_{k, c} x[b, i + k, c] * W[o, c, k] + bias[o].
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dtype=np.float64,
    ):
        if kernel_size < 1:
            raise NnError("kernel_size must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.W = glorot_uniform(
            rng, fan_in, fan_out, (out_channels, in_channels, kernel_size), dtype
        )
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cols: np.ndarray | None = None
        self._in_shape: tuple[int, int, int] | None = None

    def zero_grads(self) -> None:
        self.gW[...] = 0.0
        self.gb[...] = 0.0

    def out_length(self, length: int) -> int:
        if length < self.kernel_size:
            raise InputTooShort(
                f"input length {length} is shorter than kernel {self.kernel_size}"
            )
        return length - self.kernel_size + 1

    def _kernel_matrix(self) -> np.ndarray:
        # (K * C_in, C_out) with the k-major, channel-minor layout used below.
        return self.W.transpose(2, 1, 0).reshape(
            self.kernel_size * self.in_channels, self.out_channels
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"expected (B, L, {self.in_channels}), got {x.shape}")
        batch, length, _ = x.shape
        out_len = self.out_length(length)
        windows = np.lib.stride_tricks.sliding_window_view(x, self.kernel_size, axis=1)
        # windows: (B, out_len, C, K) -> columns (B * out_len, K * C)
        cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(
            batch * out_len, self.kernel_size * self.in_channels
        )
        self._cols = cols
        self._in_shape = x.shape
        out = cols @ self._kernel_matrix() + self.b
        return out.reshape(batch, out_len, self.out_channels)

    def backward(self, grad: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        batch, length, _ = self._in_shape
        out_len = grad.shape[1]
        flat = grad.reshape(batch * out_len, self.out_channels)
        g_kernel = self._cols.T @ flat
        self.gW += g_kernel.reshape(
            self.kernel_size, self.in_channels, self.out_channels
        ).transpose(2, 1, 0)
        self.gb += flat.sum(axis=0)
        if not need_input_grad:
            return None
        d_cols = (flat @ self._kernel_matrix().T).reshape(
            batch, out_len, self.kernel_size, self.in_channels
        )
        dx = np.zeros(self._in_shape, dtype=grad.dtype)
        for k in range(self.kernel_size):
            dx[:, k : k + out_len, :] += d_cols[:, :, k, :]
        return dx


class GruLayer:
    """Gated recurrent unit over (B, T, F), returning the last hidden state.

    Gate equations, with all weight matrices stored input-major:
        z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
        r_t = sigmoid(x_t Wr + h_{t-1} Ur + br)
        c_t = tanh(x_t Wh + r_t * (h_{t-1} Uh) + bh)
        h_t = z_t * h_{t-1} + (1 - z_t) * c_t
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.n_in = n_in
        self.hidden = hidden

        def w():
            return glorot_uniform(rng, n_in, hidden, (n_in, hidden), dtype)

        def u():
            return glorot_uniform(rng, hidden, hidden, (hidden, hidden), dtype)

        self.Wz, self.Uz, self.bz = w(), u(), np.zeros(hidden, dtype=dtype)
        self.Wr, self.Ur, self.br = w(), u(), np.zeros(hidden, dtype=dtype)
        self.Wh, self.Uh, self.bh = w(), u(), np.zeros(hidden, dtype=dtype)
        for name in self.PARAM_NAMES:
            setattr(self, "g" + name, np.zeros_like(getattr(self, name)))
        self._cache: dict | None = None

    PARAM_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")

    def zero_grads(self) -> None:
        for name in self.PARAM_NAMES:
            getattr(self, "g" + name)[...] = 0.0

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"expected (B, T, {self.n_in}), got {x.shape}")
        batch, steps, _ = x.shape
        dtype = self.Wz.dtype
        h = np.zeros((batch, self.hidden), dtype=dtype) if h0 is None else h0.astype(dtype)

        # One big input projection per gate for the whole sequence.
        xz = x @ self.Wz + self.bz
        xr = x @ self.Wr + self.br
        xh = x @ self.Wh + self.bh

        h_prev_steps = []
        z_steps = []
        r_steps = []
        c_steps = []
        q_steps = []
        for t in range(steps):
            z = sigmoid(xz[:, t, :] + h @ self.Uz)
            r = sigmoid(xr[:, t, :] + h @ self.Ur)
            q = h @ self.Uh
            c = np.tanh(xh[:, t, :] + r * q)
            h_prev_steps.append(h)
            z_steps.append(z)
            r_steps.append(r)
            c_steps.append(c)
            q_steps.append(q)
            h = z * h + (1.0 - z) * c

        self._cache = {
            "x": x,
            "h_prev": h_prev_steps,
            "z": z_steps,
            "r": r_steps,
            "c": c_steps,
            "q": q_steps,
        }
        return h

    def backward(self, grad_h: np.ndarray) -> None:
        """Backpropagate through time from the last hidden state.

        Input gradients are not produced; this layer always sits directly
        on the data.
        """
        cache = self._cache
        x = cache["x"]
        batch, steps, _ = x.shape

        daz_steps = [None] * steps
        dar_steps = [None] * steps
        dah_steps = [None] * steps
        dq_steps = [None] * steps

        dh = grad_h
        for t in range(steps - 1, -1, -1):
            h_prev = cache["h_prev"][t]
            z = cache["z"][t]
            r = cache["r"][t]
            c = cache["c"][t]
            q = cache["q"][t]

            dz = dh * (h_prev - c)
            daz = dz * z * (1.0 - z)
            dc = dh * (1.0 - z)
            dah = dc * (1.0 - c * c)
            dr = dah * q
            dar = dr * r * (1.0 - r)
            dq = dah * r

            daz_steps[t] = daz
            dar_steps[t] = dar
            dah_steps[t] = dah
            dq_steps[t] = dq

            dh = dh * z + daz @ self.Uz.T + dar @ self.Ur.T + dq @ self.Uh.T

        # Stack along time so each weight gradient is one matmul.
        x_all = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(batch * steps, self.n_in)
        h_all = np.concatenate(cache["h_prev"], axis=0)
        daz_all = np.concatenate(daz_steps, axis=0)
        dar_all = np.concatenate(dar_steps, axis=0)
        dah_all = np.concatenate(dah_steps, axis=0)
        dq_all = np.concatenate(dq_steps, axis=0)

        self.gWz += x_all.T @ daz_all
        self.gUz += h_all.T @ daz_all
        self.gbz += daz_all.sum(axis=0)
        self.gWr += x_all.T @ dar_all
        self.gUr += h_all.T @ dar_all
        self.gbr += dar_all.sum(axis=0)
        self.gWh += x_all.T @ dah_all
        self.gUh += h_all.T @ dq_all
        self.gbh += dah_all.sum(axis=0)
