"""The conditional x-prediction MLP and its flat parameter container."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Var


@dataclass(frozen=True)
class Arch:
    data_dim: int = 2
    hidden: tuple[int, ...] = (64, 64, 64)
    activation: str = "silu"
    time_dim: int = 16
    n_cond: int = 9  # K real conditions + 1 null row
    cond_dim: int = 16

    def __post_init__(self):
        if self.activation != "silu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def null_cond(self) -> int:
        return self.n_cond - 1

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of every tensor, in flat-vector order."""
        shapes = [("cond_table", (self.n_cond, self.cond_dim))]
        fan_in = self.data_dim + self.time_dim + self.cond_dim
        for i, width in enumerate(self.hidden):
            shapes += [(f"w{i}", (fan_in, width)), (f"b{i}", (width,))]
            fan_in = width
        shapes += [("w_out", (fan_in, self.data_dim)), ("b_out", (self.data_dim,))]
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())

    def to_dict(self) -> dict:
        return {
            "data_dim": self.data_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_dim": self.time_dim,
            "n_cond": self.n_cond,
            "cond_dim": self.cond_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        return cls(**{**d, "hidden": tuple(d["hidden"])})


@dataclass
class ModelParams:
    arch: Arch
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if isinstance(self.values, Var):
            n = self.values.value.size
        else:
            self.values = np.asarray(self.values, dtype=np.float64)
            n = self.values.size
            if self.values.ndim != 1:
                raise ValueError("parameter values must be a flat vector")
        if n != self.arch.n_params():
            raise ValueError(f"expected {self.arch.n_params()} values for {self.arch}, got {n}")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, np.array(self.values, copy=True))

    def with_values(self, values) -> "ModelParams":
        return replace(self, values=values)

    def unpack(self) -> dict:
        out, offset = {}, 0
        for name, shape in self.arch.layout():
            size = int(np.prod(shape))
            out[name] = ad.reshape(ad.take(self.values, slice(offset, offset + size)), shape)
            offset += size
        return out


def init_params(arch: Arch, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in arch.layout():
        if name == "cond_table":
            chunks.append(rng.standard_normal(shape).ravel())
        elif name.startswith("w"):
            chunks.append((rng.standard_normal(shape) / np.sqrt(shape[0])).ravel())
        else:
            chunks.append(np.zeros(shape).ravel())
    return ModelParams(arch, np.concatenate(chunks))


def zeros_like_arch(arch: Arch) -> ModelParams:
    return ModelParams(arch, np.zeros(arch.n_params()))


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of t, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.exp(np.linspace(0.0, np.log(200.0), dim // 2))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _cond_rows(cond, batch: int, arch: Arch) -> np.ndarray:
    if cond is None:
        idx = np.full(batch, arch.null_cond)
    else:
        idx = np.asarray(cond)
        idx = np.broadcast_to(idx, (batch,)).astype(np.int64)
        idx = np.where(idx < 0, arch.null_cond, idx)
    if np.any(idx >= arch.n_cond):
        raise ValueError(f"condition index out of range for table of {arch.n_cond} rows")
    return idx


def mlp_forward(params: ModelParams, x_t, t, cond):
    """x-prediction f(x_t, t, cond).

    ``x_t`` is (dim,) or (B, dim); ``t`` scalar or (B,); ``cond`` an int, an
    int array (negative entries mean null) or None for the null row. Returns a
    Var when ``params.values`` is traced, otherwise an ndarray.
    """
    arch = params.arch
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x2 = x_t[None, :] if single else x_t
    if x2.ndim != 2 or x2.shape[1] != arch.data_dim:
        raise ValueError(f"x_t has shape {x_t.shape}, model expects last dim {arch.data_dim}")
    batch = x2.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("t must be finite")

    p = params.unpack()
    onehot = np.eye(arch.n_cond)[_cond_rows(cond, batch, arch)]
    cemb = onehot @ p["cond_table"]
    inp = np.concatenate([x2, time_embedding(t_arr, arch.time_dim)], axis=1)
    split = arch.data_dim + arch.time_dim
    w0 = p["w0"]
    h = inp @ ad.take(w0, slice(0, split)) + cemb @ ad.take(w0, slice(split, None)) + p["b0"]
    h = ad.silu(h)
    for i in range(1, len(arch.hidden)):
        h = ad.silu(h @ p[f"w{i}"] + p[f"b{i}"])
    out = h @ p["w_out"] + p["b_out"]
    if single:
        out = ad.reshape(out, (arch.data_dim,))
    return out


def value_and_grad(loss_fn, params: ModelParams) -> tuple[float, np.ndarray]:
    """Loss and exact gradient of ``loss_fn(params)`` w.r.t. ``params.values``."""
    return ad.grad_of(lambda v: loss_fn(params.with_values(v)), params.values)
