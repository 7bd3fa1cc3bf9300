"""Parameter containers and the attention building blocks.

Modules own Parameters (Tensors with requires_grad=True), expose them as a
flat dotted-name dict, and support exact state round-trips. Blocks follow the
pre-normalization convention: LayerNorm on the inputs of each attention / MLP
sub-block, residual connections around each.
"""

from __future__ import annotations

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.errors import ValidationError


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class: auto-registers Parameter/Module attributes in order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, m in self._modules.items():
            out.update(m.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Parameter]:
        """Unique parameters (weight sharing collapses duplicates)."""
        seen: dict[int, Parameter] = {}
        for p in self.named_parameters().values():
            seen.setdefault(id(p), p)
        return list(seen.values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValidationError(
                f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValidationError(
                    f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.copy()


class ModuleList:
    def __init__(self, modules):
        self._list = list(modules)

    def __getitem__(self, i):
        return self._list[i]

    def __len__(self):
        return len(self._list)

    def __iter__(self):
        return iter(self._list)

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for i, m in enumerate(self._list):
            out.update(m.named_parameters(f"{prefix}{i}."))
        return out


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.weight = Parameter(xavier(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.weight)
        if self.bias is not None:
            y = ag.add(y, self.bias)
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layernorm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, rng, num: int, dim: int):
        super().__init__()
        self.table = Parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(num, dim)))

    def __call__(self, idx: np.ndarray) -> Tensor:
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.table.data.shape[0]):
            raise ValidationError(
                f"embedding index out of range [0, {self.table.data.shape[0]})"
            )
        return ag.take(self.table, idx)


class Mlp(Module):
    """Two-layer GELU MLP, hidden width = ratio * dim."""

    def __init__(self, rng, dim: int, ratio: float = 2.0, out_dim: int | None = None):
        super().__init__()
        hidden = max(1, int(round(dim * ratio)))
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, out_dim if out_dim is not None else dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiheadAttention(Module):
    def __init__(self, rng, d_model: int, num_heads: int):
        super().__init__()
        if d_model % num_heads != 0:
            raise ValidationError("d_model must be divisible by num_heads")
        self.num_heads = num_heads
        self.d_model = d_model
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def __call__(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        if q_in.shape[-1] != self.d_model or kv_in.shape[-1] != self.d_model:
            raise ValidationError("attention input width must equal d_model")
        if kv_in.shape[0] == 0:
            raise ValidationError("attention requires a nonempty key/value set")
        h, dh = self.num_heads, self.d_model // self.num_heads
        lq, lk = q_in.shape[0], kv_in.shape[0]
        q = self.wq(q_in).reshape(lq, h, dh).transpose(1, 0, 2)
        k = self.wk(kv_in).reshape(lk, h, dh).transpose(1, 0, 2)
        v = self.wv(kv_in).reshape(lk, h, dh).transpose(1, 0, 2)
        out = ag.attention(q, k, v).transpose(1, 0, 2).reshape(lq, self.d_model)
        return self.wo(out)


class AttentionBlock(Module):
    """Pre-norm residual attention: x + MHA(ln_q(x), ln_kv(kv))."""

    def __init__(self, rng, d_model: int, num_heads: int):
        super().__init__()
        self.ln_q = LayerNorm(d_model)
        self.ln_kv = LayerNorm(d_model)
        self.mha = MultiheadAttention(rng, d_model, num_heads)

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        if kv is None:
            kv = x
        return ag.add(x, self.mha(self.ln_q(x), self.ln_kv(kv)))


class MlpBlock(Module):
    """Pre-norm residual MLP: x + MLP(ln(x))."""

    def __init__(self, rng, d_model: int, ratio: float = 2.0):
        super().__init__()
        self.ln = LayerNorm(d_model)
        self.mlp = Mlp(rng, d_model, ratio)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(x, self.mlp(self.ln(x)))


class CrossAttentionBlock(Module):
    """Cross-attention with residual plus a post-block MLP.

    The unit the decoders are assembled from; output shape equals the query
    shape regardless of the key/value count.
    """

    def __init__(self, rng, d_model: int, num_heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.attn = AttentionBlock(rng, d_model, num_heads)
        self.mlp = MlpBlock(rng, d_model, mlp_ratio)

    def __call__(self, queries: Tensor, keys_values: Tensor) -> Tensor:
        return self.mlp(self.attn(queries, keys_values))
