"""Candidate-set Q-network: embedding stack, transformer encoder, dueling heads.

Tokens are the encoded candidates of one observation (token 0 = current
architecture). Three linear+ReLU layers embed tokens into the latent space;
pre-layer-norm transformer blocks (self-attention restricted to valid tokens)
mix them; a per-token advantage head and a value head on the masked mean
pooled representation combine as Q_i = V + A_i - mean_valid(A). There are no
positional encodings: candidates are an unordered set and the is_current
input flag is the only positional signal.

Parameters live in a plain name->array dict (declaration order fixed, which
checkpoint serialization relies on). Gradients are computed manually and are
exact for the computation as written; float64 mode exists so tests can close
the loop against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericFault, SpecError
from . import layers as L

Params = dict[str, np.ndarray]

HUBER_DELTA = 1.0


@dataclass(frozen=True)
class NetConfig:
    input_dim: int | None = None  # resolved from the observation encoding
    d_model: int = 256
    embed_layers: int = 3
    n_transformer_layers: int = 2
    n_heads: int = 4
    ffn_hidden: int = 1024
    head_layers: int = 3
    head_hidden: int = 256

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise SpecError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for f in ("d_model", "embed_layers", "n_transformer_layers",
                  "n_heads", "ffn_hidden", "head_layers", "head_hidden"):
            if getattr(self, f) < 1:
                raise SpecError(f"{f} must be >= 1")
        if self.input_dim is not None and self.input_dim < 1:
            raise SpecError("input_dim must be >= 1")

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim, "d_model": self.d_model,
            "embed_layers": self.embed_layers,
            "n_transformer_layers": self.n_transformer_layers,
            "n_heads": self.n_heads, "ffn_hidden": self.ffn_hidden,
            "head_layers": self.head_layers, "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetConfig":
        return cls(**{k: int(v) for k, v in obj.items()})


@dataclass
class GradBundle:
    grads: Params
    global_l2: float


def _head_dims(cfg: NetConfig) -> list[tuple[int, int]]:
    dims = [cfg.d_model] + [cfg.head_hidden] * (cfg.head_layers - 1) + [1]
    return list(zip(dims[:-1], dims[1:]))


class QNetwork:
    """Stateless apply/grad engine for one architecture shape."""

    def __init__(self, cfg: NetConfig, check_finite: bool = True):
        if cfg.input_dim is None:
            raise SpecError("NetConfig.input_dim must be resolved before building a network")
        self.cfg = cfg
        self.check_finite = check_finite

    # --- parameters -------------------------------------------------------

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.cfg
        shapes: dict[str, tuple[int, ...]] = {}
        d_in = cfg.input_dim
        for i in range(cfg.embed_layers):
            shapes[f"embed.{i}.w"] = (d_in, cfg.d_model)
            shapes[f"embed.{i}.b"] = (cfg.d_model,)
            d_in = cfg.d_model
        for l in range(cfg.n_transformer_layers):
            p = f"block{l}."
            shapes[p + "ln1.g"] = (cfg.d_model,)
            shapes[p + "ln1.b"] = (cfg.d_model,)
            for name in ("wq", "wk", "wv", "wo"):
                shapes[p + f"attn.{name}"] = (cfg.d_model, cfg.d_model)
                shapes[p + f"attn.{name[1]}b"] = (cfg.d_model,)
            shapes[p + "ln2.g"] = (cfg.d_model,)
            shapes[p + "ln2.b"] = (cfg.d_model,)
            shapes[p + "ffn.w1"] = (cfg.d_model, cfg.ffn_hidden)
            shapes[p + "ffn.b1"] = (cfg.ffn_hidden,)
            shapes[p + "ffn.w2"] = (cfg.ffn_hidden, cfg.d_model)
            shapes[p + "ffn.b2"] = (cfg.d_model,)
        for head in ("adv", "val"):
            for i, (a, b) in enumerate(_head_dims(cfg)):
                shapes[f"{head}.{i}.w"] = (a, b)
                shapes[f"{head}.{i}.b"] = (b,)
        return shapes

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> Params:
        """Fan-in-scaled uniform weights, zero biases, unit layer-norm gains."""
        params: Params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".g"):
                params[name] = np.ones(shape, dtype=dtype)
            elif len(shape) == 1:
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return params

    # --- forward ----------------------------------------------------------

    def _finite(self, x: np.ndarray, where: str) -> None:
        if self.check_finite and not np.isfinite(x).all():
            raise NumericFault(f"non-finite activation after {where}")

    def forward(self, params: Params, tokens: np.ndarray, mask: np.ndarray,
                need_cache: bool = False):
        """tokens (B,T,D), mask (B,T) -> (q (B,T), cache).

        Masked token slots get a -inf Q sentinel; their contents cannot
        affect any valid entry.
        """
        cfg = self.cfg
        if tokens.shape[-1] != cfg.input_dim:
            raise ContractError(
                f"token dim {tokens.shape[-1]} != configured input_dim {cfg.input_dim}")
        if not mask[:, 0].all():
            raise ContractError("token 0 (current architecture) must be valid in every row")
        dtype = next(iter(params.values())).dtype
        h = np.ascontiguousarray(tokens, dtype=dtype)
        cache: dict = {"mask": mask}

        embeds = []
        for i in range(cfg.embed_layers):
            z, lin = L.linear_fwd(h, params[f"embed.{i}.w"], params[f"embed.{i}.b"])
            h, act = L.relu_fwd(z)
            embeds.append((lin, act))
        self._finite(h, "embed")
        cache["embeds"] = embeds

        blocks = []
        for l in range(cfg.n_transformer_layers):
            p = f"block{l}."
            a, ln1 = L.layernorm_fwd(h, params[p + "ln1.g"], params[p + "ln1.b"])
            q, lq = L.linear_fwd(a, params[p + "attn.wq"], params[p + "attn.qb"])
            k, lk = L.linear_fwd(a, params[p + "attn.wk"], params[p + "attn.kb"])
            v, lv = L.linear_fwd(a, params[p + "attn.wv"], params[p + "attn.vb"])
            att, atc = L.attention_fwd(
                L.split_heads(q, cfg.n_heads), L.split_heads(k, cfg.n_heads),
                L.split_heads(v, cfg.n_heads), mask)
            merged = L.merge_heads(att)
            o, lo = L.linear_fwd(merged, params[p + "attn.wo"], params[p + "attn.ob"])
            h = h + o
            f, ln2 = L.layernorm_fwd(h, params[p + "ln2.g"], params[p + "ln2.b"])
            z1, l1 = L.linear_fwd(f, params[p + "ffn.w1"], params[p + "ffn.b1"])
            r1, ract = L.relu_fwd(z1)
            z2, l2 = L.linear_fwd(r1, params[p + "ffn.w2"], params[p + "ffn.b2"])
            h = h + z2
            self._finite(h, f"block{l}")
            blocks.append((ln1, lq, lk, lv, atc, lo, ln2, l1, ract, l2))
        cache["blocks"] = blocks
        cache["trunk_out"] = h

        adv = h
        adv_layers = []
        for i, _ in enumerate(_head_dims(cfg)):
            z, lin = L.linear_fwd(adv, params[f"adv.{i}.w"], params[f"adv.{i}.b"])
            if i < cfg.head_layers - 1:
                adv, act = L.relu_fwd(z)
            else:
                adv, act = z, None
            adv_layers.append((lin, act))
        adv = adv[..., 0]  # (B, T)
        cache["adv_layers"] = adv_layers

        pooled, pool_cache = L.masked_mean_fwd(h, mask)
        cache["pool"] = pool_cache
        val = pooled
        val_layers = []
        for i, _ in enumerate(_head_dims(cfg)):
            z, lin = L.linear_fwd(val, params[f"val.{i}.w"], params[f"val.{i}.b"])
            if i < cfg.head_layers - 1:
                val, act = L.relu_fwd(z)
            else:
                val, act = z, None
            val_layers.append((lin, act))
        val = val[..., 0]  # (B,)
        cache["val_layers"] = val_layers
        self._finite(adv, "advantage head")
        self._finite(val, "value head")

        m = mask.astype(dtype)
        n_valid = m.sum(axis=1)
        adv_mean = (adv * m).sum(axis=1) / n_valid
        q = val[:, None] + adv - adv_mean[:, None]
        q = np.where(mask, q, -np.inf)
        cache.update(m=m, n_valid=n_valid)
        return (q, cache) if need_cache else (q, None)

    # --- loss and gradients -------------------------------------------------

    def loss_and_grads(self, params: Params, tokens: np.ndarray, mask: np.ndarray,
                       actions: np.ndarray, targets: np.ndarray,
                       is_weights: np.ndarray):
        """Importance-weighted Huber regression of Q(obs, action) on targets.

        Returns (loss, GradBundle, td_errors); td_errors are the signed
        per-sample residuals Q - target before weighting.
        """
        b = tokens.shape[0]
        if not (actions.shape == targets.shape == is_weights.shape == (b,)):
            raise ContractError("actions/targets/is_weights must all be (batch,)")
        if not mask[np.arange(b), actions].all():
            raise ContractError("some chosen actions are masked out")
        q, cache = self.forward(params, tokens, mask, need_cache=True)
        dtype = next(iter(params.values())).dtype
        rows = np.arange(b)
        td = (q[rows, actions] - targets).astype(dtype)
        w = is_weights.astype(dtype)
        absd = np.abs(td)
        huber = np.where(absd <= HUBER_DELTA, 0.5 * td * td, HUBER_DELTA * (absd - 0.5))
        loss = float((w * huber).mean())
        dloss_dq_sel = w * np.clip(td, -HUBER_DELTA, HUBER_DELTA) / b

        dq = np.zeros_like(cache["m"])
        dq[rows, actions] = dloss_dq_sel
        grads = self._backward(params, cache, dq)
        gl2 = global_l2(grads)
        if self.check_finite and not np.isfinite(gl2):
            raise NumericFault("non-finite gradient norm")
        return loss, GradBundle(grads=grads, global_l2=gl2), np.asarray(td, dtype=np.float64)

    def _backward(self, params: Params, cache: dict, dq: np.ndarray) -> Params:
        """dq: (B, T) gradient on valid Q entries (masked entries must be 0)."""
        cfg = self.cfg
        mask = cache["mask"]
        m, n_valid = cache["m"], cache["n_valid"]
        grads: Params = {name: np.zeros_like(p) for name, p in params.items()}

        # Q_i = V + A_i - mean_valid(A)
        dval = dq.sum(axis=1)                                 # (B,)
        dsum = dq.sum(axis=1) / n_valid                       # (B,)
        dadv = dq - dsum[:, None] * m                         # (B, T)

        # value head back to pooled
        g = dval[:, None]
        for i in reversed(range(cfg.head_layers)):
            lin, act = cache["val_layers"][i]
            if act is not None:
                g = L.relu_bwd(g, act)
            g, dw, db = L.linear_bwd(g, lin)
            grads[f"val.{i}.w"] += dw
            grads[f"val.{i}.b"] += db
        dh = L.masked_mean_bwd(g, cache["pool"])

        # advantage head back to tokens
        g = dadv[..., None]
        for i in reversed(range(cfg.head_layers)):
            lin, act = cache["adv_layers"][i]
            if act is not None:
                g = L.relu_bwd(g, act)
            g, dw, db = L.linear_bwd(g, lin)
            grads[f"adv.{i}.w"] += dw
            grads[f"adv.{i}.b"] += db
        dh = dh + g

        for l in reversed(range(cfg.n_transformer_layers)):
            p = f"block{l}."
            ln1, lq, lk, lv, atc, lo, ln2, l1, ract, l2 = cache["blocks"][l]
            # FFN residual branch
            dz2 = dh
            dr1, dw, db = L.linear_bwd(dz2, l2)
            grads[p + "ffn.w2"] += dw
            grads[p + "ffn.b2"] += db
            dz1 = L.relu_bwd(dr1, ract)
            df, dw, db = L.linear_bwd(dz1, l1)
            grads[p + "ffn.w1"] += dw
            grads[p + "ffn.b1"] += db
            dx, dg, db = L.layernorm_bwd(df, ln2)
            grads[p + "ln2.g"] += dg
            grads[p + "ln2.b"] += db
            dh = dh + dx
            # attention residual branch
            do = dh
            dmerged, dw, db = L.linear_bwd(do, lo)
            grads[p + "attn.wo"] += dw
            grads[p + "attn.ob"] += db
            datt = L.split_heads(dmerged, cfg.n_heads)
            dqh, dkh, dvh = L.attention_bwd(datt, atc)
            da = np.zeros_like(dh)
            for dxh, wname, lcache in ((dqh, "q", lq), (dkh, "k", lk), (dvh, "v", lv)):
                dflat = L.merge_heads(dxh)
                dpart, dw, db = L.linear_bwd(dflat, lcache)
                grads[p + f"attn.w{wname}"] += dw
                grads[p + f"attn.{wname}b"] += db
                da = da + dpart
            dx, dg, db = L.layernorm_bwd(da, ln1)
            grads[p + "ln1.g"] += dg
            grads[p + "ln1.b"] += db
            dh = dh + dx

        for i in reversed(range(cfg.embed_layers)):
            lin, act = cache["embeds"][i]
            dh = L.relu_bwd(dh, act)
            dh, dw, db = L.linear_bwd(dh, lin)
            grads[f"embed.{i}.w"] += dw
            grads[f"embed.{i}.b"] += db
        return grads


def global_l2(grads: Params) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.square(g, dtype=np.float64).sum())
    return float(np.sqrt(total))


def argmax_valid(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; masked entries are -inf so they never win."""
    return q.argmax(axis=1)


def max_valid(q: np.ndarray) -> np.ndarray:
    return q.max(axis=1)
