"""The stacked spatiotemporal forecaster.

Each block runs wavelet temporal attention (per-band multi-head
self-attention over the window, recombined by the inverse transform),
spatial attention biased by the sparse relevance mask, Chebyshev graph
convolution, and a three-branch gated temporal convolution. A final
prediction layer maps the per-node channel/time stack to the forecast
horizon. Everything is built on the reverse-mode engine in
:mod:`wavetraffic.tensor`, so one backward pass yields gradients for
every registered weight.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import wavelet
from .errors import DimensionError, ParameterError
from .graph import GraphBundle
from .tensor import Graph, Tensor

__all__ = ["ModelConfig", "ResidualAttention", "Model", "save_checkpoint", "load_checkpoint"]


@dataclass
class ModelConfig:
    nodes: int
    blocks: int = 4
    width: int = 33  # attention embedding of the node axis; divisible by heads
    heads: int = 3
    level: int = 2  # wavelet decomposition level; 0 disables the transform
    cheb_order: int = 3
    kernel_sizes: tuple = (3, 5, 7)
    pool_window: int = 2
    channels: int = 32
    window: int = 12
    horizon: int = 12
    in_channels: int = 1
    filter_name: str = "haar"
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("nodes", "blocks", "width", "heads", "cheb_order",
                     "pool_window", "channels", "window", "horizon", "in_channels"):
            if getattr(self, name) < 1:
                raise ParameterError(f"ModelConfig.{name} must be positive")
        if self.level < 0:
            raise ParameterError("ModelConfig.level must be >= 0")
        if self.width % self.heads != 0:
            raise ParameterError(
                f"width {self.width} not divisible by head count {self.heads}"
            )
        m, w = self.window, self.pool_window
        total = 0
        for s in self.kernel_sizes:
            if s > m:
                raise DimensionError(f"kernel size {s} exceeds window {m}")
            branch = m - s + 1
            if branch % w != 0:
                raise DimensionError(
                    f"branch length {branch} (kernel {s}) not divisible by pool window {w}"
                )
            total += branch // w
        if total != m:
            raise DimensionError(
                f"pooled branch lengths sum to {total}, expected window {m}: "
                f"kernels {self.kernel_sizes}, pool {w}, window {m}"
            )

    @property
    def head_width(self) -> int:
        return self.width // self.heads

    @property
    def n_components(self) -> int:
        return self.level + 1 if self.level > 0 else 1


class ResidualAttention:
    """Per-band, per-head time x time attention logits threaded across blocks.

    Each entry broadcasts against the (B, c, M, M) logits of the next
    block: the initial state is an (M, M) zero bias, and carried states
    are channel-averaged (B, 1, M, M) stacks.
    """

    def __init__(self, logits: list[list[Tensor]]):
        self.logits = logits

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ResidualAttention":
        m = cfg.window
        return cls([
            [T.constant(np.zeros((m, m))) for _ in range(cfg.heads)]
            for _ in range(cfg.n_components)
        ])

    def as_array(self) -> np.ndarray:
        return np.stack([np.stack([h.data for h in comp]) for comp in self.logits])


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Config + parameter registry + forward pass."""

    def __init__(self, cfg: ModelConfig, bundle: GraphBundle, seed: int = 0,
                 graph: Graph | None = None, init: bool = True):
        if bundle.cheb.order != cfg.cheb_order:
            raise DimensionError(
                f"Chebyshev basis order {bundle.cheb.order} != config order {cfg.cheb_order}"
            )
        if bundle.strg.mask.shape != (cfg.nodes, cfg.nodes):
            raise DimensionError(
                f"mask shape {bundle.strg.mask.shape} != ({cfg.nodes}, {cfg.nodes})"
            )
        self.cfg = cfg
        self.bundle = bundle
        self.graph = graph or Graph()
        if cfg.level > 0:
            self._mra_ops = wavelet.mra_matrices(cfg.filter_name, cfg.level, cfg.window)
        else:
            self._mra_ops = [np.eye(cfg.window)]
        self._cheb = [T.constant(t) for t in bundle.cheb.matrices]
        self._mask = T.constant(bundle.strg.mask)
        if init:
            self._register_parameters(np.random.default_rng(seed))

    # -- parameters --------------------------------------------------------

    def _register_parameters(self, rng):
        cfg = self.cfg
        g = self.graph
        n, d, dh = cfg.nodes, cfg.width, cfg.head_width
        for b in range(cfg.blocks):
            c_in = cfg.in_channels if b == 0 else cfg.channels
            c_out = cfg.channels
            for j in range(cfg.n_components):
                for h in range(cfg.heads):
                    pre = f"block{b}.wta.comp{j}.head{h}"
                    g.parameter(f"{pre}.wq", _uniform(rng, n, (n, dh)))
                    g.parameter(f"{pre}.wk", _uniform(rng, n, (n, dh)))
                    g.parameter(f"{pre}.wv", _uniform(rng, n, (n, dh)))
                pre = f"block{b}.wta.comp{j}"
                g.parameter(f"{pre}.wo", _uniform(rng, d, (d, n)))
                g.parameter(f"{pre}.fc_w", _uniform(rng, n, (n, n)))
                g.parameter(f"{pre}.fc_b", np.zeros(n))
                g.parameter(f"{pre}.ln_gain", np.ones(n))
                g.parameter(f"{pre}.ln_bias", np.zeros(n))
            pre = f"block{b}.sa"
            g.parameter(f"{pre}.collapse_w", _uniform(rng, c_in, (c_in,)))
            g.parameter(f"{pre}.collapse_b", np.zeros(1))
            g.parameter(f"{pre}.embed_w", _uniform(rng, cfg.window, (cfg.window, d)))
            g.parameter(f"{pre}.embed_b", np.zeros(d))
            sh = d // cfg.cheb_order
            for h in range(cfg.cheb_order):
                g.parameter(f"{pre}.head{h}.wk", _uniform(rng, d, (d, sh)))
                g.parameter(f"{pre}.head{h}.wq", _uniform(rng, d, (d, sh)))
                g.parameter(f"{pre}.head{h}.wm", _uniform(rng, n, (n, n)))
            pre = f"block{b}.gc"
            for k in range(cfg.cheb_order):
                g.parameter(f"{pre}.theta{k}", _uniform(rng, c_in, (c_in, c_out)))
            g.parameter(f"{pre}.bias", np.zeros(c_out))
            pre = f"block{b}.gtu"
            for i, s in enumerate(cfg.kernel_sizes):
                g.parameter(f"{pre}.kernel{i}", _uniform(rng, c_out * s, (2 * c_out, c_out, s)))
                g.parameter(f"{pre}.kbias{i}", np.zeros(2 * c_out))
            if c_in != c_out:
                g.parameter(f"{pre}.res_proj", _uniform(rng, c_in, (c_in, c_out)))
            g.parameter(f"{pre}.ln_gain", np.ones(cfg.window))
            g.parameter(f"{pre}.ln_bias", np.zeros(cfg.window))
        g.parameter("pred.collapse_w", _uniform(rng, cfg.channels, (cfg.channels,)))
        g.parameter("pred.collapse_b", np.zeros(1))
        g.parameter("pred.time_w", _uniform(rng, cfg.window, (cfg.window, cfg.horizon)))
        g.parameter("pred.time_b", np.zeros(cfg.horizon))

    def _p(self, name: str) -> Tensor:
        return self.graph.parameters[name]

    # -- block pieces ------------------------------------------------------

    def wavelet_temporal_attention(self, x: Tensor, a_prev: ResidualAttention,
                                   block: int, identity_f: bool = False,
                                   collect: list | None = None):
        """Decompose the window, attend per band, recombine by summation.

        ``x`` is (B, N, c, M); returns (y of the same shape, updated
        residual logits). ``identity_f`` is a test hook that skips the
        attention so the transform round-trip can be checked alone.
        """
        cfg = self.cfg
        if len(a_prev.logits) != cfg.n_components:
            raise DimensionError(
                f"residual attention carries {len(a_prev.logits)} components, "
                f"expected {cfg.n_components}"
            )
        outputs = []
        new_logits: list[list[Tensor]] = []
        scale = 1.0 / np.sqrt(cfg.head_width)
        for j, op in enumerate(self._mra_ops):
            comp = T.einsum("bncm,tm->bnct", x, T.constant(op))
            d_r = comp.transpose((0, 2, 3, 1))  # (B, c, M, N)
            if identity_f:
                outputs.append(d_r)
                new_logits.append(a_prev.logits[j])
                continue
            heads = []
            comp_logits = []
            for h in range(cfg.heads):
                pre = f"block{block}.wta.comp{j}.head{h}"
                q = T.einsum("bcmn,nd->bcmd", d_r, self._p(f"{pre}.wq"))
                k = T.einsum("bcmn,nd->bcmd", d_r, self._p(f"{pre}.wk"))
                v = T.einsum("bcmn,nd->bcmd", d_r, self._p(f"{pre}.wv"))
                logits = T.einsum("bcmd,bcpd->bcmp", q, k) * scale + a_prev.logits[j][h]
                # carried logits stay per batch element so windows are
                # processed independently of how they are batched
                b_sz, m = logits.shape[0], logits.shape[-1]
                comp_logits.append(logits.mean(axis=1).reshape(b_sz, 1, m, m))
                attn = T.softmax_last(logits)
                if collect is not None:
                    collect.append(attn)
                heads.append(T.einsum("bcmp,bcpd->bcmd", attn, v))
            pre = f"block{block}.wta.comp{j}"
            merged = T.einsum("bcmd,dn->bcmn", T.concat(heads, axis=-1), self._p(f"{pre}.wo"))
            fc_in = merged + d_r
            fc = T.einsum("bcmn,np->bcmp", fc_in, self._p(f"{pre}.fc_w")) + self._p(f"{pre}.fc_b")
            out = T.layer_norm(fc, self._p(f"{pre}.ln_gain"), self._p(f"{pre}.ln_bias"), cfg.eps)
            outputs.append(out)
            new_logits.append(comp_logits)
        combined = outputs[0]
        for o in outputs[1:]:
            combined = combined + o
        return combined.transpose((0, 3, 1, 2)), ResidualAttention(new_logits)

    def spatial_attention(self, y: Tensor, block: int) -> list[Tensor]:
        """Row-stochastic (B, N, N) attention per Chebyshev head."""
        cfg = self.cfg
        pre = f"block{block}.sa"
        y_star = y.transpose((0, 2, 1, 3))  # (B, c, N, M)
        collapsed = (
            T.einsum("bcnm,c->bnm", y_star, self._p(f"{pre}.collapse_w"))
            + self._p(f"{pre}.collapse_b")
        )
        y_e = T.einsum("bnm,md->bnd", collapsed, self._p(f"{pre}.embed_w")) + self._p(f"{pre}.embed_b")
        bias_scale = 1.0 / np.sqrt(cfg.width // cfg.cheb_order)
        attn = []
        for h in range(cfg.cheb_order):
            hp = f"{pre}.head{h}"
            kh = T.einsum("bnd,de->bne", y_e, self._p(f"{hp}.wk"))
            qh = T.einsum("bnd,de->bne", y_e, self._p(f"{hp}.wq"))
            logits = T.einsum("bne,bpe->bnp", kh, qh) * bias_scale
            logits = logits + self._p(f"{hp}.wm") * self._mask
            attn.append(T.softmax_last(logits))
        return attn

    def cheb_graph_conv(self, x: Tensor, attn: list[Tensor], block: int) -> Tensor:
        """z = sum_k theta_k ((T_k(Lt) * P^(k)) x) over the node axis."""
        cfg = self.cfg
        if len(attn) != cfg.cheb_order:
            raise DimensionError(
                f"attention stack has {len(attn)} heads, expected {cfg.cheb_order}"
            )
        pre = f"block{block}.gc"
        z = None
        for k in range(cfg.cheb_order):
            gk = self._cheb[k] * attn[k]  # (B, N, N)
            xg = T.einsum("bij,bjcm->bicm", gk, x)
            term = T.einsum("bicm,cd->bidm", xg, self._p(f"{pre}.theta{k}"))
            z = term if z is None else z + term
        return z + self._p(f"{pre}.bias").reshape(1, 1, cfg.channels, 1)

    def gated_temporal_conv(self, z: Tensor, x_in: Tensor, block: int) -> Tensor:
        """Three gated tanh branches, pooled and concatenated back to M."""
        cfg = self.cfg
        pre = f"block{block}.gtu"
        c = cfg.channels
        branches = []
        for i, _s in enumerate(cfg.kernel_sizes):
            q = T.conv1d(z, self._p(f"{pre}.kernel{i}"), stride=1,
                         bias=self._p(f"{pre}.kbias{i}"))
            e = q[:, :, :c, :]
            f = q[:, :, c:, :]
            gated = T.tanh(e) * T.sigmoid(f)
            branches.append(T.avg_pool_last(gated, cfg.pool_window))
        cat = T.concat(branches, axis=-1)
        if cat.shape[-1] != cfg.window:
            raise DimensionError(
                f"concatenated branch length {cat.shape[-1]} != window {cfg.window}"
            )
        z_out = T.relu(cat + z)
        if x_in.shape[2] != c:
            x_in = T.einsum("bncm,cd->bndm", x_in, self._p(f"{pre}.res_proj"))
        out = T.relu(x_in + z_out)
        return T.layer_norm(out, self._p(f"{pre}.ln_gain"), self._p(f"{pre}.ln_bias"), cfg.eps)

    # -- full network ------------------------------------------------------

    def forward(self, x, collect_attention: bool = False):
        """Map a (B, N, c0, M) or (N, c0, M) window batch to (B, N, horizon).

        Residual attention logits start at zero and thread through the
        stacked blocks. Returns the prediction ``Tensor`` (and, when
        requested, the list of all attention tensors for diagnostics).
        """
        cfg = self.cfg
        arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 3
        if squeeze:
            arr = arr[None]
        if arr.shape[1:] != (cfg.nodes, cfg.in_channels, cfg.window):
            raise DimensionError(
                f"forward: expected (B, {cfg.nodes}, {cfg.in_channels}, {cfg.window}), "
                f"got {arr.shape}"
            )
        h = x if isinstance(x, Tensor) and not squeeze else T.constant(arr)
        resid = ResidualAttention.zeros(cfg)
        collected: list[Tensor] = []
        sink = collected if collect_attention else None
        for b in range(cfg.blocks):
            y, resid = self.wavelet_temporal_attention(h, resid, b, collect=sink)
            attn = self.spatial_attention(y, b)
            z = self.cheb_graph_conv(y, attn, b)
            h = self.gated_temporal_conv(z, h, b)
            if collect_attention:
                collected.extend(attn)
        pred_in = (
            T.einsum("bncm,c->bnm", h, self._p("pred.collapse_w"))
            + self._p("pred.collapse_b")
        )
        out = T.einsum("bnm,mh->bnh", pred_in, self._p("pred.time_w")) + self._p("pred.time_b")
        if squeeze:
            out = out.reshape(cfg.nodes, cfg.horizon)
        if collect_attention:
            return out, collected
        return out

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data.copy()


# -- checkpointing ---------------------------------------------------------

_CONFIG_FIELDS = [
    "nodes", "blocks", "width", "heads", "level", "cheb_order", "kernel_sizes",
    "pool_window", "channels", "window", "horizon", "in_channels", "filter_name", "eps",
]


def _config_to_text(cfg: ModelConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    kwargs = {}
    for line in text.strip().splitlines():
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key == "filter_name":
            kwargs[key] = raw
        elif key == "kernel_sizes":
            kwargs[key] = tuple(int(v) for v in raw.split(","))
        elif key == "eps":
            kwargs[key] = float(raw)
        else:
            kwargs[key] = int(raw)
    return ModelConfig(**kwargs)


def _zip_entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp so identical states produce byte-identical archives
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def save_checkpoint(path, cfg: ModelConfig, state: dict[str, np.ndarray],
                    extras: dict[str, np.ndarray] | None = None):
    """Single archive: config as key=value text plus raw little-endian tensors."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(_zip_entry("config.txt"), _config_to_text(cfg))
        entries = dict(state)
        for name, arr in (extras or {}).items():
            entries[f"extra/{name}"] = arr
        manifest = []
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f8")
            shape = ",".join(str(s) for s in arr.shape)
            manifest.append(f"{name}\t{shape}")
            zf.writestr(_zip_entry(f"tensors/{name}"), arr.tobytes())
        zf.writestr(_zip_entry("manifest.txt"), "\n".join(manifest) + "\n")


def load_checkpoint(path):
    """Returns (config, parameter state dict, extras dict)."""
    with zipfile.ZipFile(path, "r") as zf:
        cfg = _config_from_text(zf.read("config.txt").decode())
        state, extras = {}, {}
        for line in zf.read("manifest.txt").decode().strip().splitlines():
            name, _, shape_txt = line.partition("\t")
            shape = tuple(int(s) for s in shape_txt.split(",") if s)
            arr = np.frombuffer(zf.read(f"tensors/{name}"), dtype="<f8").reshape(shape)
            if name.startswith("extra/"):
                extras[name[len("extra/"):]] = arr.copy()
            else:
                state[name] = arr.copy()
    return cfg, state, extras
