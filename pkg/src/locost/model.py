"""Encoder-decoder assembly: gated bidirectional-SSM encoder, dense-attention decoder."""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import checkpoint, nn
from .graph import ParameterStore, no_grad
from .nn import ConfigError
from .ssm import PARAM_FIELDS, BiSSM, DiagonalSSM, init_s4d

PAD, EOS, BOS, UNK = 0, 1, 2, 3
NUM_SPECIAL = 4
EMBED_STD = 0.5


@dataclass
class ModelConfig:
    H: int = 64
    N: int = 16
    F: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    vocab: int = 8192
    ln_eps: float = 1e-6
    dropout: float = 0.0
    max_decode_len: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("H", "N", "F", "enc_layers", "dec_layers", "heads", "vocab", "max_decode_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.H % self.heads:
            raise ConfigError(f"H={self.H} is not divisible by heads={self.heads}")
        if self.vocab <= NUM_SPECIAL:
            raise ConfigError("vocab must leave room beyond the special tokens")
        if not self.ln_eps > 0:
            raise ConfigError("ln_eps must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @classmethod
    def full(cls):
        """Full-size (234M-parameter) hyperparameters."""
        return cls(H=768, N=256, F=2048, enc_layers=12, dec_layers=12, heads=12, vocab=32100)

    @classmethod
    def tiny(cls, vocab=32):
        """Gradient-check scale."""
        return cls(H=8, N=2, F=16, enc_layers=1, dec_layers=1, heads=2, vocab=vocab)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def param_count(config):
    """Closed-form parameter count; matches ``Model(config).params.num_values()``.

    embedding V*H (tied with the output projection)
    encoder layer: 2 norm gains, Wq/Wv/Wo, two diagonal SSMs of
        H (delta) + 2HN (eigenvalue parts) + 4NH (complex b, c), skip d, gated FF 3HF
    decoder layer: 3 norm gains, self- and cross-attention 4H^2 each, gated FF 3HF
    plus one final norm gain on each side.
    """
    H, N, F = config.H, config.N, config.F
    ssm = H + 2 * H * N + 4 * N * H
    enc = 2 * H + 3 * H * H + 2 * ssm + H + 3 * H * F
    dec = 3 * H + 8 * H * H + 3 * H * F
    return config.vocab * H + config.enc_layers * enc + config.dec_layers * dec + 2 * H


class EncoderLayer:
    """Parameter view for one gated bidirectional-SSM block."""

    def __init__(self, params, prefix, config):
        self.prefix = prefix
        self.eps = config.ln_eps
        self.norm1 = params[f"{prefix}.norm1"]
        self.wq = params[f"{prefix}.wq"]
        self.wv = params[f"{prefix}.wv"]
        self.wo = params[f"{prefix}.wo"]
        self.ssm_fwd = {f: params[f"{prefix}.ssm_fwd.{f}"] for f in PARAM_FIELDS}
        self.ssm_bwd = {f: params[f"{prefix}.ssm_bwd.{f}"] for f in PARAM_FIELDS}
        self.d = params[f"{prefix}.d"]
        self.norm2 = params[f"{prefix}.norm2"]
        self.ff = {k: params[f"{prefix}.ff.{k}"] for k in ("w1", "w2", "wo")}

    def bissm(self):
        """Snapshot of the current SSM parameters as plain arrays."""
        fwd = DiagonalSSM(*(self.ssm_fwd[f].data.copy() for f in PARAM_FIELDS))
        bwd = DiagonalSSM(*(self.ssm_bwd[f].data.copy() for f in PARAM_FIELDS))
        return BiSSM(fwd, bwd, self.d.data.copy())


class DecoderLayer:
    def __init__(self, params, prefix, config):
        self.prefix = prefix
        self.eps = config.ln_eps
        self.heads = config.heads
        self.norm1 = params[f"{prefix}.norm1"]
        self.norm2 = params[f"{prefix}.norm2"]
        self.norm3 = params[f"{prefix}.norm3"]
        self.self_attn = {k: params[f"{prefix}.self.{k}"] for k in ("wq", "wk", "wv", "wo")}
        self.cross_attn = {k: params[f"{prefix}.cross.{k}"] for k in ("wq", "wk", "wv", "wo")}
        self.ff = {k: params[f"{prefix}.ff.{k}"] for k in ("w1", "w2", "wo")}


def encoder_layer_forward(layer, U, mask=None, dropout=0.0, rng=None, training=False):
    """Pre-norm gated biSSM block followed by a pre-norm gated-GeLU block.

    ``mask`` (..., L) zeroes the SSM input at pad positions so right-padding
    does not leak into real positions.
    """
    H = layer.norm1.shape[0]
    if U.shape[-1] != H:
        raise ValueError(f"encoder input width {U.shape[-1]} != {H}")
    L = U.shape[-2]
    h = nn.layer_norm(U, layer.norm1, layer.eps)
    q = nn.matmul(h, layer.wq)
    v = nn.matmul(h, layer.wv)
    if mask is not None:
        v = nn.mul(v, np.asarray(mask, dtype=np.float64)[..., None])
    k_fwd = nn.ssm_kernel(layer.ssm_fwd, L)
    k_bwd = nn.ssm_kernel(layer.ssm_bwd, L)
    mixed = nn.bidirectional_conv(v, k_fwd, k_bwd, layer.d)
    gated = nn.matmul(nn.mul(q, mixed), layer.wo)
    out = nn.add(U, nn.dropout(gated, dropout, rng, training))
    ff = nn.gated_gelu_ff(nn.layer_norm(out, layer.norm2, layer.eps), layer.ff["w1"], layer.ff["w2"], layer.ff["wo"])
    return nn.add(out, nn.dropout(ff, dropout, rng, training))


def decoder_layer_forward(layer, y, enc, src_mask=None, dropout=0.0, rng=None, training=False):
    """Pre-norm causal self-attention, cross-attention over ``enc``, gated-GeLU FF."""
    H = layer.norm1.shape[0]
    if y.shape[-1] != H or enc.shape[-1] != H:
        raise ValueError(f"decoder widths {y.shape[-1]}/{enc.shape[-1]} != {H}")
    h = nn.layer_norm(y, layer.norm1, layer.eps)
    y = nn.add(y, nn.dropout(nn.multi_head_attention(h, h, layer.self_attn, layer.heads, causal=True), dropout, rng, training))
    h = nn.layer_norm(y, layer.norm2, layer.eps)
    cross = nn.multi_head_attention(h, enc, layer.cross_attn, layer.heads, key_mask=src_mask)
    y = nn.add(y, nn.dropout(cross, dropout, rng, training))
    h = nn.layer_norm(y, layer.norm3, layer.eps)
    ff = nn.gated_gelu_ff(h, layer.ff["w1"], layer.ff["w2"], layer.ff["wo"])
    return nn.add(y, nn.dropout(ff, dropout, rng, training))


class Model:
    """Parameters plus layer views. Embeddings are shared by encoder, decoder and output."""

    def __init__(self, config, seed=0):
        config.validate()
        self.config = config
        self.params = ParameterStore()
        rng = np.random.default_rng(seed)
        H, F = config.H, config.F
        p = self.params

        def dense(name, fan_in, fan_out):
            p.add(name, rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))

        # tied output logits have variance EMBED_STD**2 at init, keeping the loss near ln(vocab)
        p.add("embed", rng.normal(0.0, EMBED_STD, size=(config.vocab, H)))
        for i in range(config.enc_layers):
            pre = f"enc.{i}"
            p.add(f"{pre}.norm1", np.ones(H))
            for w in ("wq", "wv", "wo"):
                dense(f"{pre}.{w}", H, H)
            for direction in ("ssm_fwd", "ssm_bwd"):
                state = init_s4d(H, config.N, int(rng.integers(2**32)))
                for f in PARAM_FIELDS:
                    p.add(f"{pre}.{direction}.{f}", getattr(state, f))
            p.add(f"{pre}.d", rng.normal(size=H))
            p.add(f"{pre}.norm2", np.ones(H))
            dense(f"{pre}.ff.w1", H, F)
            dense(f"{pre}.ff.w2", H, F)
            dense(f"{pre}.ff.wo", F, H)
        p.add("enc.norm", np.ones(H))
        for i in range(config.dec_layers):
            pre = f"dec.{i}"
            for n in ("norm1", "norm2", "norm3"):
                p.add(f"{pre}.{n}", np.ones(H))
            for block in ("self", "cross"):
                for w in ("wq", "wk", "wv", "wo"):
                    dense(f"{pre}.{block}.{w}", H, H)
            dense(f"{pre}.ff.w1", H, F)
            dense(f"{pre}.ff.w2", H, F)
            dense(f"{pre}.ff.wo", F, H)
        p.add("dec.norm", np.ones(H))
        self._build_views()

    def _build_views(self):
        c = self.config
        self.encoder_layers = [EncoderLayer(self.params, f"enc.{i}", c) for i in range(c.enc_layers)]
        self.decoder_layers = [DecoderLayer(self.params, f"dec.{i}", c) for i in range(c.dec_layers)]
        self.embed = self.params["embed"]

    def ssm_parameter_groups(self):
        """Every DiagonalSSM parameter dict, for stability projection."""
        for layer in self.encoder_layers:
            yield layer.ssm_fwd
            yield layer.ssm_bwd

    def encode(self, src_ids, src_mask=None, training=False, rng=None):
        c = self.config
        x = nn.embedding(src_ids, self.embed)
        for layer in self.encoder_layers:
            x = encoder_layer_forward(layer, x, src_mask, c.dropout, rng, training)
        return nn.layer_norm(x, self.params["enc.norm"], c.ln_eps)

    def decode(self, tgt_in, enc, src_mask=None, training=False, rng=None):
        """Logits (..., Lt, vocab) for decoder inputs ``tgt_in``."""
        c = self.config
        tgt_in = np.asarray(tgt_in)
        y = nn.add(nn.embedding(tgt_in, self.embed), nn.sinusoidal_positions(tgt_in.shape[-1], c.H))
        for layer in self.decoder_layers:
            y = decoder_layer_forward(layer, y, enc, src_mask, c.dropout, rng, training)
        y = nn.layer_norm(y, self.params["dec.norm"], c.ln_eps)
        return nn.scale(nn.matmul(y, nn.transpose(self.embed)), c.H**-0.5)

    def num_parameters(self):
        return self.params.num_values()

    def save(self, path, meta=None, extra=None):
        header = {"config": self.config.to_dict(), "meta": meta or {}}
        tensors = dict(self.params.state())
        tensors.update(extra or {})
        checkpoint.save(path, header, tensors)

    @classmethod
    def load(cls, path):
        """Return ``(model, meta, extra_tensors)``."""
        header, tensors = checkpoint.load(path)
        model = cls(ModelConfig.from_dict(header["config"]))
        names = set(model.params.names())
        model.params.load_state({k: v for k, v in tensors.items() if k in names})
        extra = {k: v for k, v in tensors.items() if k not in names}
        return model, header.get("meta", {}), extra


def _batch(ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError("token sequences must be non-empty")
    return ids


def shift_right(tgt):
    out = np.full_like(tgt, PAD)
    out[:, 0] = BOS
    out[:, 1:] = tgt[:, :-1]
    return out


def forward_loss(model, src_ids, tgt_ids, training=False, rng=None):
    """Teacher-forced mean token cross-entropy; pad (id 0) is masked on both sides.

    Accepts single sequences or right-padded (B, L) batches.
    """
    src = _batch(src_ids)
    tgt = _batch(tgt_ids)
    if src.shape[0] != tgt.shape[0]:
        raise ValueError("source and target batch sizes differ")
    vocab = model.config.vocab
    for ids in (src, tgt):
        if ids.min() < 0 or ids.max() >= vocab:
            raise ValueError(f"token id out of range [0, {vocab})")
    src_mask = src != PAD
    enc = model.encode(src, src_mask, training, rng)
    logits = model.decode(shift_right(tgt), enc, src_mask, training, rng)
    return nn.cross_entropy(logits, tgt, ignore_id=PAD)


def greedy_generate(model, src_ids, max_len=None):
    """Argmax decoding from BOS until EOS or ``max_len`` tokens; EOS is not returned."""
    max_len = model.config.max_decode_len if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    src = _batch(src_ids)
    if src.shape[0] != 1:
        raise ValueError("greedy_generate takes one source sequence")
    out = []
    with no_grad():
        enc = model.encode(src)
        prefix = [BOS]
        for _ in range(max_len):
            logits = model.decode(np.asarray([prefix]), enc)
            nxt = int(np.argmax(logits.data[0, -1]))
            if nxt == EOS:
                break
            out.append(nxt)
            prefix.append(nxt)
    return out
