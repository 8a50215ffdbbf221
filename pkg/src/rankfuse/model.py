"""Dual-path ensemble network with exact manual forward and backward.

Scores are bucketized into learned embeddings, then fused along two parallel
paths: a relation-aware path (self-attention across objective embeddings,
followed by a cross-attention whose query is built from personalized
features) and a relation-agnostic path (a sigmoid gate over the embeddings
plus a first-order linear pathway over the raw scores). The three partial
scores are added: s = s1 + s2 + s3.

All forward/backward code is batched numpy; gradients are exact, with sparse
accumulation into the looked-up embedding rows.
"""

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ForwardTrace",
    "discretize",
    "relation_aware_forward",
    "relation_agnostic_forward",
    "forward",
    "backward",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
]

_CHECKPOINT_MAGIC = b"RANKFUSE-CKPT-1\n"


@dataclass(frozen=True)
class ModelConfig:
    n_objectives: int
    n_buckets: int = 300
    embed_dim: int = 8
    key_dim: int = 8
    personalized_features: tuple = ()  # ((name, cardinality), ...)
    personalized_dim: int = 4
    self_attention: bool = True
    cross_attention: bool = True
    personalized: bool = True
    gate: bool = True
    linear_path: bool = True
    linear_path_input: str = "raw_scores"  # or "embeddings"

    def __post_init__(self):
        if self.n_objectives < 2:
            raise ValueError("need at least 2 objectives")
        if self.n_buckets < 2:
            raise ValueError("need at least 2 buckets")
        if self.embed_dim < 1 or self.key_dim < 1:
            raise ValueError("invalid widths")
        if self.linear_path_input not in ("raw_scores", "embeddings"):
            raise ValueError("linear_path_input must be raw_scores or embeddings")
        if not self.self_attention and self.embed_dim != self.key_dim:
            raise ValueError("self_attention off requires embed_dim == key_dim")
        object.__setattr__(self, "personalized_features",
                           tuple((str(n), int(c)) for n, c in self.personalized_features))

    @property
    def n_features(self):
        return len(self.personalized_features)

    @property
    def personalized_width(self):
        return self.n_features * self.personalized_dim

    def to_dict(self):
        return {
            "n_objectives": self.n_objectives,
            "n_buckets": self.n_buckets,
            "embed_dim": self.embed_dim,
            "key_dim": self.key_dim,
            "personalized_features": [list(fc) for fc in self.personalized_features],
            "personalized_dim": self.personalized_dim,
            "self_attention": self.self_attention,
            "cross_attention": self.cross_attention,
            "personalized": self.personalized,
            "gate": self.gate,
            "linear_path": self.linear_path,
            "linear_path_input": self.linear_path_input,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["personalized_features"] = tuple(tuple(fc) for fc in d["personalized_features"])
        return cls(**d)


@dataclass
class ModelParams:
    """All trainable tensors, keyed accessors via items()/tensor dict."""

    embeddings: list          # M tables of [B, d]
    feature_tables: list      # per personalized feature, [cardinality, d_p]
    W_qr: np.ndarray          # [d, d_k]
    W_kr: np.ndarray
    W_vr: np.ndarray
    W_qp: np.ndarray          # [F * d_p, d_k]
    W_kp: np.ndarray          # [d_k, d_k]
    W_vp: np.ndarray
    w1: np.ndarray            # [d_k]
    b1: np.ndarray            # scalar, stored as shape ()
    W_g: np.ndarray           # [M * d, M]
    b_g: np.ndarray           # [M]
    w2: np.ndarray            # [M * d]
    b2: np.ndarray
    w3: np.ndarray            # [M] or [M * d]
    b3: np.ndarray
    w_ca: np.ndarray          # [F * d_p + M * d_k], concat variant head
    b_ca: np.ndarray

    def items(self):
        for m, e in enumerate(self.embeddings):
            yield f"embeddings.{m}", e
        for f, t in enumerate(self.feature_tables):
            yield f"feature_tables.{f}", t
        for name in ("W_qr", "W_kr", "W_vr", "W_qp", "W_kp", "W_vp",
                     "w1", "b1", "W_g", "b_g", "w2", "b2", "w3", "b3",
                     "w_ca", "b_ca"):
            yield name, getattr(self, name)

    def zeros_like(self):
        return ModelParams(
            embeddings=[np.zeros_like(e) for e in self.embeddings],
            feature_tables=[np.zeros_like(t) for t in self.feature_tables],
            **{k: np.zeros_like(getattr(self, k))
               for k in ("W_qr", "W_kr", "W_vr", "W_qp", "W_kp", "W_vp",
                         "w1", "b1", "W_g", "b_g", "w2", "b2", "w3", "b3",
                         "w_ca", "b_ca")},
        )

    def copy(self):
        return ModelParams(
            embeddings=[e.copy() for e in self.embeddings],
            feature_tables=[t.copy() for t in self.feature_tables],
            **{k: getattr(self, k).copy()
               for k in ("W_qr", "W_kr", "W_vr", "W_qp", "W_kp", "W_vp",
                         "w1", "b1", "W_g", "b_g", "w2", "b2", "w3", "b3",
                         "w_ca", "b_ca")},
        )


@dataclass
class ForwardTrace:
    """Cached activations of one batch forward pass, consumed by backward()."""

    scores: np.ndarray
    bucket_idx: np.ndarray
    feat_idx: np.ndarray
    x: np.ndarray             # [n, M, d]
    pvec: np.ndarray          # [n, F * d_p]
    Q_r: np.ndarray
    K_r: np.ndarray
    V_r: np.ndarray
    A_r: np.ndarray           # [n, M, M]
    x_r: np.ndarray           # [n, M, d_k]
    K_p: np.ndarray
    V_p: np.ndarray
    A_p: np.ndarray           # [n, M]
    ctx: np.ndarray           # [n, d_k]
    g: np.ndarray             # [n, M]
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s: np.ndarray


def init_params(config, seed):
    """Deterministic initialization: uniform(+-1/sqrt(fan_in)) projections,
    uniform(+-0.05) embeddings, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d, d_k, m = config.embed_dim, config.key_dim, config.n_objectives

    def proj(shape):
        bound = 1.0 / np.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape)

    embeddings = [rng.uniform(-0.05, 0.05, size=(config.n_buckets, d))
                  for _ in range(m)]
    feature_tables = [rng.uniform(-0.05, 0.05, size=(card, config.personalized_dim))
                      for _, card in config.personalized_features]
    pw = max(config.personalized_width, 1)
    return ModelParams(
        embeddings=embeddings,
        feature_tables=feature_tables,
        W_qr=proj((d, d_k)),
        W_kr=proj((d, d_k)),
        W_vr=proj((d, d_k)),
        W_qp=proj((pw, d_k)),
        W_kp=proj((d_k, d_k)),
        W_vp=proj((d_k, d_k)),
        w1=proj((d_k,)),
        b1=np.zeros(()),
        W_g=proj((m * d, m)),
        b_g=np.zeros(m),
        w2=proj((m * d,)),
        b2=np.zeros(()),
        w3=proj((m * d,)) if config.linear_path_input == "embeddings" else proj((m,)),
        b3=np.zeros(()),
        w_ca=proj((pw + m * d_k,)),
        b_ca=np.zeros(()),
    )


def discretize(scores, params, config):
    """Equal-width bucket lookup: index = min(floor(s * B), B - 1).

    Scores are clamped to [0, 1]; the lookup is piecewise constant, so no
    gradient flows to the scores. Returns (x [n, M, d], bucket_idx [n, M]).
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite scores")
    clipped = np.clip(s, 0.0, 1.0)
    idx = np.minimum((clipped * config.n_buckets).astype(np.intp),
                     config.n_buckets - 1)
    x = np.stack([params.embeddings[m][idx[:, m]]
                  for m in range(config.n_objectives)], axis=1)
    return x, idx


def _softmax_last(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _personalized_vector(feat_idx, params, config):
    n = feat_idx.shape[0]
    if config.n_features == 0:
        return np.zeros((n, max(config.personalized_width, 1)))
    parts = [params.feature_tables[f][feat_idx[:, f]]
             for f in range(config.n_features)]
    return np.concatenate(parts, axis=1)


def relation_aware_forward(x, pvec, params, config):
    """Self-attention over objective embeddings + personalized cross-attention.

    Returns (s1, partials dict). With self_attention off, x_r = x; with
    personalized off, the cross-attention query is zero (uniform A_p); with
    cross_attention off, s1 is an affine head over [pvec; flatten(x_r)].
    """
    n, m, _ = x.shape
    scale = 1.0 / np.sqrt(config.key_dim)
    if config.self_attention:
        Q_r = x @ params.W_qr
        K_r = x @ params.W_kr
        V_r = x @ params.W_vr
        A_r = _softmax_last(np.einsum("nmd,nkd->nmk", Q_r, K_r) * scale)
        x_r = np.einsum("nmk,nkd->nmd", A_r, V_r)
    else:
        Q_r = K_r = V_r = np.zeros((n, m, config.key_dim))
        A_r = np.tile(np.eye(m) if m else np.zeros((m, m)), (n, 1, 1))
        x_r = x
    if config.cross_attention:
        Q_p = pvec @ params.W_qp
        K_p = x_r @ params.W_kp
        V_p = x_r @ params.W_vp
        A_p = _softmax_last(np.einsum("nd,nmd->nm", Q_p, K_p) * scale)
        ctx = np.einsum("nm,nmd->nd", A_p, V_p)
        s1 = ctx @ params.w1 + params.b1
    else:
        K_p = V_p = np.zeros_like(x_r)
        A_p = np.full((n, m), 1.0 / m)
        ctx = np.zeros((n, config.key_dim))
        inp = np.concatenate([pvec, x_r.reshape(n, -1)], axis=1)
        s1 = inp @ params.w_ca + params.b_ca
    partials = {"Q_r": Q_r, "K_r": K_r, "V_r": V_r, "A_r": A_r, "x_r": x_r,
                "K_p": K_p, "V_p": V_p, "A_p": A_p, "ctx": ctx}
    return s1, partials


def relation_agnostic_forward(x, raw_scores, params, config):
    """Gated embedding path (s2) plus first-order linear pathway (s3)."""
    n, m, d = x.shape
    flat = x.reshape(n, m * d)
    if config.gate:
        g = _sigmoid(flat @ params.W_g + params.b_g)
    else:
        g = np.ones((n, m))
    gated = (x * g[:, :, None]).reshape(n, m * d)
    s2 = gated @ params.w2 + params.b2
    if config.linear_path:
        lin_in = flat if config.linear_path_input == "embeddings" else raw_scores
        s3 = lin_in @ params.w3 + params.b3
    else:
        s3 = np.zeros(n)
    return s2, s3, g


def forward(scores, feat_idx, params, config):
    """Batched forward pass. Returns (ensemble scores [n], ForwardTrace)."""
    s_in = np.asarray(scores, dtype=np.float64)
    feat_idx = np.asarray(feat_idx, dtype=np.intp).reshape(s_in.shape[0], -1)
    if s_in.ndim != 2 or s_in.shape[1] != config.n_objectives:
        raise ValueError("scores must be [n, M]")
    x, bucket_idx = discretize(s_in, params, config)
    pvec = _personalized_vector(feat_idx, params, config)
    if not config.personalized:
        # personalized ablation: zero query/concat input, uniform guidance
        pvec = np.zeros_like(pvec)
    s1, ra = relation_aware_forward(x, pvec, params, config)
    s2, s3, g = relation_agnostic_forward(x, s_in, params, config)
    s = s1 + s2 + s3
    trace = ForwardTrace(
        scores=s_in, bucket_idx=bucket_idx, feat_idx=feat_idx, x=x, pvec=pvec,
        Q_r=ra["Q_r"], K_r=ra["K_r"], V_r=ra["V_r"], A_r=ra["A_r"],
        x_r=ra["x_r"], K_p=ra["K_p"], V_p=ra["V_p"], A_p=ra["A_p"],
        ctx=ra["ctx"], g=g, s1=s1, s2=s2, s3=s3, s=s,
    )
    return s, trace


def _softmax_backward(a, da):
    # rows of a are softmax outputs over the last axis
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def backward(trace, dLds, params, config):
    """Exact reverse pass; returns a gradient record shaped like ModelParams."""
    ds = np.asarray(dLds, dtype=np.float64)
    if ds.shape != trace.s.shape:
        raise ValueError("dLds shape mismatch")
    n, m, d = trace.x.shape
    d_k = config.key_dim
    scale = 1.0 / np.sqrt(d_k)
    grads = params.zeros_like()
    dx = np.zeros_like(trace.x)
    dpvec = np.zeros_like(trace.pvec)

    # s3 path
    if config.linear_path:
        grads.b3 += ds.sum()
        if config.linear_path_input == "embeddings":
            flat = trace.x.reshape(n, m * d)
            grads.w3 += flat.T @ ds
            dx += (ds[:, None] * params.w3).reshape(n, m, d)
        else:
            grads.w3 += trace.scores.T @ ds

    # s2 path (gate)
    flat = trace.x.reshape(n, m * d)
    gated = (trace.x * trace.g[:, :, None]).reshape(n, m * d)
    grads.w2 += gated.T @ ds
    grads.b2 += ds.sum()
    dgated = (ds[:, None] * params.w2).reshape(n, m, d)
    dx += dgated * trace.g[:, :, None]
    if config.gate:
        dg = (dgated * trace.x).sum(axis=2)
        dzg = dg * trace.g * (1.0 - trace.g)
        grads.W_g += flat.T @ dzg
        grads.b_g += dzg.sum(axis=0)
        dx += (dzg @ params.W_g.T).reshape(n, m, d)

    # s1 path
    if config.cross_attention:
        grads.w1 += trace.ctx.T @ ds
        grads.b1 += ds.sum()
        dctx = ds[:, None] * params.w1
        dA_p = np.einsum("nd,nmd->nm", dctx, trace.V_p)
        dV_p = trace.A_p[:, :, None] * dctx[:, None, :]
        dlogits_p = _softmax_backward(trace.A_p, dA_p) * scale
        dQ_p = np.einsum("nm,nmd->nd", dlogits_p, trace.K_p)
        Q_p = trace.pvec @ params.W_qp
        dK_p = dlogits_p[:, :, None] * Q_p[:, None, :]
        grads.W_qp += trace.pvec.T @ dQ_p
        dpvec += dQ_p @ params.W_qp.T
        grads.W_kp += np.einsum("nmd,nme->de", trace.x_r, dK_p)
        grads.W_vp += np.einsum("nmd,nme->de", trace.x_r, dV_p)
        dx_r = dK_p @ params.W_kp.T + dV_p @ params.W_vp.T
    else:
        pw = trace.pvec.shape[1]
        inp = np.concatenate([trace.pvec, trace.x_r.reshape(n, -1)], axis=1)
        grads.w_ca += inp.T @ ds
        grads.b_ca += ds.sum()
        dinp = ds[:, None] * params.w_ca
        dpvec += dinp[:, :pw]
        dx_r = dinp[:, pw:].reshape(n, m, -1)

    # relation-aware attention
    if config.self_attention:
        dA_r = np.einsum("nmd,nkd->nmk", dx_r, trace.V_r)
        dV_r = np.einsum("nmk,nmd->nkd", trace.A_r, dx_r)
        dlogits_r = _softmax_backward(trace.A_r, dA_r) * scale
        dQ_r = np.einsum("nmk,nkd->nmd", dlogits_r, trace.K_r)
        dK_r = np.einsum("nmk,nmd->nkd", dlogits_r, trace.Q_r)
        grads.W_qr += np.einsum("nmd,nme->de", trace.x, dQ_r)
        grads.W_kr += np.einsum("nmd,nme->de", trace.x, dK_r)
        grads.W_vr += np.einsum("nmd,nme->de", trace.x, dV_r)
        dx += dQ_r @ params.W_qr.T + dK_r @ params.W_kr.T + dV_r @ params.W_vr.T
    else:
        dx += dx_r

    # sparse accumulation into embedding tables
    for om in range(m):
        np.add.at(grads.embeddings[om], trace.bucket_idx[:, om], dx[:, om, :])
    if config.personalized:
        off = 0
        for f in range(config.n_features):
            d_p = config.personalized_dim
            np.add.at(grads.feature_tables[f], trace.feat_idx[:, f],
                      dpvec[:, off:off + d_p])
            off += d_p
    return grads


def save_checkpoint(path, params, config):
    """Write a deterministic binary checkpoint (magic, JSON header, raw data).

    The layout round-trips bit-exactly: save -> load -> save is identical.
    """
    manifest = [{"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
                for name, arr in params.items()]
    header = json.dumps({"config": config.to_dict(), "tensors": manifest},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for _, arr in params.items():
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns (params, config)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a rankfuse checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        tensors = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * dtype.itemsize)
            tensors[entry["name"]] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    params = init_params(config, seed=0)
    for name, _ in list(params.items()):
        if name not in tensors:
            raise ValueError(f"checkpoint missing tensor {name}")
    params.embeddings = [tensors[f"embeddings.{m}"]
                         for m in range(config.n_objectives)]
    params.feature_tables = [tensors[f"feature_tables.{f}"]
                             for f in range(config.n_features)]
    for name in ("W_qr", "W_kr", "W_vr", "W_qp", "W_kp", "W_vp",
                 "w1", "b1", "W_g", "b_g", "w2", "b2", "w3", "b3",
                 "w_ca", "b_ca"):
        setattr(params, name, tensors[name])
    return params, config
