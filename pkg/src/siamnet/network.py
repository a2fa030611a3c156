"""Part-based 5-layer CNN and its siamese wrapper.

Each of the three overlapping body parts runs through a shared first
convolution (C1), pooling plus cross-channel normalization, its own
second convolution (C3), pooling plus normalization again, and its own
affine map (F5); the three F5 outputs are summed into one feature
vector.  "General" mode keeps a single parameter set for both siamese
branches; "view specific" mode keeps two independent copies.
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, UsageError
from .layers import (
    conv2d,
    conv2d_backward,
    cross_channel_norm,
    cross_channel_norm_backward,
    fully_connected,
    fully_connected_backward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
)

MODES = ("general", "view_specific")
N_PARTS = 3
MAGIC = b"SNET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Geometry and channel widths of the part-based CNN."""

    image_h: int = 128
    image_w: int = 48
    part_h: int = 48
    part_offsets: tuple = (0, 40, 80)
    in_channels: int = 3
    c1_channels: int = 64
    c3_channels: int = 64
    c1_kernel: int = 7
    c3_kernel: int = 5
    feature_dim: int = 500
    norm_k0: float = 1.0
    norm_alpha: float = 1e-4
    norm_beta: float = 0.75
    norm_radius: int = 2

    def __post_init__(self):
        if len(self.part_offsets) != N_PARTS:
            raise DimensionError(f"need {N_PARTS} part offsets, got {len(self.part_offsets)}")
        if self.part_h % 4 or self.image_w % 4:
            raise DimensionError(
                f"part_h and image_w must be divisible by 4 (two pools), "
                f"got {self.part_h}x{self.image_w}"
            )
        if max(self.part_offsets) + self.part_h > self.image_h:
            raise DimensionError("part crops fall outside the image")

    @property
    def f5_input_dim(self) -> int:
        return self.c3_channels * (self.part_h // 4) * (self.image_w // 4)


@dataclass
class ParamSet:
    """One full copy of the learnable parameters, in declaration order."""

    c1_w: np.ndarray
    c1_b: np.ndarray
    c3_w: list  # one [c3,c1,k,k] tensor per part
    c3_b: list
    f5_w: list  # one [feature_dim, f5_input_dim] matrix per part
    f5_b: list

    def tensors(self):
        """All parameter arrays in the fixed serialization order."""
        out = [self.c1_w, self.c1_b]
        for p in range(N_PARTS):
            out += [self.c3_w[p], self.c3_b[p]]
        for p in range(N_PARTS):
            out += [self.f5_w[p], self.f5_b[p]]
        return out

    def replace_tensors(self, arrays):
        it = iter(arrays)
        self.c1_w, self.c1_b = next(it), next(it)
        for p in range(N_PARTS):
            self.c3_w[p], self.c3_b[p] = next(it), next(it)
        for p in range(N_PARTS):
            self.f5_w[p], self.f5_b[p] = next(it), next(it)


@dataclass
class NetworkParams:
    mode: str
    config: NetConfig
    sets: list = field(default_factory=list)  # one ParamSet, or two in view_specific

    def branch_set(self, branch: str) -> ParamSet:
        if branch not in ("a", "b"):
            raise UsageError(f"branch must be 'a' or 'b', got {branch!r}")
        if self.mode == "general":
            return self.sets[0]
        return self.sets[0] if branch == "a" else self.sets[1]

    def tensors(self):
        out = []
        for s in self.sets:
            out += s.tensors()
        return out

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors())


def _uniform(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _init_set(rng, cfg: NetConfig) -> ParamSet:
    k1, k3 = cfg.c1_kernel, cfg.c3_kernel
    c1_w = _uniform(rng, (cfg.c1_channels, cfg.in_channels, k1, k1),
                    cfg.in_channels * k1 * k1, cfg.c1_channels * k1 * k1)
    c3_w = [_uniform(rng, (cfg.c3_channels, cfg.c1_channels, k3, k3),
                     cfg.c1_channels * k3 * k3, cfg.c3_channels * k3 * k3)
            for _ in range(N_PARTS)]
    f5_w = [_uniform(rng, (cfg.feature_dim, cfg.f5_input_dim),
                     cfg.f5_input_dim, cfg.feature_dim)
            for _ in range(N_PARTS)]
    return ParamSet(
        c1_w=c1_w,
        c1_b=np.zeros(cfg.c1_channels),
        c3_w=c3_w,
        c3_b=[np.zeros(cfg.c3_channels) for _ in range(N_PARTS)],
        f5_w=f5_w,
        f5_b=[np.zeros(cfg.feature_dim) for _ in range(N_PARTS)],
    )


def init_network(mode: str = "general", seed: int = 0,
                 config: NetConfig | None = None) -> NetworkParams:
    """Fan-scaled uniform filters, zero biases; deterministic per seed."""
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = config or NetConfig()
    rng = np.random.default_rng(seed)
    n_sets = 2 if mode == "view_specific" else 1
    return NetworkParams(mode, cfg, [_init_set(rng, cfg) for _ in range(n_sets)])


def zero_grads(params: NetworkParams, branch: str) -> ParamSet:
    ps = params.branch_set(branch)
    return ParamSet(
        c1_w=np.zeros_like(ps.c1_w),
        c1_b=np.zeros_like(ps.c1_b),
        c3_w=[np.zeros_like(t) for t in ps.c3_w],
        c3_b=[np.zeros_like(t) for t in ps.c3_b],
        f5_w=[np.zeros_like(t) for t in ps.f5_w],
        f5_b=[np.zeros_like(t) for t in ps.f5_b],
    )


def _check_parts(cfg: NetConfig, parts: np.ndarray):
    want = (N_PARTS, cfg.in_channels, cfg.part_h, cfg.image_w)
    if parts.shape[1:] != want:
        raise DimensionError(f"part batch shape {parts.shape[1:]} does not match {want}")


def forward_batch(params: NetworkParams, parts: np.ndarray, branch: str = "a"):
    """Features for a batch of part stacks [N, 3, C, part_h, part_w].

    Returns (features [N, feature_dim], cache for backward_batch).
    """
    cfg = params.config
    parts = np.ascontiguousarray(parts, dtype=np.float64)
    if parts.ndim != 5:
        raise DimensionError(f"expected 5-D part batch, got {parts.ndim}-D")
    _check_parts(cfg, parts)
    ps = params.branch_set(branch)
    norm = dict(k0=cfg.norm_k0, alpha_n=cfg.norm_alpha, beta_n=cfg.norm_beta,
                radius=cfg.norm_radius)
    n = parts.shape[0]
    feat = np.zeros((n, cfg.feature_dim))
    cache = {"set_id": id(ps), "n": n, "parts": []}
    for p in range(N_PARTS):
        x = parts[:, p]
        a1 = conv2d(x, ps.c1_w, ps.c1_b)
        p1, idx1 = maxpool2(relu(a1))
        m1 = cross_channel_norm(p1, **norm)
        a3 = conv2d(m1, ps.c3_w[p], ps.c3_b[p])
        p3, idx3 = maxpool2(relu(a3))
        m3 = cross_channel_norm(p3, **norm)
        flat = m3.reshape(n, -1)
        feat += fully_connected(flat, ps.f5_w[p], ps.f5_b[p])
        cache["parts"].append(
            dict(x=x, a1=a1, p1=p1, idx1=idx1, m1=m1, a3=a3, p3=p3, idx3=idx3,
                 shape3=m3.shape, flat=flat))
    return feat, cache


def forward_features(params: NetworkParams, parts: np.ndarray,
                     branch: str = "a") -> np.ndarray:
    """Feature vector [feature_dim] for one part stack [3, C, part_h, part_w]."""
    feat, _ = forward_batch(params, np.asarray(parts, dtype=np.float64)[None], branch)
    return feat[0]


def backward_batch(params: NetworkParams, cache, grad_features: np.ndarray,
                   branch: str = "a") -> ParamSet:
    """Parameter gradients given d cost / d features [N, feature_dim].

    Sum fusion copies the upstream gradient to every part's F5 branch;
    the shared C1 accumulates over all three parts.
    """
    ps = params.branch_set(branch)
    if not isinstance(cache, dict) or cache.get("set_id") != id(ps):
        raise UsageError("cache does not belong to this parameter set (stale or missing)")
    grad_features = np.asarray(grad_features, dtype=np.float64)
    if grad_features.shape != (cache["n"], params.config.feature_dim):
        raise DimensionError(
            f"feature grad shape {grad_features.shape} vs "
            f"{(cache['n'], params.config.feature_dim)} mismatch")
    cfg = params.config
    norm = dict(k0=cfg.norm_k0, alpha_n=cfg.norm_alpha, beta_n=cfg.norm_beta,
                radius=cfg.norm_radius)
    g = zero_grads(params, branch)
    for p in range(N_PARTS):
        cp = cache["parts"][p]
        dflat, dw5, db5 = fully_connected_backward(cp["flat"], ps.f5_w[p], grad_features)
        g.f5_w[p] += dw5
        g.f5_b[p] += db5
        dm3 = dflat.reshape(cp["shape3"])
        dp3 = cross_channel_norm_backward(cp["p3"], dm3, **norm)
        da3 = relu_backward(cp["a3"], maxpool2_backward(cp["idx3"], dp3))
        dm1, dw3, db3 = conv2d_backward(cp["m1"], ps.c3_w[p], da3)
        g.c3_w[p] += dw3
        g.c3_b[p] += db3
        dp1 = cross_channel_norm_backward(cp["p1"], dm1, **norm)
        da1 = relu_backward(cp["a1"], maxpool2_backward(cp["idx1"], dp1))
        _, dw1, db1 = conv2d_backward(cp["x"], ps.c1_w, da1)
        g.c1_w += dw1
        g.c1_b += db1
    return g


def backward_features(params: NetworkParams, cache, grad_feature: np.ndarray,
                      branch: str = "a") -> ParamSet:
    """Single-sample flavor of backward_batch; grad_feature is [feature_dim]."""
    return backward_batch(params, cache, np.asarray(grad_feature)[None], branch)


def serialize(params: NetworkParams) -> bytes:
    """Model file: magic, version, mode byte, geometry, shape table, payload.

    All integers little-endian u32 (mode is one byte); parameters are
    little-endian float64 in declaration order.
    """
    cfg = params.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<B", MODES.index(params.mode)))
    buf.write(struct.pack("<6I", cfg.image_h, cfg.image_w, cfg.part_h, *cfg.part_offsets))
    buf.write(struct.pack("<3d", cfg.norm_k0, cfg.norm_alpha, cfg.norm_beta))
    buf.write(struct.pack("<I", cfg.norm_radius))
    tensors = params.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
    for t in tensors:
        buf.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return buf.getvalue()


def header_size(params: NetworkParams) -> int:
    """Bytes before the float payload for a given parameter layout."""
    n_dims = sum(t.ndim for t in params.tensors())
    return (len(MAGIC) + 4 + 1 + 6 * 4 + 3 * 8 + 4
            + 4 + len(params.tensors()) * 4 + n_dims * 4)


def _read(buf, n, what):
    b = buf.read(n)
    if len(b) != n:
        raise FormatError(f"truncated model file while reading {what}")
    return b


def deserialize(data: bytes) -> NetworkParams:
    buf = io.BytesIO(data)
    if _read(buf, 4, "magic") != MAGIC:
        raise FormatError("bad magic bytes; not a model file")
    (version,) = struct.unpack("<I", _read(buf, 4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    (mode_byte,) = struct.unpack("<B", _read(buf, 1, "mode"))
    if mode_byte >= len(MODES):
        raise FormatError(f"unknown mode byte {mode_byte}")
    mode = MODES[mode_byte]
    ih, iw, ph, o0, o1, o2 = struct.unpack("<6I", _read(buf, 24, "geometry"))
    k0, al, be = struct.unpack("<3d", _read(buf, 24, "normalization constants"))
    (radius,) = struct.unpack("<I", _read(buf, 4, "normalization radius"))
    (count,) = struct.unpack("<I", _read(buf, 4, "tensor count"))
    per_set = 2 + 2 * N_PARTS + 2 * N_PARTS
    n_sets = 2 if mode == "view_specific" else 1
    if count != per_set * n_sets:
        raise FormatError(f"shape table holds {count} tensors, want {per_set * n_sets}")
    shapes = []
    for i in range(count):
        (ndim,) = struct.unpack("<I", _read(buf, 4, f"tensor {i} rank"))
        if ndim == 0 or ndim > 4:
            raise FormatError(f"tensor {i} has implausible rank {ndim}")
        shapes.append(struct.unpack(f"<{ndim}I", _read(buf, 4 * ndim, f"tensor {i} dims")))
    arrays = []
    for i, shp in enumerate(shapes):
        n = int(np.prod(shp))
        raw = _read(buf, 8 * n, f"tensor {i} payload")
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shp).astype(np.float64))
    c1_shape = shapes[0]
    c3_shape = shapes[2]
    f5_shape = shapes[2 + 2 * N_PARTS]
    cfg = NetConfig(
        image_h=ih, image_w=iw, part_h=ph, part_offsets=(o0, o1, o2),
        in_channels=c1_shape[1], c1_channels=c1_shape[0], c3_channels=c3_shape[0],
        c1_kernel=c1_shape[2], c3_kernel=c3_shape[2], feature_dim=f5_shape[0],
        norm_k0=k0, norm_alpha=al, norm_beta=be, norm_radius=radius,
    )
    if f5_shape[1] != cfg.f5_input_dim:
        raise FormatError(
            f"shape table inconsistent: F5 input dim {f5_shape[1]} vs geometry "
            f"{cfg.f5_input_dim}")
    params = init_network(mode, seed=0, config=cfg)
    it = iter(arrays)
    for s in params.sets:
        s.replace_tensors([next(it) for _ in range(per_set)])
    return params


def save(params: NetworkParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path) -> NetworkParams:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise FormatError(f"model file not found: {path}") from exc
    return deserialize(data)
