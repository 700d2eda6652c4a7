"""Full-image multimodal super-resolution networks and their persistence.

DMSC runs two branches over same-sized input images: the guidance image
goes through a patch-extraction convolution (H1_side) and a per-position
LISTA encoder to produce side-information codes; the degraded target goes
through H1_main and a per-position side-information encoder that consumes
those codes.  A linear decoder maps each position's code to a flattened
patch, and an aggregation convolution (H2) folds the patch stack into the
output image.  DMSC+ adds an enhancement branch (H3, plain LISTA encoder,
its own decoder, H4) that sees only the target image; the two
reconstructions are summed.

The per-position encoders apply their weight matrices as 1x1 transforms
across the feature map, which is exactly the patch-vector arithmetic
written as one matrix product per stage.

Training minimizes the summed squared error between network output and the
ground-truth plane, with ADAM and nonnegativity clamps on the scalar
thresholds.  Checkpoints store every named tensor as IEEE-754 binary32 in
a little-endian container (see ``save_checkpoint``).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .dataset import PairedSample
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InvalidParameterError,
    NumericFailureError,
    ShapeMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from .imageops import ImagePlane, psnr

__all__ = [
    "ModelConfig",
    "DmscModel",
    "DmscPlusModel",
    "TrainReport",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
]

CHECKPOINT_MAGIC = b"DUSRCKPT"
CHECKPOINT_VERSION = 1

_PRECISIONS = ("single", "double")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference setup."""

    feat_filters: int = 100
    feat_kernel: int = 7
    code_dim: int = 128
    patch_dim: int = 7
    agg_kernel: int = 5
    stages: int = 3
    scale: int = 2
    precision: str = "single"

    def __post_init__(self):
        for name in ("feat_filters", "feat_kernel", "code_dim", "patch_dim", "agg_kernel", "stages"):
            if int(getattr(self, name)) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")
        if self.feat_kernel % 2 == 0 or self.agg_kernel % 2 == 0 or self.patch_dim % 2 == 0:
            raise InvalidParameterError("kernel and patch dims must be odd")
        if self.scale not in (2, 4, 6):
            raise InvalidParameterError(f"scale must be one of 2, 4, 6, got {self.scale}")
        if self.precision not in _PRECISIONS:
            raise InvalidParameterError(f"precision must be 'single' or 'double', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    @property
    def patch_size(self) -> int:
        return self.patch_dim * self.patch_dim


def _expected_shapes_dmsc(cfg: ModelConfig) -> dict[str, tuple]:
    m, k, c, p, a = cfg.feat_filters, cfg.feat_kernel, cfg.code_dim, cfg.patch_size, cfg.agg_kernel
    return {
        "h1_main.w": (m, 1, k, k), "h1_main.b": (m,),
        "h1_side.w": (m, 1, k, k), "h1_side.b": (m,),
        "lesita.R": (c, m), "lesita.Q": (c, c), "lesita.mu": (),
        "lista_side.W": (c, m), "lista_side.S": (c, c), "lista_side.gamma": (),
        "dec.Dx": (p, c),
        "h2.w": (1, p, a, a), "h2.b": (1,),
    }


def _expected_shapes_dmscplus(cfg: ModelConfig) -> dict[str, tuple]:
    m, k, c, p, a = cfg.feat_filters, cfg.feat_kernel, cfg.code_dim, cfg.patch_size, cfg.agg_kernel
    shapes = _expected_shapes_dmsc(cfg)
    shapes.update({
        "h3.w": (m, 1, k, k), "h3.b": (m,),
        "lista_enh.W": (c, m), "lista_enh.S": (c, c), "lista_enh.gamma": (),
        "dec_enh.Dx": (p, c),
        "h4.w": (1, p, a, a), "h4.b": (1,),
    })
    return shapes


def _init_params(cfg: ModelConfig, shapes: dict[str, tuple], seed: int) -> de.ParamStore:
    """Gaussian(0, 0.1^2) filters, zero biases, thresholds at 0.15."""
    rng = np.random.default_rng(seed)
    params = de.ParamStore(dtype=cfg.dtype)
    for name, shape in shapes.items():
        if name.endswith((".b",)):
            params.add(name, np.zeros(shape))
        elif name.endswith((".mu", ".gamma")):
            params.add(name, np.asarray(0.15))
        else:
            params.add(name, rng.normal(0.0, 0.1, size=shape))
    return params


def _check_pair(y, z):
    if y.shape != z.shape:
        raise DimensionMismatchError(f"main image {y.shape} and guidance image {z.shape} differ")


def _lista_codes(params, flat, w_name, s_name, g_name, stages):
    wz = de.matmul(params[w_name], flat)
    code = de.soft_thresh(wz, params[g_name])
    for _ in range(stages - 1):
        code = de.soft_thresh(de.add(de.matmul(params[s_name], code), wz), params[g_name])
    return code


def _lesita_codes(params, flat, side_code, stages):
    ry = de.matmul(params["lesita.R"], flat)
    code = de.lesita_act(ry, side_code, params["lesita.mu"])
    for _ in range(stages - 1):
        code = de.lesita_act(de.add(de.matmul(params["lesita.Q"], code), ry), side_code, params["lesita.mu"])
    return code


def _conv_features(params, img, w_name, b_name, out_dims):
    feat = de.conv2d(de.constant(img[None, :, :], name="input"), params[w_name], params[b_name], name=w_name)
    return de.reshape(feat, out_dims)


class _ModelBase:
    kind = ""

    def __init__(self, config: ModelConfig, params: de.ParamStore):
        expected = self.expected_shapes(config)
        if set(params.names()) != set(expected):
            raise ShapeMismatchError(f"parameter names do not match a {self.kind} model")
        for name, shape in expected.items():
            if params[name].value.shape != tuple(shape):
                raise ShapeMismatchError(
                    f"tensor {name!r} has shape {params[name].value.shape}, config expects {shape}")
        self.config = config
        self.params = params

    @classmethod
    def expected_shapes(cls, config: ModelConfig) -> dict[str, tuple]:
        raise NotImplementedError

    @classmethod
    def random_init(cls, config: ModelConfig, seed: int = 0):
        return cls(config, _init_params(config, cls.expected_shapes(config), seed))

    def graph(self, params: de.ParamStore, y: np.ndarray, z: np.ndarray) -> de.Tensor:
        raise NotImplementedError

    def forward_image(self, y_img: ImagePlane, z_img: ImagePlane) -> ImagePlane:
        """Inference on a single image pair (no tape)."""
        dtype = self.config.dtype
        y = np.asarray(y_img.pixels, dtype=dtype)
        z = np.asarray(z_img.pixels, dtype=dtype)
        with de.no_grad():
            out = self.graph(self.params, y, z)
        return ImagePlane(np.asarray(out.value, dtype=np.float64))

    def forward_margin(self, y: np.ndarray, z: np.ndarray) -> float:
        """Minimum distance of any activation input to a branch boundary."""
        with de.no_grad(), de.margin_tracking() as margins:
            self.graph(self.params, np.asarray(y, dtype=self.config.dtype),
                       np.asarray(z, dtype=self.config.dtype))
        return min(margins)

    @property
    def threshold_names(self) -> frozenset:
        return frozenset(n for n in self.params.names() if n.endswith((".mu", ".gamma")))

    def _dmsc_graph(self, params, y, z):
        _check_pair(y, z)
        h, w = y.shape
        cfg = self.config
        flat_dims = (cfg.feat_filters, h * w)
        side_feat = _conv_features(params, z, "h1_side.w", "h1_side.b", flat_dims)
        side_code = _lista_codes(params, side_feat, "lista_side.W", "lista_side.S",
                                 "lista_side.gamma", cfg.stages)
        main_feat = _conv_features(params, y, "h1_main.w", "h1_main.b", flat_dims)
        code = _lesita_codes(params, main_feat, side_code, cfg.stages)
        patches = de.reshape(de.matmul(params["dec.Dx"], code), (cfg.patch_size, h, w))
        out = de.conv2d(patches, params["h2.w"], params["h2.b"], name="h2.w")
        return de.reshape(out, (h, w))


class DmscModel(_ModelBase):
    """Side-information-fused reconstruction network."""

    kind = "dmsc"

    @classmethod
    def expected_shapes(cls, config: ModelConfig) -> dict[str, tuple]:
        return _expected_shapes_dmsc(config)

    def graph(self, params, y, z):
        return self._dmsc_graph(params, y, z)


class DmscPlusModel(_ModelBase):
    """DMSC plus an uncoupled enhancement branch on the target modality."""

    kind = "dmscplus"

    @classmethod
    def expected_shapes(cls, config: ModelConfig) -> dict[str, tuple]:
        return _expected_shapes_dmscplus(config)

    def graph(self, params, y, z):
        base = self._dmsc_graph(params, y, z)
        h, w = y.shape
        cfg = self.config
        enh_feat = _conv_features(params, y, "h3.w", "h3.b", (cfg.feat_filters, h * w))
        enh_code = _lista_codes(params, enh_feat, "lista_enh.W", "lista_enh.S",
                                "lista_enh.gamma", cfg.stages)
        patches = de.reshape(de.matmul(params["dec_enh.Dx"], enh_code), (cfg.patch_size, h, w))
        enh = de.reshape(de.conv2d(patches, params["h4.w"], params["h4.b"], name="h4.w"), (h, w))
        return de.add(base, enh, name="fuse")


_MODEL_KINDS = {"dmsc": DmscModel, "dmscplus": DmscPlusModel}


@dataclass
class TrainReport:
    """Per-epoch training losses and validation PSNRs."""

    epoch_losses: list[float] = field(default_factory=list)
    val_psnrs: list[float] = field(default_factory=list)

    def lines(self):
        return [
            f"{epoch + 1} {loss:.8e} {val:.4f}"
            for epoch, (loss, val) in enumerate(zip(self.epoch_losses, self.val_psnrs))
        ]


def train(model, train_samples: list[PairedSample], val_samples: list[PairedSample] | None = None,
          *, epochs: int, batch: int = 8, seed: int = 0, lr: float = 1e-4,
          ckpt_dir: str | None = None) -> TrainReport:
    """Seeded ADAM training on aligned crops.

    The loss is the summed squared error over each batch (accumulated
    sample by sample in a fixed order, so reruns are bit-identical).
    Emits one checkpoint per epoch when ``ckpt_dir`` is given.
    """
    if not train_samples:
        raise InvalidParameterError("training dataset is empty")
    if epochs < 1 or batch < 1:
        raise InvalidParameterError("epochs and batch must be >= 1")
    dtype = model.config.dtype
    ys = [np.asarray(s.y_up.pixels, dtype=dtype) for s in train_samples]
    zs = [np.asarray(s.z.pixels, dtype=dtype) for s in train_samples]
    xs = [np.asarray(s.x.pixels, dtype=dtype) for s in train_samples]
    val_samples = val_samples or []
    state = de.AdamState(lr=lr, nonneg=model.threshold_names)
    rng = np.random.default_rng(seed)
    report = TrainReport()
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)
    n = len(train_samples)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, batch)):
            model.params.zero_grad()
            batch_loss = 0.0
            for i in order[start:start + batch]:
                try:
                    batch_loss += de.forward_backward(
                        model.graph, model.params, (ys[i], zs[i]), xs[i], zero_grad=False)
                except NumericFailureError as err:
                    raise NumericFailureError(
                        f"non-finite loss in batch {batch_index}: {err}",
                        tensor_name=err.tensor_name, batch_index=batch_index) from err
            model.params.grads_ready = True
            de.adam_step(model.params, state)
            epoch_loss += batch_loss
        report.epoch_losses.append(epoch_loss)
        if val_samples:
            vals = [psnr(model.forward_image(s.y_up, s.z), s.x) for s in val_samples]
            finite = [v for v in vals if math.isfinite(v)]
            report.val_psnrs.append(sum(finite) / len(finite) if finite else math.inf)
        else:
            report.val_psnrs.append(float("nan"))
        if ckpt_dir:
            save_checkpoint(os.path.join(ckpt_dir, f"epoch_{epoch + 1:04d}.ckpt"),
                            model.params, model.config)
    return report


# ---------------------------------------------------------------------------
# Checkpoint container: little-endian, magic + version + config + tensors.

def _config_words(config: ModelConfig) -> list[int]:
    return [config.feat_filters, config.feat_kernel, config.code_dim, config.patch_dim,
            config.agg_kernel, config.stages, config.scale,
            _PRECISIONS.index(config.precision)]


def save_checkpoint(path: str, params, config: ModelConfig) -> None:
    """Write all named tensors as binary32, preserving insertion order."""
    items = params.items() if hasattr(params, "items") else params
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<8I", *_config_words(config))
    entries = [(name, np.asarray(getattr(value, "value", value))) for name, value in items]
    blob += struct.pack("<I", len(entries))
    for name, value in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", value.ndim)
        blob += struct.pack(f"<{value.ndim}I", *value.shape)
        blob += np.ascontiguousarray(value, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedFileError(f"checkpoint ends {self.pos + count - len(self.data)} bytes early")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str, expect_config: ModelConfig | None = None):
    """Read a checkpoint back as ``(tensors, config)``.

    ``tensors`` maps name -> float32 array exactly as stored.  When
    ``expect_config`` is given, any difference from the stored config is a
    shape-mismatch error.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise BadMagicError("not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    words = reader.unpack("<8I")
    if words[7] >= len(_PRECISIONS):
        raise ShapeMismatchError(f"unknown precision code {words[7]}")
    config = ModelConfig(*words[:7], precision=_PRECISIONS[words[7]])
    if expect_config is not None and config != expect_config:
        raise ShapeMismatchError(f"checkpoint config {config} does not match requested {expect_config}")
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(dims)
        tensors[name] = data.copy()
    return tensors, config


def load_model(path: str, expect_config: ModelConfig | None = None):
    """Rebuild a DMSC or DMSC+ model from a checkpoint.

    The model kind is inferred from the stored tensor names; shapes are
    validated against the stored config.
    """
    tensors, config = load_checkpoint(path, expect_config)
    kind = "dmscplus" if "h3.w" in tensors else "dmsc"
    cls = _MODEL_KINDS[kind]
    expected = cls.expected_shapes(config)
    if set(tensors) != set(expected):
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        raise ShapeMismatchError(f"tensor names do not match {kind}: missing={sorted(missing)}, extra={sorted(extra)}")
    params = de.ParamStore(dtype=config.dtype)
    for name in expected:
        if tensors[name].shape != tuple(expected[name]):
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {tensors[name].shape}, config expects {expected[name]}")
        params.add(name, tensors[name])
    return cls(config, params)
