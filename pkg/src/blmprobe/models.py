"""The seven selection architectures over stacked sentence embeddings.

Each model consumes a [B, 7, 768] stack (viewed as [B,1,7,768] for the
1DxSeq kinds, or [B,1,7,R,C] for the 2D kinds) and emits a single predicted
answer embedding [B, 768]. VAE kinds add a 5-dim latent bottleneck; dual
kinds add a mirror decoder that reconstructs the full input stack.

Layer shapes and parameter counts are fixed by construction; see
``parameter_report`` for the per-layer table.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, FormatError, ShapeError
from .objectives import LatentCode, sample_latent
from .optim import Parameter

MODEL_KINDS = (
    "Baseline_FFNN",
    "Baseline_CNN_1DxSeq",
    "Baseline_CNN_2D",
    "VAE_1DxSeq",
    "VAE_2D",
    "Dual_VAE_1DxSeq",
    "Dual_VAE_2D",
)

ALLOWED_RESHAPES = ((16, 48), (24, 32), (32, 24), (48, 16))

CONV3D_CHANNELS = 32
CONV3D_KERNEL = (3, 15, 15)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    embed_dim: int = 768
    seq_len: int = 7
    reshape: Optional[tuple[int, int]] = None
    latent: int = 5

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.is_2d:
            if self.reshape is None:
                raise ConfigError(f"{self.kind} requires a (rows, cols) reshape")
            rows, cols = self.reshape
            if rows * cols != self.embed_dim:
                raise ConfigError(f"reshape {self.reshape} does not factor embed_dim {self.embed_dim}")
            if tuple(self.reshape) not in ALLOWED_RESHAPES:
                raise ConfigError(f"reshape {self.reshape} not in allowed set {ALLOWED_RESHAPES}")
        elif self.reshape is not None:
            raise ConfigError(f"{self.kind} does not take a reshape (got {self.reshape})")

    @property
    def is_2d(self) -> bool:
        return self.kind.endswith("_2D")

    @property
    def is_vae(self) -> bool:
        return "VAE" in self.kind

    @property
    def is_dual(self) -> bool:
        return self.kind.startswith("Dual")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "embed_dim": self.embed_dim, "seq_len": self.seq_len,
                "reshape": list(self.reshape) if self.reshape else None, "latent": self.latent}

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        reshape = tuple(d["reshape"]) if d.get("reshape") else None
        return ModelSpec(kind=d["kind"], embed_dim=d.get("embed_dim", 768),
                         seq_len=d.get("seq_len", 7), reshape=reshape,
                         latent=d.get("latent", 5))


@dataclass
class ForwardOutput:
    pred_answer: Tensor                      # [B, 768]
    latent: Optional[LatentCode] = None      # VAE / dual kinds
    recon_input: Optional[Tensor] = None     # dual kinds, matches the input view


# ------------------------------------------------------------------- layers

def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class _Layer:
    type_name = "?"

    def __init__(self, name: str):
        self.name = name
        self.weight: Parameter
        self.bias: Parameter

    @property
    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    @property
    def param_count(self) -> int:
        return self.weight.data.size + self.bias.data.size

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class LinearLayer(_Layer):
    type_name = "Linear"

    def __init__(self, name: str, rng: np.random.Generator, in_features: int, out_features: int):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(f"{name}.weight",
                                Tensor(_fan_in_uniform(rng, (out_features, in_features), in_features)))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(out_features, dtype=np.float32)))

    def out_shape(self, in_shape):
        return (in_shape[0], self.out_features)

    def __call__(self, x):
        return ag.linear(x, self.weight.tensor, self.bias.tensor)


class ConvLayer(_Layer):
    def __init__(self, name: str, rng: np.random.Generator, in_ch: int, out_ch: int,
                 kernel: tuple[int, ...]):
        super().__init__(name)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, tuple(kernel)
        self.type_name = f"Conv{len(self.kernel)}d"
        fan_in = in_ch * math.prod(self.kernel)
        self.weight = Parameter(f"{name}.weight",
                                Tensor(_fan_in_uniform(rng, (out_ch, in_ch) + self.kernel, fan_in)))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(out_ch, dtype=np.float32)))

    def out_shape(self, in_shape):
        spatial = tuple(s - k + 1 for s, k in zip(in_shape[2:], self.kernel))
        return (in_shape[0], self.out_ch) + spatial

    def __call__(self, x):
        op = ag.conv2d if len(self.kernel) == 2 else ag.conv3d
        return op(x, self.weight.tensor, self.bias.tensor)


class ConvTransposeLayer(_Layer):
    def __init__(self, name: str, rng: np.random.Generator, in_ch: int, out_ch: int,
                 kernel: tuple[int, ...]):
        super().__init__(name)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, tuple(kernel)
        self.type_name = f"ConvTranspose{len(self.kernel)}d"
        fan_in = in_ch * math.prod(self.kernel)
        self.weight = Parameter(f"{name}.weight",
                                Tensor(_fan_in_uniform(rng, (in_ch, out_ch) + self.kernel, fan_in)))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(out_ch, dtype=np.float32)))

    def out_shape(self, in_shape):
        spatial = tuple(s + k - 1 for s, k in zip(in_shape[2:], self.kernel))
        return (in_shape[0], self.out_ch) + spatial

    def __call__(self, x):
        op = ag.conv_transpose2d if len(self.kernel) == 2 else ag.conv_transpose3d
        return op(x, self.weight.tensor, self.bias.tensor)


@dataclass
class Step:
    layer: _Layer
    view: Optional[tuple[int, ...]] = None   # batch-agnostic reshape applied first
    act: bool = False                        # leaky rectifier after the layer


# -------------------------------------------------------------------- model

class Model:
    """One built architecture: an ordered plan of sections of Steps."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.sections: dict[str, list[Step]] = {}
        self._build(rng)
        names = [p.name for p in self.parameters()]
        assert len(set(names)) == len(names), "parameter names must be unique"

    # construction ---------------------------------------------------------

    def _build(self, rng: np.random.Generator) -> None:
        s = self.spec
        e, t, lat = s.embed_dim, s.seq_len, s.latent
        if s.kind == "Baseline_FFNN":
            self.sections["ffnn"] = [
                Step(LinearLayer("ffnn.linear_1", rng, t * e, 2 * e), view=(-1,), act=True),
                Step(LinearLayer("ffnn.linear_2", rng, 2 * e, 2 * e), act=True),
                Step(LinearLayer("ffnn.linear_3", rng, 2 * e, e)),
            ]
            return

        if s.is_2d:
            rows, cols = s.reshape
            c3 = CONV3D_CHANNELS
            kd, kh, kw = CONV3D_KERNEL
            conv_sp = (t - kd + 1, rows - kh + 1, cols - kw + 1)
            flat = c3 * math.prod(conv_sp)
            encoder = [Step(ConvLayer("encoder.conv3d_1", rng, 1, c3, CONV3D_KERNEL),
                            view=(1, t, rows, cols), act=True)]
            ans_sp = (1,) + conv_sp[1:]
            ans_flat = c3 * math.prod(ans_sp)
            answer = [
                Step(LinearLayer("decoder_answer.linear_1", rng, lat, ans_flat), act=True),
                Step(ConvTransposeLayer("decoder_answer.convt3d_1", rng, c3, 1, (1, kh, kw)),
                     view=(c3,) + ans_sp),
            ]
            mirror = [
                Step(LinearLayer("decoder_mirror.linear_1", rng, lat, flat), act=True),
                Step(ConvTransposeLayer("decoder_mirror.convt3d_1", rng, c3, 1, CONV3D_KERNEL),
                     view=(c3,) + conv_sp),
            ]
        else:
            # three stacked 3x3 convolutions over the [1, 7, 768] stack
            conv_w = e - 6
            flat = 16 * 1 * conv_w
            encoder = [
                Step(ConvLayer("encoder.conv2d_1", rng, 1, 4, (3, 3)), view=(1, t, e), act=True),
                Step(ConvLayer("encoder.conv2d_2", rng, 4, 8, (3, 3)), act=True),
                Step(ConvLayer("encoder.conv2d_3", rng, 8, 16, (3, 3)), act=True),
            ]
            answer = [
                Step(LinearLayer("decoder_answer.linear_1", rng, lat, flat), act=True),
                Step(ConvTransposeLayer("decoder_answer.convt2d_1", rng, 16, 8, (1, 3)),
                     view=(16, 1, conv_w), act=True),
                Step(ConvTransposeLayer("decoder_answer.convt2d_2", rng, 8, 4, (1, 3)), act=True),
                Step(ConvTransposeLayer("decoder_answer.convt2d_3", rng, 4, 1, (1, 3))),
            ]
            mirror = [
                Step(LinearLayer("decoder_mirror.linear_1", rng, lat, flat), act=True),
                Step(ConvTransposeLayer("decoder_mirror.convt2d_1", rng, 16, 8, (3, 3)),
                     view=(16, 1, conv_w), act=True),
                Step(ConvTransposeLayer("decoder_mirror.convt2d_2", rng, 8, 4, (3, 3)), act=True),
                Step(ConvTransposeLayer("decoder_mirror.convt2d_3", rng, 4, 1, (3, 3))),
            ]

        if s.kind in ("Baseline_CNN_1DxSeq", "Baseline_CNN_2D"):
            self.sections["encoder"] = encoder
            self.sections["output"] = [Step(LinearLayer("output.linear_1", rng, flat, e), view=(-1,))]
            return

        encoder = encoder + [Step(LinearLayer("encoder.linear_latent", rng, flat, 2 * lat),
                                  view=(-1,))]
        self.sections["encoder"] = encoder
        if s.is_dual:
            self.sections["decoder_mirror"] = mirror
        self.sections["decoder_answer"] = answer

    # parameter access -----------------------------------------------------

    def layers(self) -> list[_Layer]:
        return [step.layer for steps in self.sections.values() for step in steps]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers() for p in layer.params]

    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.tensor.zero_grad()

    def astype(self, dtype) -> "Model":
        """Cast parameters in place (float64 shadow mode for gradient checks)."""
        for p in self.parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
        return self

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, tgt in own.items():
            src = np.asarray(arrays[name])
            if src.shape != tgt.shape:
                raise FormatError(f"checkpoint parameter {name} has shape {src.shape}, "
                                  f"expected {tgt.shape}")
            tgt[...] = src

    # dataflow ---------------------------------------------------------------

    def view_input(self, x: Tensor) -> Tensor:
        """The stacked view the encoder consumes (recon target for dual kinds)."""
        b = x.shape[0]
        s = self.spec
        if s.kind == "Baseline_FFNN":
            return x.reshape(b, s.seq_len * s.embed_dim)
        if s.is_2d:
            return x.reshape(b, 1, s.seq_len, *s.reshape)
        return x.reshape(b, 1, s.seq_len, s.embed_dim)

    def _run(self, name: str, x: Tensor) -> Tensor:
        b = x.shape[0]
        for step in self.sections[name]:
            if step.view is not None:
                x = x.reshape((b,) + step.view)
            x = step.layer(x)
            if step.act:
                x = ag.leaky_relu(x)
        return x

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None,
                train: bool = False) -> ForwardOutput:
        if x.ndim != 3 or x.shape[1:] != (self.spec.seq_len, self.spec.embed_dim):
            raise ShapeError(f"forward expects [B, {self.spec.seq_len}, {self.spec.embed_dim}]; "
                             f"got {x.shape}")
        b = x.shape[0]
        if self.spec.kind == "Baseline_FFNN":
            return ForwardOutput(pred_answer=self._run("ffnn", x))
        if not self.spec.is_vae:
            h = self._run("encoder", x)
            return ForwardOutput(pred_answer=self._run("output", h))

        h = self._run("encoder", x)                       # [B, 2L]
        lat = self.spec.latent
        mu, logvar = h[:, :lat], h[:, lat:]
        if train:
            if rng is None:
                raise ConfigError("training forward needs an rng for latent sampling")
            z = sample_latent(mu, logvar, rng)
        else:
            z = mu
        latent = LatentCode(mu=mu, logvar=logvar, sample=z)
        pred = self._run("decoder_answer", z).reshape(b, self.spec.embed_dim)
        recon = self._run("decoder_mirror", z) if self.spec.is_dual else None
        return ForwardOutput(pred_answer=pred, latent=latent, recon_input=recon)

    # reporting --------------------------------------------------------------

    def summary_rows(self, batch: int = 100) -> list[tuple[str, str, tuple[int, ...], Optional[int]]]:
        """(section, type, output shape, param count) per layer, by shape
        inference alone. VAE kinds include a parameter-free sampling row."""
        rows: list[tuple[str, str, tuple[int, ...], Optional[int]]] = []
        s = self.spec

        def walk(section: str, in_shape: tuple[int, ...]) -> tuple[int, ...]:
            shape = in_shape
            for step in self.sections[section]:
                if step.view is not None:
                    if step.view == (-1,):
                        shape = (shape[0], math.prod(shape[1:]))
                    else:
                        shape = (shape[0],) + step.view
                shape = step.layer.out_shape(shape)
                rows.append((section, step.layer.type_name, shape, step.layer.param_count))
            return shape

        inp = (batch, s.seq_len, s.embed_dim)
        if s.kind == "Baseline_FFNN":
            walk("ffnn", inp)
            return rows
        enc_shape = walk("encoder", inp)
        if not s.is_vae:
            walk("output", enc_shape)
            return rows
        rows.append(("sampling", "Sampling", (batch, s.latent), None))
        if s.is_dual:
            walk("decoder_mirror", (batch, s.latent))
        walk("decoder_answer", (batch, s.latent))
        return rows


def build_model(spec: ModelSpec, seed: int) -> Model:
    return Model(spec, seed)


def parameter_report(model: Model, batch: int = 100) -> str:
    """Render the per-layer table (type, output shape, parameter count)."""
    rows = model.summary_rows(batch=batch)
    lines = ["=" * 78,
             f"{'Layer (type)':<40}{'Output Shape':<24}{'Param #':>14}",
             "=" * 78,
             f"{model.spec.kind:<40}{'--':<24}{'--':>14}"]
    prev_section = None
    idx = 0
    for section, type_name, shape, count in rows:
        if section != prev_section:
            lines.append(f"--{section}")
            prev_section = section
        idx += 1
        shape_s = "[" + ", ".join(str(d) for d in shape) + "]"
        count_s = f"{count:,}" if count is not None else "--"
        lines.append(f"    {type_name + ': ' + str(idx):<36}{shape_s:<24}{count_s:>14}")
    lines.append("=" * 78)
    lines.append(f"Total params: {model.param_count():,}")
    lines.append("=" * 78)
    return "\n".join(lines)


# --------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"BLMC"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model: Model, config_echo: dict) -> bytes:
    """Serialize spec + config echo + named float32 parameter buffers."""
    params = model.state_arrays()
    manifest = [{"name": name, "shape": list(arr.shape)} for name, arr in params.items()]
    header = {"spec": model.spec.to_dict(), "config": config_echo, "params": manifest}
    header_b = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_b)))
    buf.write(header_b)
    for arr in params.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Model, config_echo: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, config_echo))


def load_checkpoint_bytes(blob: bytes) -> tuple[ModelSpec, dict, dict[str, np.ndarray]]:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError("truncated checkpoint header")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(blob) < 12 + header_len:
        raise FormatError("truncated checkpoint header")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    spec = ModelSpec.from_dict(header["spec"])
    arrays: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"truncated checkpoint data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    return spec, header["config"], arrays


def load_checkpoint(path) -> tuple[ModelSpec, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
