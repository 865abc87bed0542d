"""Invertible affine coupling transform with loadable parameters.

The transform is an exact bijection between an image and a pair
``(retained, texture)``:

* the image is lifted to channels by grouping 2x2 pixel blocks (four
  channels per image channel, at half resolution), which is itself
  invertible;
* a stack of affine coupling blocks transforms the lifted channels, each
  block rescaling one half of the channels by ``exp(s)`` and shifting it
  by ``t``, where ``s`` and ``t`` are computed from the other half;
* the final channels are split into the retained part (a pseudo image in
  the other modality's domain) and the split-off latent texture.

Scale and shift subnetworks are two 3x3 convolution stages with a tanh in
between; the scale output also passes through tanh before the exponential
so random parameters stay numerically tame. Every parameterization yields
a bijection: ``exp`` never vanishes and the inverse is closed-form.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch

DEFAULT_BLOCKS = 6
DEFAULT_HIDDEN = 4


def _conv3x3(stack: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution over a (c_in, h, w) stack with zero padding."""
    c_in, h, w = stack.shape
    padded = np.pad(stack, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((weight.shape[0], h, w))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum(
                "oi,ihw->ohw", weight[:, :, dy, dx], padded[:, dy : dy + h, dx : dx + w]
            )
    return out + bias[:, None, None]


@dataclass
class SubnetParams:
    """Two-stage 3x3 conv subnetwork: conv, tanh, conv."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def apply(self, stack: np.ndarray) -> np.ndarray:
        hidden = np.tanh(_conv3x3(stack, self.w1, self.b1))
        return _conv3x3(hidden, self.w2, self.b2)


@dataclass
class CouplingBlockParams:
    scale_net: SubnetParams
    shift_net: SubnetParams


@dataclass
class CouplingParams:
    """Full parameterization of the coupling transform.

    ``split`` gives the sizes of the (retained, split-off) channel groups
    of the lifted representation; blocks alternate which group they
    transform, conditioning on the other.
    """

    channels: int
    split: tuple
    hidden: int
    blocks: list

    def __post_init__(self):
        if self.split[0] + self.split[1] != self.channels:
            raise ValueError("split sizes must sum to the channel count")
        if self.split[0] < 1 or self.split[1] < 1:
            raise ValueError("both channel groups must be non-empty")

    @property
    def image_channels(self) -> int:
        return self.channels // 4


def _lift(planes: np.ndarray) -> np.ndarray:
    """Group 2x2 pixel blocks into channels (invertible downsampling)."""
    c, h, w = planes.shape
    out = np.zeros((4 * c, h // 2, w // 2))
    for i in range(c):
        out[4 * i + 0] = planes[i, 0::2, 0::2]
        out[4 * i + 1] = planes[i, 0::2, 1::2]
        out[4 * i + 2] = planes[i, 1::2, 0::2]
        out[4 * i + 3] = planes[i, 1::2, 1::2]
    return out


def _unlift(stack: np.ndarray) -> np.ndarray:
    c4, hh, hw = stack.shape
    c = c4 // 4
    out = np.zeros((c, hh * 2, hw * 2))
    for i in range(c):
        out[i, 0::2, 0::2] = stack[4 * i + 0]
        out[i, 0::2, 1::2] = stack[4 * i + 1]
        out[i, 1::2, 0::2] = stack[4 * i + 2]
        out[i, 1::2, 1::2] = stack[4 * i + 3]
    return out


def _split(stack: np.ndarray, params: CouplingParams):
    ka = params.split[0]
    return stack[:ka], stack[ka:]


def _blocks_forward(stack: np.ndarray, params: CouplingParams) -> np.ndarray:
    part_a, part_b = _split(stack, params)
    for index, block in enumerate(params.blocks):
        if index % 2 == 0:
            s = np.tanh(block.scale_net.apply(part_b))
            t = block.shift_net.apply(part_b)
            part_a = part_a * np.exp(s) + t
        else:
            s = np.tanh(block.scale_net.apply(part_a))
            t = block.shift_net.apply(part_a)
            part_b = part_b * np.exp(s) + t
    return np.concatenate([part_a, part_b], axis=0)


def _blocks_inverse(stack: np.ndarray, params: CouplingParams) -> np.ndarray:
    part_a, part_b = _split(stack, params)
    for index in range(len(params.blocks) - 1, -1, -1):
        block = params.blocks[index]
        if index % 2 == 0:
            s = np.tanh(block.scale_net.apply(part_b))
            t = block.shift_net.apply(part_b)
            part_a = (part_a - t) * np.exp(-s)
        else:
            s = np.tanh(block.scale_net.apply(part_a))
            t = block.shift_net.apply(part_a)
            part_b = (part_b - t) * np.exp(-s)
    return np.concatenate([part_a, part_b], axis=0)


def _image_to_planes(img: np.ndarray):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img[None, :, :], False
    if img.ndim == 3 and img.shape[2] == 3:
        return np.moveaxis(img, 2, 0), True
    raise ValueError("image must be (h, w) grayscale or (h, w, 3) RGB")


def coupling_forward(img: np.ndarray, params: CouplingParams):
    """Map an image to its (retained, texture) pair.

    The image needs even height and width (the 2x2 lift) and a channel
    count matching ``params``. Returns ``(retained, texture)`` where
    retained is ``(split[0], h/2, w/2)`` and texture ``(split[1], h/2, w/2)``.
    """
    planes, _ = _image_to_planes(img)
    c, h, w = planes.shape
    if h % 2 or w % 2:
        raise ShapeMismatch("coupling input needs even height and width")
    if 4 * c != params.channels:
        raise ShapeMismatch(
            f"image lifts to {4 * c} channels but parameters expect {params.channels}"
        )
    out = _blocks_forward(_lift(planes), params)
    return _split(out, params)


def coupling_inverse(retained: np.ndarray, texture: np.ndarray, params: CouplingParams):
    """Exact inverse of coupling_forward."""
    retained = np.asarray(retained, dtype=float)
    texture = np.asarray(texture, dtype=float)
    if retained.shape[0] != params.split[0] or texture.shape[0] != params.split[1]:
        raise ShapeMismatch("channel groups do not match the parameter split")
    if retained.shape[1:] != texture.shape[1:]:
        raise ShapeMismatch("retained and texture parts must share spatial size")
    stack = np.concatenate([retained, texture], axis=0)
    planes = _unlift(_blocks_inverse(stack, params))
    if params.image_channels == 1:
        return planes[0]
    return np.moveaxis(planes, 0, 2)


def sample_texture(params: CouplingParams, spatial_shape, seed: int) -> np.ndarray:
    """Seeded standard-normal latent texture of the split-off shape."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((params.split[1],) + tuple(spatial_shape))


def reconstruction_error(
    img: np.ndarray, params: CouplingParams, z_policy: str = "true-z", seed: int = 0
) -> float:
    """Mean absolute error of inverse(forward(img)) over all pixels.

    ``z_policy`` selects the texture fed to the inverse: ``"true-z"``
    reuses the forward output (round trip is exact up to float round-off),
    ``"sampled-z"`` draws a seeded standard normal instead.
    """
    retained, texture = coupling_forward(img, params)
    if z_policy == "true-z":
        z = texture
    elif z_policy == "sampled-z":
        z = sample_texture(params, texture.shape[1:], seed)
    else:
        raise ValueError("z_policy must be 'true-z' or 'sampled-z'")
    restored = coupling_inverse(retained, z, params)
    planes, _ = _image_to_planes(img)
    restored_planes, _ = _image_to_planes(restored)
    return float(np.abs(planes - restored_planes).mean())


def identity_coupling_params(image_channels: int = 1, blocks: int = DEFAULT_BLOCKS,
                             hidden: int = DEFAULT_HIDDEN) -> CouplingParams:
    """All-zero coefficients: the blocks reduce to the identity map."""
    return _build_params(image_channels, blocks, hidden, lambda shape: np.zeros(shape))


def random_coupling_params(
    rng: np.random.Generator,
    image_channels: int = 1,
    blocks: int = DEFAULT_BLOCKS,
    hidden: int = DEFAULT_HIDDEN,
    scale: float = 0.5,
) -> CouplingParams:
    """Seeded random coefficients (normal with the given std)."""
    return _build_params(
        image_channels, blocks, hidden, lambda shape: scale * rng.standard_normal(shape)
    )


def _build_params(image_channels, blocks, hidden, init) -> CouplingParams:
    channels = 4 * image_channels
    ka = channels // 2
    kb = channels - ka
    block_list = []
    for index in range(blocks):
        c_in, c_out = (kb, ka) if index % 2 == 0 else (ka, kb)
        nets = []
        for _ in range(2):  # scale net then shift net
            nets.append(
                SubnetParams(
                    w1=init((hidden, c_in, 3, 3)),
                    b1=init((hidden,)),
                    w2=init((c_out, hidden, 3, 3)),
                    b2=init((c_out,)),
                )
            )
        block_list.append(CouplingBlockParams(scale_net=nets[0], shift_net=nets[1]))
    return CouplingParams(channels=channels, split=(ka, kb), hidden=hidden, blocks=block_list)


_TENSOR_FIELDS = ("w1", "b1", "w2", "b2")


def _iter_tensors(params: CouplingParams):
    for b_idx, block in enumerate(params.blocks):
        for net_name, net in (("scale", block.scale_net), ("shift", block.shift_net)):
            for field_name in _TENSOR_FIELDS:
                yield f"block{b_idx}.{net_name}.{field_name}", getattr(net, field_name)


def save_coupling_params(params: CouplingParams, path) -> None:
    """Write parameters as flat little-endian float32 plus a JSON sidecar.

    ``path`` is the binary file; the sidecar lives next to it with a
    ``.json`` suffix and records block count, split sizes, and the layout
    (name and shape of every coefficient tensor, in storage order).
    """
    path = Path(path)
    layout = []
    chunks = []
    offset = 0
    for name, tensor in _iter_tensors(params):
        flat = np.asarray(tensor, dtype="<f4").reshape(-1)
        layout.append({"name": name, "shape": list(np.shape(tensor)), "offset": offset})
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")

    sidecar = {
        "format": "coupling-params-v1",
        "dtype": "<f4",
        "channels": params.channels,
        "split": list(params.split),
        "hidden": params.hidden,
        "blocks": len(params.blocks),
        "tensors": layout,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob.tobytes())
    os.replace(tmp, path)
    side_path = path.with_suffix(".json")
    side_tmp = side_path.with_name(side_path.name + ".tmp")
    side_tmp.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    os.replace(side_tmp, side_path)


def load_coupling_params(path) -> CouplingParams:
    """Read parameters written by save_coupling_params."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar.get("format") != "coupling-params-v1":
        raise ValueError("unrecognized coupling parameter file")
    blob = np.frombuffer(path.read_bytes(), dtype="<f4")

    tensors = {}
    for entry in sidecar["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        tensors[entry["name"]] = blob[start : start + size].astype(float).reshape(shape)

    blocks = []
    for b_idx in range(sidecar["blocks"]):
        nets = {}
        for net_name in ("scale", "shift"):
            kwargs = {
                f: tensors[f"block{b_idx}.{net_name}.{f}"] for f in _TENSOR_FIELDS
            }
            nets[net_name] = SubnetParams(**kwargs)
        blocks.append(CouplingBlockParams(scale_net=nets["scale"], shift_net=nets["shift"]))
    return CouplingParams(
        channels=sidecar["channels"],
        split=tuple(sidecar["split"]),
        hidden=sidecar["hidden"],
        blocks=blocks,
    )
