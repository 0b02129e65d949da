"""Tensor fusion of the three modality embeddings and its ablation views.

The fused cube has axes (language, visual, acoustic), each embedding
extended by a trailing constant 1.  With embedding sizes (L, V, A) the
constant slots sit at index L, V and A respectively, so for the default
sizes the cube is 129 x 33 x 33 and ``t[128, 32, 32] == 1``.  Every
flattening here is row-major over (language, visual, acoustic).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .embeddings import ModalityEmbeddings


class FusionVariant(str, enum.Enum):
    FULL = "full"
    EARLY = "early"
    UNIMODAL_ONLY = "unimodal"
    BIMODAL_ONLY = "bimodal"
    TRIMODAL_ONLY = "trimodal"
    NO_TRIMODAL = "notrimodal"
    LANGUAGE_ONLY = "language"
    VISUAL_ONLY = "visual"
    ACOUSTIC_ONLY = "acoustic"


class Region(str, enum.Enum):
    L = "L"
    V = "V"
    A = "A"
    LV = "LV"
    LA = "LA"
    VA = "VA"
    LVA = "LVA"


def augment_one(z) -> Tensor:
    """Append a constant 1 along the last axis.  Works on empty vectors."""
    z = ad.as_tensor(z)
    ones = Tensor(np.ones(z.shape[:-1] + (1,)))
    return ad.concat([z, ones], axis=-1)


@dataclass
class FusedTensor:
    t: Tensor  # (..., L+1, V+1, A+1)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Embedding sizes (L, V, A), i.e. the index of each constant slot."""
        return tuple(n - 1 for n in self.t.shape[-3:])


def tensor_fuse(e: ModalityEmbeddings) -> FusedTensor:
    for name, z in (("z_l", e.z_l), ("z_v", e.z_v), ("z_a", e.z_a)):
        if not np.isfinite(z.data).all():
            raise NonFiniteError(f"{name} contains non-finite values")
    return FusedTensor(ad.outer3(augment_one(e.z_l), augment_one(e.z_v), augment_one(e.z_a)))


def _block(f: FusedTensor, region: Region):
    L, V, A = f.dims
    full_l, full_v, full_a = slice(0, L), slice(0, V), slice(0, A)
    return {
        Region.L: (full_l, V, A),
        Region.V: (L, full_v, A),
        Region.A: (L, V, full_a),
        Region.LV: (full_l, full_v, A),
        Region.LA: (full_l, V, full_a),
        Region.VA: (L, full_v, full_a),
        Region.LVA: (full_l, full_v, full_a),
    }[Region(region)]


def region_size(region: Region, dims: tuple[int, int, int]) -> int:
    L, V, A = dims
    return {"L": L, "V": V, "A": A, "LV": L * V, "LA": L * A, "VA": V * A,
            "LVA": L * V * A}[Region(region).value]


def extract_subtensor(f: FusedTensor, region: Region) -> Tensor:
    """Flattened block of the cube; keeps any leading batch axes."""
    index = (Ellipsis,) + _block(f, region)
    block = f.t[index]
    lead = f.t.shape[:-3]
    return block.reshape(lead + (-1,))


_VARIANT_REGIONS = {
    FusionVariant.UNIMODAL_ONLY: (Region.L, Region.V, Region.A),
    FusionVariant.BIMODAL_ONLY: (Region.LV, Region.LA, Region.VA),
    FusionVariant.TRIMODAL_ONLY: (Region.LVA,),
    FusionVariant.NO_TRIMODAL: (Region.L, Region.V, Region.A, Region.LV, Region.LA, Region.VA),
}


def fused_dim(variant: FusionVariant, dims: tuple[int, int, int] = (128, 32, 32)) -> int:
    """Input width of the inference network for ``variant``."""
    variant = FusionVariant(variant)
    L, V, A = dims
    if variant is FusionVariant.FULL:
        return (L + 1) * (V + 1) * (A + 1)
    if variant is FusionVariant.EARLY:
        return L + V + A
    if variant is FusionVariant.LANGUAGE_ONLY:
        return L
    if variant is FusionVariant.VISUAL_ONLY:
        return V
    if variant is FusionVariant.ACOUSTIC_ONLY:
        return A
    return sum(region_size(r, dims) for r in _VARIANT_REGIONS[variant])


def fuse_for_variant(e: ModalityEmbeddings, variant: FusionVariant) -> Tensor:
    """The flat vector fed to the inference network under ``variant``."""
    variant = FusionVariant(variant)
    if variant is FusionVariant.EARLY:
        return ad.concat([e.z_l, e.z_v, e.z_a], axis=-1)
    if variant is FusionVariant.LANGUAGE_ONLY:
        return e.z_l
    if variant is FusionVariant.VISUAL_ONLY:
        return e.z_v
    if variant is FusionVariant.ACOUSTIC_ONLY:
        return e.z_a
    fused = tensor_fuse(e)
    if variant is FusionVariant.FULL:
        return fused.t.reshape(fused.t.shape[:-3] + (-1,))
    parts = [extract_subtensor(fused, r) for r in _VARIANT_REGIONS[variant]]
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)
