"""Deterministic rasterizer and Monte-Carlo physically based shader."""

from .brdf import (EPS, ROUGHNESS_FLOOR, Material, brdf_eval, d_ggx,
                   fresnel_f0, material_for_mesh, mis_weight,
                   orthonormal_basis, pdf_cosine, pdf_ggx, sample_cosine,
                   sample_ggx, schlick, schlick_weight, smith_g)
from .camera import Camera, RenderError
from .envmap import EnvMap
from .raster import NEAR_CLIP, GBuffer, rasterize
from .shade import (DEFAULT_COUNTS, FIREFLY_CLAMP, SHADOW_BIAS, PixelState,
                    RenderResult, pixel_state, render_loss, shade,
                    shading_gradients, shadow_test, srgb_encode,
                    tonemap_reinhard)

__all__ = [
    "EPS", "ROUGHNESS_FLOOR", "Material", "brdf_eval", "d_ggx", "fresnel_f0",
    "material_for_mesh", "mis_weight", "orthonormal_basis", "pdf_cosine",
    "pdf_ggx", "sample_cosine", "sample_ggx", "schlick", "schlick_weight",
    "smith_g", "Camera", "RenderError", "EnvMap", "NEAR_CLIP", "GBuffer",
    "rasterize", "DEFAULT_COUNTS", "FIREFLY_CLAMP", "SHADOW_BIAS",
    "PixelState", "RenderResult", "pixel_state", "render_loss", "shade",
    "shading_gradients", "shadow_test", "srgb_encode", "tonemap_reinhard",
]
