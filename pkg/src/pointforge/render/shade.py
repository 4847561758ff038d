"""Monte-Carlo shader over a geometry buffer, plus loss terms.

Each covered pixel integrates environment lighting with a fixed budget of
importance samples (default 6 GGX + 6 envmap + 4 cosine) combined by the
balance heuristic: every sample contributes f * L * cos(theta) * visibility
divided by sum_j n_j p_j(direction). Visibility is a screen-space depth
march. Sampling is detached: pixel states expose analytic radiance
derivatives w.r.t. material parameters with the sample directions and pdfs
held fixed.

Per-pixel sample uniforms come from one counter-based stream indexed by
coverage order, so images are bit-reproducible for a given seed and do not
depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import derive_seed, uniforms
from .brdf import (Material, brdf_eval, fresnel_f0, pdf_cosine, pdf_ggx,
                   sample_cosine, sample_ggx, schlick, schlick_weight,
                   specular_core, specular_core_droughness)
from .camera import Camera, RenderError
from .envmap import EnvMap
from .raster import GBuffer, NEAR_CLIP

SHADOW_BIAS = 1e-3
FIREFLY_CLAMP = 1e4
DEFAULT_COUNTS = (6, 6, 4)
_STAGE = "render/shade"


def _unit(v):
    lens = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, lens, out=np.zeros_like(v), where=lens > 1e-300)


def _march_shadowed(cam: Camera, depth_map: np.ndarray, points: np.ndarray,
                    dirs: np.ndarray, distance: float, steps: int) -> np.ndarray:
    """Screen-space occlusion for rays from ``points`` along ``dirs``.

    ``points`` has shape (P, 3), ``dirs`` (P, S, 3); the result (P, S) is
    True where any of the ``steps`` equally spaced samples along the first
    ``distance`` of the ray projects onto a stored depth that is nearer
    than the sample by more than the bias. Off-screen and background
    projections are ignored.
    """
    if steps < 1:
        raise RenderError("shadow march needs at least one step")
    if distance <= 0:
        raise RenderError("shadow march distance must be positive")
    h, w = depth_map.shape
    t = (np.arange(steps) + 1.0) / steps * distance
    pts = points[:, None, None, :] + dirs[:, :, None, :] * t[:, None]
    xy, z = cam.project(pts.reshape(-1, 3))
    finite = np.all(np.isfinite(xy), axis=1) & (z > NEAR_CLIP)
    xyf = np.where(finite[:, None], xy, -1.0)
    cols = np.floor(xyf[:, 0]).astype(np.int64)
    rows = np.floor(xyf[:, 1]).astype(np.int64)
    valid = finite & (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    stored = depth_map.ravel()[np.where(valid, rows * w + cols, 0)]
    shadowed = valid & (z > stored + SHADOW_BIAS)
    return shadowed.reshape(*dirs.shape[:-1], steps).any(axis=-1)


def shadow_test(gbuffer: GBuffer, pixel, direction, march_distance: float = 0.25,
                steps: int = 6, cam: Camera | None = None) -> bool:
    """True when the ray from a covered pixel toward ``direction`` is shadowed."""
    r, c = int(pixel[0]), int(pixel[1])
    if not gbuffer.mask[r, c]:
        raise RenderError("shadow test requires a covered pixel")
    cam = gbuffer.cam if cam is None else cam
    d = _unit(np.asarray(direction, np.float64).reshape(1, 1, 3))
    point = gbuffer.position[r, c][None, :]
    return bool(_march_shadowed(cam, gbuffer.depth, point, d,
                                march_distance, steps)[0, 0])


def _check_counts(counts):
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or any(c < 0 for c in counts) or sum(counts) == 0:
        raise RenderError("counts must be three non-negative ints with a positive sum")
    return counts


def _shading_arrays(gbuffer: GBuffer, env: EnvMap, mat: Material, seed: int,
                    counts, shadows: bool, shadow_distance: float,
                    shadow_steps: int):
    """Per-covered-pixel sample directions and their detached constants."""
    counts = _check_counts(counts)
    mask = gbuffer.mask
    pix = np.flatnonzero(mask.ravel())
    p = len(pix)
    n_ggx, n_env, n_cos = counts
    s = n_ggx + n_env + n_cos
    if p == 0:
        empty = np.zeros((0, s))
        return {"pix": pix, "counts": counts,
                "n": np.zeros((0, 3)), "v": np.zeros((0, 3)),
                "albedo": np.zeros((0, 3)), "dirs": np.zeros((0, s, 3)),
                "env_radiance": np.zeros((0, s, 3)), "visibility": empty,
                "denom": empty}

    pos = gbuffer.position.reshape(-1, 3)[pix]
    nrm = gbuffer.normal.reshape(-1, 3)[pix].copy()
    alb = gbuffer.albedo.reshape(-1, 3)[pix]
    view = _unit(gbuffer.cam.position - pos)
    backside = np.sum(nrm * view, axis=1) < 0.0
    nrm[backside] = -nrm[backside]

    u = uniforms(derive_seed(seed, _STAGE), (p, s, 2))
    dirs = np.zeros((p, s, 3))
    if n_ggx:
        dirs[:, :n_ggx], _ = sample_ggx(nrm[:, None, :], view[:, None, :],
                                        mat.roughness, u[:, :n_ggx])
    if n_env:
        d, _ = env.sample(u[:, n_ggx:n_ggx + n_env].reshape(-1, 2))
        dirs[:, n_ggx:n_ggx + n_env] = d.reshape(p, n_env, 3)
    if n_cos:
        dirs[:, n_ggx + n_env:], _ = sample_cosine(nrm[:, None, :],
                                                   u[:, n_ggx + n_env:])

    pdf_g = pdf_ggx(nrm[:, None, :], view[:, None, :], dirs, mat.roughness)
    pdf_e = env.pdf(dirs.reshape(-1, 3)).reshape(p, s)
    pdf_c = pdf_cosine(nrm[:, None, :], dirs)
    denom = n_ggx * pdf_g + n_env * pdf_e + n_cos * pdf_c

    visibility = np.ones((p, s))
    if shadows:
        hit = _march_shadowed(gbuffer.cam, gbuffer.depth, pos, dirs,
                              shadow_distance, shadow_steps)
        visibility = 1.0 - hit.astype(np.float64)

    return {"pix": pix, "counts": counts, "n": nrm, "v": view, "albedo": alb,
            "dirs": dirs, "env_radiance": env.eval(dirs),
            "visibility": visibility, "denom": denom}


def _sample_values(albedo, metallic, roughness, n, v, dirs, env_radiance,
                   visibility, denom):
    """Per-sample estimator terms f * L * cos * vis / denom, shape (..., S, 3)."""
    mat = Material(metallic=metallic, roughness=roughness)
    f = brdf_eval(mat, n[..., None, :], v[..., None, :], dirs,
                  albedo=albedo[..., None, :])
    cos = np.maximum(np.sum(n[..., None, :] * dirs, axis=-1), 0.0)
    scale = np.where(denom > 0.0, cos * visibility / np.maximum(denom, 1e-300), 0.0)
    return f * env_radiance * scale[..., None]


@dataclass(frozen=True)
class RenderResult:
    """HDR image, coverage opacity and the shader's clamp diagnostics."""

    image: np.ndarray
    opacity: np.ndarray
    nonfinite_samples: int = 0
    clamped_pixels: int = 0


def shade(gbuffer: GBuffer, env: EnvMap, mat: Material, seed: int = 0,
          counts=DEFAULT_COUNTS, shadows: bool = True,
          shadow_distance: float = 0.25, shadow_steps: int = 6) -> RenderResult:
    """Shade every covered pixel of the geometry buffer; deterministic in seed."""
    arrs = _shading_arrays(gbuffer, env, mat, seed, counts, shadows,
                           shadow_distance, shadow_steps)
    h, w = gbuffer.mask.shape
    image = np.zeros((h, w, 3))
    opacity = gbuffer.mask.astype(np.float64)
    if len(arrs["pix"]) == 0:
        return RenderResult(image=image, opacity=opacity)

    values = _sample_values(arrs["albedo"], mat.metallic, mat.roughness,
                            arrs["n"], arrs["v"], arrs["dirs"],
                            arrs["env_radiance"], arrs["visibility"],
                            arrs["denom"])
    bad = ~np.isfinite(values)
    nonfinite = int(bad.sum())
    if nonfinite:
        values = np.where(bad, 0.0, values)
    radiance = values.sum(axis=1)
    over = radiance > FIREFLY_CLAMP
    clamped = int(np.any(over, axis=1).sum())
    if clamped:
        radiance = np.minimum(radiance, FIREFLY_CLAMP)
    image.reshape(-1, 3)[arrs["pix"]] = radiance
    return RenderResult(image=image, opacity=opacity,
                        nonfinite_samples=nonfinite, clamped_pixels=clamped)


@dataclass(frozen=True)
class PixelState:
    """Everything needed to re-evaluate one pixel's radiance estimate.

    The sample directions, environment radiance, visibility and pdf
    denominators are detached constants; radiance and its gradients are
    functions of (albedo, metallic, roughness) only.
    """

    n: np.ndarray
    v: np.ndarray
    dirs: np.ndarray
    env_radiance: np.ndarray
    visibility: np.ndarray
    denom: np.ndarray
    albedo: np.ndarray
    metallic: float
    roughness: float

    def __post_init__(self):
        for name in ("n", "v", "dirs", "env_radiance", "visibility", "denom",
                     "albedo"):
            a = np.asarray(getattr(self, name), np.float64).copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def _weights(self) -> np.ndarray:
        """Detached per-sample factor L * cos * vis / denom, shape (S, 3)."""
        cos = np.maximum(self.dirs @ self.n, 0.0)
        scale = np.where(self.denom > 0.0,
                         cos * self.visibility / np.maximum(self.denom, 1e-300),
                         0.0)
        return self.env_radiance * scale[:, None]

    def sample_values(self) -> np.ndarray:
        return _sample_values(self.albedo, self.metallic, self.roughness,
                              self.n[None], self.v[None], self.dirs[None],
                              self.env_radiance[None], self.visibility[None],
                              self.denom[None])[0]

    def radiance(self) -> np.ndarray:
        return self.sample_values().sum(axis=0)

    def gradient(self, wrt: str) -> np.ndarray:
        """Analytic d(radiance RGB)/d(parameter) with samples held fixed.

        For ``albedo`` the result is the per-channel diagonal derivative
        d L_c / d albedo_c; parameters at their clamp bounds get the
        one-sided (interior) derivative.
        """
        weights = self._weights()
        core = specular_core(self.n[None, :], self.v[None, :], self.dirs,
                             self.roughness)
        lit = (core["nl"] > 0.0)[:, None]
        spec = core["spec"][:, None]
        q = schlick_weight(core["hv"])[:, None]
        if wrt == "albedo":
            df = (1.0 - self.metallic) / np.pi * lit + spec * self.metallic * (1.0 - q)
        elif wrt == "metallic":
            df = (-self.albedo / np.pi * lit
                  + spec * (1.0 - q) * (self.albedo - 0.04))
        elif wrt == "roughness":
            f0 = fresnel_f0(self.albedo, self.metallic)
            fresnel = schlick(core["hv"], f0)
            df = specular_core_droughness(core, self.roughness)[:, None] * fresnel
        else:
            raise RenderError("wrt must be albedo, metallic or roughness")
        return (weights * df).sum(axis=0)


def pixel_state(gbuffer: GBuffer, env: EnvMap, mat: Material, pixel,
                seed: int = 0, counts=DEFAULT_COUNTS, shadows: bool = True,
                shadow_distance: float = 0.25, shadow_steps: int = 6) -> PixelState:
    """Capture the detached shading state of one covered pixel.

    Uses the same uniform stream as :func:`shade`, so ``radiance()`` of the
    returned state reproduces that pixel of the shaded image.
    """
    r, c = int(pixel[0]), int(pixel[1])
    if not gbuffer.mask[r, c]:
        raise RenderError("pixel is not covered")
    arrs = _shading_arrays(gbuffer, env, mat, seed, counts, shadows,
                           shadow_distance, shadow_steps)
    rank = int(np.searchsorted(arrs["pix"], r * gbuffer.mask.shape[1] + c))
    return PixelState(n=arrs["n"][rank], v=arrs["v"][rank],
                      dirs=arrs["dirs"][rank],
                      env_radiance=arrs["env_radiance"][rank],
                      visibility=arrs["visibility"][rank],
                      denom=arrs["denom"][rank],
                      albedo=arrs["albedo"][rank],
                      metallic=mat.metallic, roughness=mat.roughness)


def shading_gradients(state: PixelState, wrt: str) -> np.ndarray:
    """Analytic gradient of a pixel's radiance w.r.t. a material parameter."""
    return state.gradient(wrt)


def tonemap_reinhard(image: np.ndarray) -> np.ndarray:
    """x / (1 + x) after clamping HDR values into [0, FIREFLY_CLAMP]."""
    x = np.clip(np.asarray(image, np.float64), 0.0, FIREFLY_CLAMP)
    return x / (1.0 + x)


def srgb_encode(image: np.ndarray) -> np.ndarray:
    """Linear [0, 1] values to the sRGB transfer curve."""
    x = np.clip(np.asarray(image, np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x,
                    1.055 * np.power(np.maximum(x, 1e-12), 1.0 / 2.4) - 0.055)


def render_loss(image: np.ndarray, opacity: np.ndarray, target_image: np.ndarray,
                target_mask: np.ndarray, weight_img: float = 1.0,
                weight_mask: float = 0.5, perceptual=None):
    """Weighted image + mask MSE between a render and a target.

    Images are Reinhard tone-mapped and sRGB encoded before the L2 term.
    ``perceptual`` is an optional callable on the two encoded images; it
    defaults to off. Returns (total, per-term breakdown).
    """
    image = np.asarray(image, np.float64)
    target_image = np.asarray(target_image, np.float64)
    opacity = np.asarray(opacity, np.float64)
    target_mask = np.asarray(target_mask, np.float64)
    if image.shape != target_image.shape or opacity.shape != target_mask.shape:
        raise RenderError("render and target dimensions differ")
    enc = srgb_encode(tonemap_reinhard(image))
    enc_target = srgb_encode(tonemap_reinhard(target_image))
    term_img = float(np.mean((enc - enc_target) ** 2))
    term_mask = float(np.mean((opacity - target_mask) ** 2))
    term_perc = float(perceptual(enc, enc_target)) if perceptual is not None else 0.0
    total = weight_img * term_img + weight_mask * term_mask + term_perc
    return total, {"image": term_img, "mask": term_mask, "perceptual": term_perc}
