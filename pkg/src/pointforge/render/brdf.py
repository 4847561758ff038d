"""Metallic-roughness BRDF: Lambert diffuse plus GGX microfacet specular.

f = (1 - metallic) * albedo / pi + D * G * F / (4 (n.v)(n.l)) with the GGX
normal distribution D (alpha = roughness^2), height-correlated Smith
shadowing G and a Schlick Fresnel term whose F0 blends 0.04 with the albedo
by metallic. The specular quotient is evaluated in the algebraically
cancelled form D * F / (2 * (n.l * lambda_v + n.v * lambda_l)), which stays
finite at grazing angles without epsilon blow-up.

Also hosts the importance-sampling strategies (GGX half-vector lobe,
cosine-weighted hemisphere) with their exact pdfs, and the balance-heuristic
combination weight for multi-strategy Monte-Carlo estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import RenderError

EPS = 1e-7
ROUGHNESS_FLOOR = 0.03


@dataclass(frozen=True)
class Material:
    """Albedo (one RGB row or per-point rows) plus scalar metallic/roughness."""

    albedo: np.ndarray = (0.8, 0.8, 0.8)
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.albedo, np.float64))
        if a.ndim != 2 or a.shape[1] != 3 or not np.all(np.isfinite(a)):
            raise RenderError("albedo must be finite RGB rows")
        if a.min() < 0 or a.max() > 1:
            raise RenderError("albedo must lie in [0, 1]")
        a = a[0] if len(a) == 1 else a
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "albedo", a)
        m = float(self.metallic)
        if not 0.0 <= m <= 1.0:
            raise RenderError("metallic must lie in [0, 1]")
        object.__setattr__(self, "metallic", m)
        r = float(self.roughness)
        if not ROUGHNESS_FLOOR <= r <= 1.0:
            raise RenderError(f"roughness must lie in [{ROUGHNESS_FLOOR}, 1]")
        object.__setattr__(self, "roughness", r)


def material_for_mesh(mesh) -> Material:
    """Scene material from a mesh's scalar metallic/roughness attributes."""
    return Material(metallic=mesh.metallic,
                    roughness=min(max(mesh.roughness, ROUGHNESS_FLOOR), 1.0))


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def orthonormal_basis(n: np.ndarray):
    """Branchless tangent/bitangent frame for unit normals, shape (..., 3)."""
    n = np.asarray(n, np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    u = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, u


def d_ggx(nh, alpha):
    """GGX normal distribution evaluated at cos(theta_h)."""
    k = nh * nh * (alpha * alpha - 1.0) + 1.0
    return alpha * alpha / (np.pi * k * k)


def d_ggx_dalpha(nh, alpha):
    k = nh * nh * (alpha * alpha - 1.0) + 1.0
    return 2.0 * alpha / (np.pi * k * k) * (1.0 - 2.0 * alpha * alpha * nh * nh / k)


def smith_g(nv, nl, alpha):
    """Height-correlated Smith masking-shadowing for GGX."""
    denom = _smith_denom(nv, nl, alpha)
    return 2.0 * nl * nv / np.maximum(denom, EPS)


def _smith_lambda(x, alpha):
    return np.sqrt(x * x + alpha * alpha * (1.0 - x * x))


def _smith_denom(nv, nl, alpha):
    return nl * _smith_lambda(nv, alpha) + nv * _smith_lambda(nl, alpha)


def _smith_denom_dalpha(nv, nl, alpha):
    gv = _smith_lambda(nv, alpha)
    gl = _smith_lambda(nl, alpha)
    return (nl * alpha * (1.0 - nv * nv) / np.maximum(gv, EPS)
            + nv * alpha * (1.0 - nl * nl) / np.maximum(gl, EPS))


def schlick_weight(hv):
    """The (1 - h.v)^5 interpolation weight of the Schlick Fresnel term."""
    return (1.0 - np.clip(hv, 0.0, 1.0)) ** 5


def schlick(hv, f0):
    """Schlick Fresnel; ``f0`` broadcasts against ``hv[..., None]``."""
    q = schlick_weight(hv)
    return f0 + (1.0 - f0) * np.asarray(q)[..., None]


def specular_core(n, v, l, roughness):
    """Shared geometry terms of the specular quotient.

    Returns a dict with nl, nv, hv, nh, the scalar quotient
    ``spec = D * G / (4 nv nl)`` in cancelled form, and the validity mask
    (light above the surface, half-vector well defined).
    """
    alpha = roughness * roughness
    nl = _dot(n, l)
    nv = _dot(n, v)
    half = v + l
    hlen = np.linalg.norm(half, axis=-1)
    ok = (nl > 0.0) & (hlen > EPS)
    h = half / np.maximum(hlen, EPS)[..., None]
    nh = np.clip(_dot(n, h), -1.0, 1.0)
    hv = np.clip(_dot(h, v), 0.0, 1.0)
    nl_c = np.maximum(nl, 0.0)
    nv_c = np.maximum(nv, 0.0)
    denom = np.maximum(_smith_denom(nv_c, nl_c, alpha), EPS)
    spec = np.where(ok, d_ggx(nh, alpha) / (2.0 * denom), 0.0)
    return {"nl": nl, "nv": nv, "nl_c": nl_c, "nv_c": nv_c, "hv": hv, "nh": nh,
            "denom": denom, "spec": spec, "ok": ok, "alpha": alpha}


def specular_core_droughness(core, roughness):
    """d(spec)/d(roughness) for the cancelled quotient, same masking as primal."""
    alpha = core["alpha"]
    nh, denom = core["nh"], core["denom"]
    d = d_ggx(nh, alpha)
    dd = d_ggx_dalpha(nh, alpha)
    ddenom = _smith_denom_dalpha(core["nv_c"], core["nl_c"], alpha)
    dspec = (dd * denom - d * ddenom) / (2.0 * denom * denom)
    return np.where(core["ok"], dspec * 2.0 * roughness, 0.0)


def fresnel_f0(albedo, metallic):
    return 0.04 * (1.0 - metallic) + np.asarray(albedo, np.float64) * metallic


def brdf_eval(mat: Material, n, v, l, albedo=None) -> np.ndarray:
    """Evaluate the BRDF for unit vectors n, v, l; zero where n.l <= 0.

    ``albedo`` overrides ``mat.albedo`` (used by the shader, which carries
    per-pixel albedo from the rasterized mesh colors). All direction inputs
    broadcast; the result has the broadcast shape plus a trailing RGB axis.
    """
    n = np.asarray(n, np.float64)
    v = np.asarray(v, np.float64)
    l = np.asarray(l, np.float64)
    a = np.asarray(mat.albedo if albedo is None else albedo, np.float64)
    core = specular_core(n, v, l, mat.roughness)
    f0 = fresnel_f0(a, mat.metallic)
    fresnel = schlick(core["hv"], f0)
    diffuse = (1.0 - mat.metallic) * a / np.pi
    return (diffuse * (core["nl"] > 0.0)[..., None]
            + core["spec"][..., None] * fresnel)


def sample_ggx(n, v, roughness, u):
    """Draw light directions from the GGX half-vector lobe around ``n``.

    ``u`` holds uniform pairs in the trailing axis; all leading axes
    broadcast with ``n`` and ``v``. Returns (directions, pdf).
    """
    n = np.asarray(n, np.float64)
    v = np.asarray(v, np.float64)
    u = np.asarray(u, np.float64)
    alpha = roughness * roughness
    cos_h = np.sqrt(np.clip((1.0 - u[..., 0]) / (u[..., 0] * (alpha * alpha - 1.0) + 1.0),
                            0.0, 1.0))
    sin_h = np.sqrt(np.maximum(0.0, 1.0 - cos_h * cos_h))
    phi = 2.0 * np.pi * u[..., 1]
    t, b = orthonormal_basis(n)
    h = (t * (sin_h * np.cos(phi))[..., None]
         + b * (sin_h * np.sin(phi))[..., None]
         + n * cos_h[..., None])
    l = 2.0 * _dot(v, h)[..., None] * h - v
    return l, pdf_ggx(n, v, l, roughness)


def pdf_ggx(n, v, l, roughness) -> np.ndarray:
    """Solid-angle pdf of :func:`sample_ggx` for arbitrary directions."""
    n = np.asarray(n, np.float64)
    v = np.asarray(v, np.float64)
    l = np.asarray(l, np.float64)
    alpha = roughness * roughness
    half = v + l
    hlen = np.linalg.norm(half, axis=-1)
    h = half / np.maximum(hlen, EPS)[..., None]
    nh = _dot(n, h)
    vh = _dot(v, h)
    ok = (hlen > EPS) & (nh > 0.0) & (vh > EPS)
    pdf = d_ggx(np.clip(nh, 0.0, 1.0), alpha) * nh / (4.0 * np.maximum(vh, EPS))
    return np.where(ok, pdf, 0.0)


def sample_cosine(n, u):
    """Cosine-weighted hemisphere directions around ``n``; returns (dirs, pdf)."""
    n = np.asarray(n, np.float64)
    u = np.asarray(u, np.float64)
    r = np.sqrt(np.clip(u[..., 0], 0.0, 1.0))
    phi = 2.0 * np.pi * u[..., 1]
    z = np.sqrt(np.maximum(0.0, 1.0 - u[..., 0]))
    t, b = orthonormal_basis(n)
    l = (t * (r * np.cos(phi))[..., None]
         + b * (r * np.sin(phi))[..., None]
         + n * z[..., None])
    return l, pdf_cosine(n, l)


def pdf_cosine(n, l) -> np.ndarray:
    """Solid-angle pdf of :func:`sample_cosine`: max(n.l, 0) / pi."""
    return np.maximum(_dot(np.asarray(n, np.float64), np.asarray(l, np.float64)), 0.0) / np.pi


def mis_weight(pdfs, counts, chosen: int):
    """Balance-heuristic weight n_c p_c / sum_j n_j p_j.

    ``pdfs`` carries one pdf per strategy in its trailing axis, ``counts``
    the per-strategy sample counts, ``chosen`` the generating strategy index.
    """
    p = np.asarray(pdfs, np.float64)
    c = np.asarray(counts, np.float64)
    if p.shape[-1] != len(c):
        raise RenderError("one pdf per strategy required")
    if not 0 <= chosen < len(c):
        raise RenderError("chosen strategy out of range")
    if np.any(p < 0):
        raise RenderError("pdfs must be non-negative")
    total = np.sum(p * c, axis=-1)
    return np.where(total > 0, c[chosen] * p[..., chosen] / np.maximum(total, 1e-300), 0.0)
