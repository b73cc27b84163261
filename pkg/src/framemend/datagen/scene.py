"""Ray-cast toy scenes: Lambertian shading, cast shadows, exact masks/flow.

Geometry lives in world units where 1 unit = 1 pixel on the ground plane.
The camera is orthographic and tilted: all rays share the direction
`(0, -cos(tilt), sin(tilt))` and are anchored so that they intersect the
ground plane y=0 on a uniform pixel grid (x right, z up-screen).  Because
rays are parallel, translating a primitive by whole pixels translates its
rendered footprint by the same whole pixels, which is what makes the
emitted flow exact for such animations.

Everything is computed in float64 with a fixed elementwise operation order,
so renders are bitwise reproducible and shadow on/off pairs agree exactly
outside the shadow region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .isp import IDENTITY_PARAMS, IspParams, apply_isp, sample_isp_params
from .sample import PairedSample

DISPLAY_GAMMA = 2.2
_EPS_OFFSET = 1e-5  # surface lift-off for shadow rays, world units
_EPS_T = 1e-7       # minimum ray parameter that counts as a hit


def _cone_sample_pattern(n_side: int = 4) -> np.ndarray:
    """Fixed stratified unit-disk points (no per-frame randomness)."""
    pts = []
    for i in range(n_side):
        for j in range(n_side):
            u1 = (i + 0.5) / n_side
            u2 = (j + 0.5) / n_side
            r = math.sqrt(u1)
            theta = 2.0 * math.pi * u2
            pts.append((r * math.cos(theta), r * math.sin(theta)))
    return np.array(pts)


CONE_SAMPLES = _cone_sample_pattern()  # (16, 2)


# ---------------------------------------------------------------------------
# Scene description
# ---------------------------------------------------------------------------


@dataclass
class Sphere:
    center: tuple[float, float, float]  # world (x, y-up, z)
    radius: float
    albedo: tuple[float, float, float]
    checker: float = 0.0  # cell size of an object-locked checker; 0 = flat
    checker_contrast: float = 0.5

    def min_height(self) -> float:
        return self.center[1] - self.radius


@dataclass
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # full extents
    albedo: tuple[float, float, float]
    checker: float = 0.0
    checker_contrast: float = 0.5

    def min_height(self) -> float:
        return self.center[1] - self.size[1] / 2.0


@dataclass
class Camera:
    center_x: float = 0.0
    center_z: float = 0.0
    tilt: float = 0.45  # radians away from straight down
    scale: float = 1.0  # world units per pixel
    height: float = 300.0


@dataclass
class SceneSpec:
    width: int
    height: int
    ground_albedo: np.ndarray  # (height, width, 3) per-pixel ground colors
    primitives: list = field(default_factory=list)
    light_dir: tuple[float, float, float] = (0.3, 0.8, 0.2)
    light_softness: float = 0.0  # cone angular radius, radians
    light_intensity: float = 1.0
    ambient: float = 0.25
    camera: Camera = field(default_factory=Camera)
    frames: int = 1
    offsets: np.ndarray | None = None  # (frames, n_primitives, 2) world (dx, dz)

    def __post_init__(self):
        d = np.asarray(self.light_dir, dtype=np.float64)
        n = float(np.sqrt((d * d).sum()))
        if n == 0.0:
            raise ValueError("light_dir must be non-zero")
        self.light_dir = tuple((d / n).tolist())

    def validate(self) -> None:
        ga = np.asarray(self.ground_albedo)
        if ga.shape != (self.height, self.width, 3):
            raise ValueError(
                f"ground_albedo shape {ga.shape} != ({self.height}, {self.width}, 3)"
            )
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.light_dir[1] <= 0.0:
            raise ValueError("light must come from above (light_dir[1] > 0)")
        if self.light_softness < 0.0:
            raise ValueError("light_softness must be >= 0")
        if self.light_intensity <= 0.0:
            raise ValueError("light_intensity must be > 0")
        if self.ambient < 0.0:
            raise ValueError("ambient must be >= 0")
        for prim in self.primitives:
            if prim.min_height() < 0.0:
                raise ValueError(f"primitive dips below the ground plane: {prim}")
        if self.offsets is not None:
            off = np.asarray(self.offsets)
            if off.shape != (self.frames, len(self.primitives), 2):
                raise ValueError(
                    f"offsets shape {off.shape} != "
                    f"({self.frames}, {len(self.primitives)}, 2)"
                )


@dataclass
class LightDelta:
    """Perturbation of the scene light used by the relighting stream."""

    rotate_azimuth: float = 0.0
    rotate_elevation: float = 0.0
    intensity_scale: float = 1.0

    def is_zero(self) -> bool:
        return (
            self.rotate_azimuth == 0.0
            and self.rotate_elevation == 0.0
            and self.intensity_scale == 1.0
        )


@dataclass
class RenderResult:
    """Per-frame buffers of one `render_scene` call (all leading dim T)."""

    frames: np.ndarray         # display space after gamma, float64 [0, 1]
    linear: np.ndarray         # pre-clamp linear radiance
    masks: np.ndarray          # foreground (any primitive), bool
    ids: np.ndarray            # primitive index, -1 = ground, int16
    normals: np.ndarray        # surface normals
    albedo: np.ndarray         # effective per-pixel albedo (checker applied)
    shadow: np.ndarray         # shadow factor in [0, 1], 1 = fully lit
    flows: np.ndarray          # (T-1, H, W, 2) backward flow t -> t-1
    flow_valid: np.ndarray     # (T-1, H, W) exact-correspondence mask
    spec: SceneSpec


def shade_lambert(albedo, normals, light_dir, intensity, ambient, shadow_factor):
    """linear = albedo * (ambient + intensity * max(0, n.L) * shadow).

    Shared by the renderer and the relighting path so identical inputs give
    bitwise identical radiance.  Ambient is deliberately unshadowed.
    """
    lx, ly, lz = light_dir
    ndotl = normals[..., 0] * lx + normals[..., 1] * ly + normals[..., 2] * lz
    ndotl = np.maximum(ndotl, 0.0)
    return albedo * (ambient + intensity * ndotl * shadow_factor)[..., None]


def _light_basis(light_dir) -> tuple[np.ndarray, np.ndarray]:
    l = np.asarray(light_dir)
    axis = np.array([1.0, 0.0, 0.0]) if abs(l[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(l, axis)
    u = u / np.sqrt((u * u).sum())
    v = np.cross(l, u)
    return u, v


def _sphere_t(ox, oy, oz, d, cx, cy, cz, radius):
    """Ray parameter of the near sphere hit; +inf where missed."""
    dx, dy, dz = d
    rx = ox - cx
    ry = oy - cy
    rz = oz - cz
    b = rx * dx + ry * dy + rz * dz
    c = rx * rx + ry * ry + rz * rz - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    return np.where((disc >= 0.0) & (t > _EPS_T), t, np.inf)


def _box_t(ox, oy, oz, d, lo, hi):
    """Slab-test entry parameter for an axis-aligned box; +inf where missed.
    Also returns the entry axis (0=x, 1=y, 2=z) for normal lookup."""
    origins = (ox, oy, oz)
    tmin = np.full(np.broadcast(ox, oy).shape, -np.inf)
    tmax = np.full(tmin.shape, np.inf)
    axis_of_tmin = np.zeros(tmin.shape, dtype=np.int8)
    for axis in range(3):
        da = d[axis]
        oa = origins[axis]
        if da == 0.0:
            outside = (oa < lo[axis]) | (oa > hi[axis])
            tmin = np.where(outside, np.inf, tmin)
        else:
            t1 = (lo[axis] - oa) / da
            t2 = (hi[axis] - oa) / da
            near = np.minimum(t1, t2)
            far = np.maximum(t1, t2)
            take = near > tmin
            axis_of_tmin = np.where(take, np.int8(axis), axis_of_tmin)
            tmin = np.maximum(tmin, near)
            tmax = np.minimum(tmax, far)
    hit = (tmin <= tmax) & (tmin > _EPS_T)
    return np.where(hit, tmin, np.inf), axis_of_tmin


def _checker_factor(px, py, pz, center, prim) -> np.ndarray:
    if prim.checker <= 0.0:
        return np.ones(px.shape)
    cell = prim.checker
    parity = (
        np.floor((px - center[0]) / cell)
        + np.floor((py - center[1]) / cell)
        + np.floor((pz - center[2]) / cell)
    ) % 2.0
    return np.where(parity == 0.0, 1.0, 1.0 - prim.checker_contrast)


def _occluded(px, py, pz, dvec, centers, prims):
    """Boolean map: does the ray (p, dvec) hit any primitive beyond eps?"""
    occ = np.zeros(px.shape, dtype=bool)
    for center, prim in zip(centers, prims):
        if isinstance(prim, Sphere):
            t = _sphere_t(px, py, pz, dvec, center[0], center[1], center[2], prim.radius)
            occ |= np.isfinite(t)
        else:
            half = np.asarray(prim.size) / 2.0
            lo = np.asarray(center) - half
            hi = np.asarray(center) + half
            t, _ = _box_t(px, py, pz, dvec, lo, hi)
            occ |= np.isfinite(t)
    return occ


def render_scene(spec: SceneSpec, *, shadows: bool = True) -> RenderResult:
    """Render every frame of `spec`; see the module docstring for geometry.

    The `shadows=False` render differs from `shadows=True` only through the
    shadow factor (forced to 1), so pairs agree bitwise wherever nothing is
    occluded.
    """
    spec.validate()
    cam = spec.camera
    h, w, s = spec.height, spec.width, cam.scale
    tilt = cam.tilt
    cos_t, sin_t = math.cos(tilt), math.sin(tilt)
    d = (0.0, -cos_t, sin_t)
    t_ground = cam.height / cos_t

    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    gx = cam.center_x + (jj - (w - 1) / 2.0) * s
    gz = cam.center_z + ((h - 1) / 2.0 - ii) * s  # row 0 is +z (top of image)
    ox = gx
    oy = np.full(gx.shape, t_ground * cos_t)
    oz = gz - t_ground * sin_t

    n_frames = spec.frames
    n_prims = len(spec.primitives)
    offsets = (
        np.zeros((n_frames, n_prims, 2))
        if spec.offsets is None
        else np.asarray(spec.offsets, dtype=np.float64)
    )
    ground_albedo = np.asarray(spec.ground_albedo, dtype=np.float64)

    frames = np.zeros((n_frames, h, w, 3))
    linear = np.zeros((n_frames, h, w, 3))
    ids = np.zeros((n_frames, h, w), dtype=np.int16)
    normals = np.zeros((n_frames, h, w, 3))
    albedo = np.zeros((n_frames, h, w, 3))
    shadow = np.ones((n_frames, h, w))

    if spec.light_softness > 0.0:
        u, v = _light_basis(spec.light_dir)
        spread = math.tan(spec.light_softness)
        dirs = np.asarray(spec.light_dir) + spread * (
            CONE_SAMPLES[:, 0:1] * u + CONE_SAMPLES[:, 1:2] * v
        )
        dirs = dirs / np.sqrt((dirs * dirs).sum(axis=1, keepdims=True))
    else:
        dirs = np.tile(np.asarray(spec.light_dir), (len(CONE_SAMPLES), 1))

    for t in range(n_frames):
        centers = [
            (
                prim.center[0] + offsets[t, k, 0],
                prim.center[1],
                prim.center[2] + offsets[t, k, 1],
            )
            for k, prim in enumerate(spec.primitives)
        ]
        best_t = np.full((h, w), t_ground)
        best_id = np.full((h, w), -1, dtype=np.int16)
        box_axis: dict[int, np.ndarray] = {}
        for k, prim in enumerate(spec.primitives):
            if isinstance(prim, Sphere):
                tk = _sphere_t(ox, oy, oz, d, *centers[k], prim.radius)
            else:
                half = np.asarray(prim.size) / 2.0
                lo = np.asarray(centers[k]) - half
                hi = np.asarray(centers[k]) + half
                tk, ax = _box_t(ox, oy, oz, d, lo, hi)
                box_axis[k] = ax
            win = tk < best_t
            best_t = np.where(win, tk, best_t)
            best_id = np.where(win, np.int16(k), best_id)

        px = ox
        py = oy + best_t * d[1]
        pz = oz + best_t * d[2]

        frame_normals = np.zeros((h, w, 3))
        frame_normals[..., 1] = 1.0  # ground default
        frame_albedo = ground_albedo.copy()
        for k, prim in enumerate(spec.primitives):
            sel = best_id == k
            if not sel.any():
                continue
            if isinstance(prim, Sphere):
                nx = (px - centers[k][0]) / prim.radius
                ny = (py - centers[k][1]) / prim.radius
                nz = (pz - centers[k][2]) / prim.radius
                frame_normals[sel] = np.stack([nx[sel], ny[sel], nz[sel]], axis=-1)
            else:
                ax = box_axis[k]
                sign = np.array([0.0, 1.0, -1.0])  # -sign of ray dir per axis
                nvec = np.zeros((h, w, 3))
                for axis in range(3):
                    on_axis = sel & (ax == axis)
                    nvec[on_axis, axis] = sign[axis] if axis != 0 else 0.0
                frame_normals[sel] = nvec[sel]
            factor = _checker_factor(px, py, pz, centers[k], prim)
            base = np.asarray(prim.albedo)
            frame_albedo[sel] = base * factor[sel][..., None]

        sf = np.ones((h, w))
        if shadows and n_prims:
            sx = px + _EPS_OFFSET * frame_normals[..., 0]
            sy = py + _EPS_OFFSET * frame_normals[..., 1]
            sz = pz + _EPS_OFFSET * frame_normals[..., 2]
            occ_count = np.zeros((h, w))
            for dvec in dirs:
                occ_count += _occluded(sx, sy, sz, tuple(dvec), centers, spec.primitives)
            sf = 1.0 - occ_count / float(len(dirs))

        lin = shade_lambert(
            frame_albedo,
            frame_normals,
            spec.light_dir,
            spec.light_intensity,
            spec.ambient,
            sf,
        )
        frames[t] = np.clip(lin, 0.0, 1.0) ** (1.0 / DISPLAY_GAMMA)
        linear[t] = lin
        ids[t] = best_id
        normals[t] = frame_normals
        albedo[t] = frame_albedo
        shadow[t] = sf

    flows, flow_valid = _emit_flow(spec, offsets, ids, shadow)
    return RenderResult(
        frames=frames,
        linear=linear,
        masks=ids >= 0,
        ids=ids,
        normals=normals,
        albedo=albedo,
        shadow=shadow,
        flows=flows,
        flow_valid=flow_valid,
        spec=spec,
    )


def _emit_flow(spec, offsets, ids, shadow):
    """Exact backward flow (frame t -> t-1) from the rigid translations,
    plus a validity mask excluding out-of-frame, occlusion/disocclusion
    (identity mismatch) and shadow-change pixels."""
    n_frames, h, w = ids.shape
    s = spec.camera.scale
    flows = np.zeros((max(n_frames - 1, 0), h, w, 2), dtype=np.float32)
    valid = np.zeros((max(n_frames - 1, 0), h, w), dtype=bool)
    if n_frames < 2:
        return flows, valid
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    for t in range(1, n_frames):
        fx = np.zeros((h, w))
        fy = np.zeros((h, w))
        for k in range(offsets.shape[1]):
            dx_world = offsets[t, k, 0] - offsets[t - 1, k, 0]
            dz_world = offsets[t, k, 1] - offsets[t - 1, k, 1]
            on = ids[t] == k
            fx[on] = -dx_world / s
            fy[on] = dz_world / s
        cx = jj + fx
        cy = ii + fy
        inb = (cx >= 0) & (cx <= w - 1) & (cy >= 0) & (cy <= h - 1)
        ri = np.clip(np.rint(cy).astype(int), 0, h - 1)
        ci = np.clip(np.rint(cx).astype(int), 0, w - 1)
        same_id = ids[t - 1][ri, ci] == ids[t]
        same_sf = np.abs(shadow[t - 1][ri, ci] - shadow[t]) <= 1e-9
        flows[t - 1, ..., 0] = fx
        flows[t - 1, ..., 1] = fy
        valid[t - 1] = inb & same_id & same_sf
    return flows, valid


# ---------------------------------------------------------------------------
# Pair builders on top of the renderer
# ---------------------------------------------------------------------------


def make_shadow_pair(spec: SceneSpec) -> PairedSample:
    """Shadow stream: input = shadowless render, target = shadowed render."""
    on = render_scene(spec, shadows=True)
    off = render_scene(spec, shadows=False)
    edit = np.any(on.frames != off.frames, axis=-1)
    return PairedSample(
        inputs=off.frames,
        targets=on.frames,
        stream="shadow",
        temporal=spec.frames > 1,
        fg_mask=on.masks,
        edit_mask=edit,
        flows=on.flows,
        flow_valid=on.flow_valid,
        meta={"light_softness": spec.light_softness},
    )


def _rotated_light(light_dir, delta: LightDelta):
    lx, ly, lz = light_dir
    azimuth = math.atan2(lz, lx) + delta.rotate_azimuth
    elevation = math.asin(max(-1.0, min(1.0, ly))) + delta.rotate_elevation
    elevation = min(max(elevation, 0.15), 1.45)  # keep the light above horizon
    ce = math.cos(elevation)
    return (ce * math.cos(azimuth), math.sin(elevation), ce * math.sin(azimuth))


def sample_light_delta(rng: np.random.Generator) -> LightDelta:
    """Random relighting perturbation; draw order: azimuth, elevation, scale."""
    azimuth = float(rng.uniform(0.5, 2.5)) * (1.0 if rng.random() < 0.5 else -1.0)
    elevation = float(rng.uniform(-0.35, 0.35))
    scale = float(rng.uniform(0.55, 1.8))
    return LightDelta(azimuth, elevation, scale)


def relight_fg(
    render: RenderResult,
    light_delta: LightDelta | None = None,
    rng: np.random.Generator | None = None,
    frame_index: int = 0,
) -> PairedSample:
    """Relighting stream: re-render the scene under a perturbed light and
    composite the foreground over the original background.

    input = relit foreground + original background, target = original frame.
    `light_delta` may be omitted, in which case it is drawn from `rng`.
    Single-frame (non-temporal) samples only.
    """
    if render.normals is None:
        raise ValueError("relight_fg: render carries no normals")
    if light_delta is None:
        if rng is None:
            raise ValueError("relight_fg: need light_delta or rng")
        light_delta = sample_light_delta(rng)

    spec = render.spec
    if light_delta.is_zero():
        relit_frame = render.frames[frame_index]
    else:
        new_spec = replace(
            spec,
            light_dir=_rotated_light(spec.light_dir, light_delta),
            light_intensity=spec.light_intensity * light_delta.intensity_scale,
            frames=1,
            offsets=None if spec.offsets is None else spec.offsets[frame_index : frame_index + 1],
        )
        relit_frame = render_scene(new_spec, shadows=True).frames[0]

    mask = render.masks[frame_index]
    target = render.frames[frame_index]
    inp = np.where(mask[..., None], relit_frame, target)
    return PairedSample(
        inputs=inp[None],
        targets=target[None],
        stream="relight",
        temporal=False,
        fg_mask=mask[None],
        edit_mask=(np.any(inp != target, axis=-1))[None],
        flows=None,
        flow_valid=None,
        meta={
            "rotate_azimuth": light_delta.rotate_azimuth,
            "rotate_elevation": light_delta.rotate_elevation,
            "intensity_scale": light_delta.intensity_scale,
        },
    )


def make_reinsert_pair(
    bg_spec: SceneSpec,
    sprites: list,
    trajectory: np.ndarray,
    seed_or_params,
    *,
    shadows: bool = True,
) -> PairedSample:
    """Re-insertion stream: target = full shadowed render with the moving
    sprites; input = background-only render with the sprites composited on
    top, shadowless, through an independently sampled ISP.

    `trajectory` is (frames, n_sprites, 2) world (dx, dz) offsets.
    `seed_or_params` is either an int seed (ISP params drawn from it) or an
    explicit IspParams.
    """
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.ndim != 3 or trajectory.shape[1] != len(sprites) or trajectory.shape[2] != 2:
        raise ValueError(
            f"trajectory shape {trajectory.shape} != (frames, {len(sprites)}, 2)"
        )
    n_frames = trajectory.shape[0]
    n_bg = len(bg_spec.primitives)
    bg_offsets = (
        np.zeros((n_frames, n_bg, 2))
        if bg_spec.offsets is None
        else np.asarray(bg_spec.offsets)
    )
    if bg_offsets.shape[0] != n_frames:
        bg_offsets = np.zeros((n_frames, n_bg, 2))
    full_spec = replace(
        bg_spec,
        primitives=list(bg_spec.primitives) + list(sprites),
        frames=n_frames,
        offsets=np.concatenate([bg_offsets, trajectory], axis=1),
    )
    bg_only = replace(bg_spec, frames=n_frames, offsets=bg_offsets)

    full = render_scene(full_spec, shadows=shadows)
    bg = render_scene(bg_only, shadows=shadows)

    sprite_mask = full.ids >= n_bg
    if not sprite_mask.any():
        raise ValueError("make_reinsert_pair: trajectory leaves every sprite off-frame")

    if isinstance(seed_or_params, IspParams):
        params = seed_or_params
    else:
        params = sample_isp_params(np.random.Generator(np.random.PCG64(seed_or_params)))
    sprite_pixels = apply_isp(full.frames, params)
    inputs = np.where(sprite_mask[..., None], sprite_pixels, bg.frames)

    edit = sprite_mask | np.any(full.frames != bg.frames, axis=-1)
    return PairedSample(
        inputs=inputs,
        targets=full.frames,
        stream="reinsert",
        temporal=n_frames > 1,
        fg_mask=sprite_mask,
        edit_mask=edit,
        flows=full.flows,
        flow_valid=full.flow_valid,
        meta={"sprite_isp": params.to_dict(), "shadows": bool(shadows)},
    )
