/** OBJ parsing plus the minimal projective math behind the canvas view.
 *
 * Screen convention matches the server renderer: x grows right, y grows
 * down, azimuth 0 looks down the -x axis from (+distance, 0, 0) with +z up.
 */

export interface ParsedMesh {
  positions: Float64Array; // n*3
  colors: Float64Array | null; // n*3 in [0, 1]
  faces: Uint32Array; // m*3, zero-based
}

export class GeometryError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "GeometryError";
  }
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const colors: number[] = [];
  const faces: number[] = [];
  let sawColor = false;
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i += 1) {
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) {
      continue;
    }
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length !== 4 && parts.length !== 7) {
        throw new GeometryError(`line ${i + 1}: vertex needs 3 or 6 numbers`);
      }
      for (let k = 1; k <= 3; k += 1) {
        const value = Number(parts[k]);
        if (!Number.isFinite(value)) {
          throw new GeometryError(`line ${i + 1}: bad coordinate ${parts[k]}`);
        }
        positions.push(value);
      }
      if (parts.length === 7) {
        sawColor = true;
        for (let k = 4; k <= 6; k += 1) {
          colors.push(Number(parts[k]));
        }
      } else {
        colors.push(0.7, 0.7, 0.7);
      }
    } else if (parts[0] === "f") {
      if (parts.length < 4) {
        throw new GeometryError(`line ${i + 1}: face needs 3 vertices`);
      }
      const idx = parts.slice(1).map((tok) => {
        const raw = Number(tok.split("/")[0]);
        if (!Number.isInteger(raw) || raw === 0) {
          throw new GeometryError(`line ${i + 1}: bad face index ${tok}`);
        }
        return raw > 0 ? raw - 1 : positions.length / 3 + raw;
      });
      // fan-triangulate polygons; the server only emits triangles
      for (let k = 1; k + 1 < idx.length; k += 1) {
        faces.push(idx[0], idx[k], idx[k + 1]);
      }
    }
    // vn/vt/usemtl and friends are irrelevant to the preview; skip them
  }
  const count = positions.length / 3;
  for (const f of faces) {
    if (f < 0 || f >= count) {
      throw new GeometryError(`face index ${f + 1} out of range (${count} vertices)`);
    }
  }
  return {
    positions: new Float64Array(positions),
    colors: sawColor ? new Float64Array(colors) : null,
    faces: new Uint32Array(faces),
  };
}

export type Vec3 = [number, number, number];

const NEAR = 1e-9;

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n < NEAR) {
    return [0, 0, 1];
  }
  return [v[0] / n, v[1] / n, v[2] / n];
}

/** z-up orbit camera; projection mirrors the server's pixel convention. */
export class OrbitCamera {
  constructor(
    public azimuthDeg: number,
    public elevationDeg: number,
    public distance: number,
    public target: Vec3 = [0, 0, 0],
    public fovY: number = (50 * Math.PI) / 180,
    public width: number = 512,
    public height: number = 512,
  ) {}

  position(): Vec3 {
    const az = (this.azimuthDeg * Math.PI) / 180;
    const el = (this.elevationDeg * Math.PI) / 180;
    return [
      this.target[0] + this.distance * Math.cos(el) * Math.cos(az),
      this.target[1] + this.distance * Math.cos(el) * Math.sin(az),
      this.target[2] + this.distance * Math.sin(el),
    ];
  }

  /** Orthonormal right/up/forward axes; keeps working at the poles. */
  basis(): { right: Vec3; up: Vec3; forward: Vec3 } {
    const pos = this.position();
    const forward = normalize(sub(this.target, pos));
    const az = (this.azimuthDeg * Math.PI) / 180;
    const el = (this.elevationDeg * Math.PI) / 180;
    let upHint: Vec3 = [0, 0, 1];
    if (Math.abs(Math.cos(el)) < 1e-6) {
      upHint = [Math.cos(az), Math.sin(az), 0];
    }
    const right = normalize(cross(forward, upHint));
    const up = cross(right, forward) as Vec3;
    return { right, up, forward };
  }

  /**
   * Project packed xyz world points to pixel centers.
   * Returns xy (2 per point, NaN when behind the camera) and view depth.
   */
  project(points: Float64Array): { xy: Float64Array; depth: Float64Array } {
    const n = points.length / 3;
    const xy = new Float64Array(n * 2);
    const depth = new Float64Array(n);
    const pos = this.position();
    const { right, up, forward } = this.basis();
    const t = Math.tan(0.5 * this.fovY);
    const aspect = this.width / this.height;
    for (let i = 0; i < n; i += 1) {
      const rel: Vec3 = [
        points[3 * i] - pos[0],
        points[3 * i + 1] - pos[1],
        points[3 * i + 2] - pos[2],
      ];
      const z = dot(rel, forward);
      depth[i] = z;
      if (z <= NEAR) {
        xy[2 * i] = NaN;
        xy[2 * i + 1] = NaN;
        continue;
      }
      const xn = dot(rel, right) / (z * t * aspect);
      const yn = dot(rel, up) / (z * t);
      xy[2 * i] = (xn + 1) * 0.5 * this.width;
      xy[2 * i + 1] = (1 - yn) * 0.5 * this.height;
    }
    return { xy, depth };
  }

  /** World-space ray through a pixel; used to drop the brush onto the cloud. */
  pixelRay(px: number, py: number): { origin: Vec3; dir: Vec3 } {
    const { right, up, forward } = this.basis();
    const t = Math.tan(0.5 * this.fovY);
    const aspect = this.width / this.height;
    const xn = (px / this.width) * 2 - 1;
    const yn = 1 - (py / this.height) * 2;
    const dir: Vec3 = [0, 1, 2].map(
      (k) => forward[k] + right[k] * xn * t * aspect + up[k] * yn * t,
    ) as Vec3;
    return { origin: this.position(), dir: normalize(dir) };
  }
}

export function faceNormal(positions: Float64Array, faces: Uint32Array, face: number): Vec3 {
  const [a, b, c] = [faces[3 * face], faces[3 * face + 1], faces[3 * face + 2]];
  const pa: Vec3 = [positions[3 * a], positions[3 * a + 1], positions[3 * a + 2]];
  const pb: Vec3 = [positions[3 * b], positions[3 * b + 1], positions[3 * b + 2]];
  const pc: Vec3 = [positions[3 * c], positions[3 * c + 1], positions[3 * c + 2]];
  return normalize(cross(sub(pb, pa), sub(pc, pa)));
}

/** Back-to-front face order by mean view depth (painter's algorithm). */
export function depthSortFaces(
  positions: Float64Array,
  faces: Uint32Array,
  depth: Float64Array,
): Uint32Array {
  const m = faces.length / 3;
  const order = new Uint32Array(m);
  const key = new Float64Array(m);
  for (let f = 0; f < m; f += 1) {
    order[f] = f;
    key[f] = (depth[faces[3 * f]] + depth[faces[3 * f + 1]] + depth[faces[3 * f + 2]]) / 3;
  }
  return order.sort((a, b) => key[b] - key[a]);
}

/** Single-bounce flat shade: ambient floor plus clamped lambert on |n.l|. */
export function lambertShade(normal: Vec3, lightDir: Vec3, base: Vec3): Vec3 {
  const lit = 0.25 + 0.75 * Math.abs(dot(normal, normalize(lightDir)));
  return [
    Math.min(1, base[0] * lit),
    Math.min(1, base[1] * lit),
    Math.min(1, base[2] * lit),
  ];
}
