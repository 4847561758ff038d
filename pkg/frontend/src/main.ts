/** Browser wiring: canvas view, toolbar verbs, upload, history, badges. */

import { ApiClient } from "./api.js";
import {
  depthSortFaces,
  faceNormal,
  lambertShade,
  OrbitCamera,
  type Vec3,
} from "./geometry.js";
import { EditorSession, BusyError, type UiSelection } from "./state.js";

const SERVICE = (window as { POINTFORGE_SERVICE?: string }).POINTFORGE_SERVICE ??
  `${location.protocol}//${location.hostname}:8423`;

const api = new ApiClient(SERVICE);
const session = new EditorSession(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const camera = new OrbitCamera(30, 25, 3.2, [0, 0, 0], (50 * Math.PI) / 180,
  canvas.width, canvas.height);

const banner = el<HTMLDivElement>("banner");
const prompt = el<HTMLDivElement>("upload-prompt");
const toastBox = el<HTMLDivElement>("toasts");
const statusLine = el<HTMLDivElement>("status");
const meshBadge = el<HTMLSpanElement>("mesh-badge");
const brushRadius = el<HTMLInputElement>("brush-radius");
const colorInput = el<HTMLInputElement>("recolor-color");
const offsetInputs: HTMLInputElement[] = ["off-x", "off-y", "off-z"].map((id) =>
  el<HTMLInputElement>(id),
);
const resolutionSelect = el<HTMLSelectElement>("mesh-res");
const renderPane = el<HTMLImageElement>("server-frame");

function currentOffset(): number[] {
  return offsetInputs.map((input) => Number(input.value) || 0);
}

function hexToRgb(hex: string): number[] {
  const v = parseInt(hex.replace("#", ""), 16);
  return [(v >> 16 & 255) / 255, (v >> 8 & 255) / 255, (v & 255) / 255];
}

// ---------------------------------------------------------------- drawing

function selectedMask(): boolean[] {
  const cloud = session.cloud;
  if (cloud === null || session.selection === null) {
    return [];
  }
  const resolved = session.resolveSelection(session.selection);
  const mask = new Array<boolean>(cloud.points.length).fill(false);
  if (resolved.type === "all") {
    mask.fill(true);
  } else if (resolved.type === "indices") {
    for (const i of resolved.indices) {
      mask[i] = true;
    }
  } else {
    cloud.points.forEach((p, i) => {
      const d = Math.hypot(p[0] - resolved.center[0], p[1] - resolved.center[1],
        p[2] - resolved.center[2]);
      mask[i] = d <= resolved.radius;
    });
  }
  return mask;
}

function drawSprites(): void {
  const cloud = session.cloud;
  if (cloud === null) {
    return;
  }
  const flat = new Float64Array(cloud.points.length * 3);
  cloud.points.forEach((p, i) => flat.set(p, 3 * i));
  const { xy, depth } = camera.project(flat);
  const order = Array.from(cloud.points.keys()).sort((a, b) => depth[b] - depth[a]);
  const mask = selectedMask();
  for (const i of order) {
    const x = xy[2 * i];
    const y = xy[2 * i + 1];
    if (!Number.isFinite(x)) {
      continue;
    }
    const c = cloud.colors[i] ?? [0.8, 0.8, 0.8];
    ctx.fillStyle = mask[i] === true
      ? "#ffd166"
      : `rgb(${c.map((v) => Math.round(v * 255)).join(",")})`;
    const r = mask[i] === true ? 3.5 : 2.5;
    ctx.fillRect(x - r / 2, y - r / 2, r, r);
  }
}

function drawMesh(): void {
  const mesh = session.mesh;
  if (mesh === null) {
    return;
  }
  const { xy, depth } = camera.project(mesh.positions);
  const order = depthSortFaces(mesh.positions, mesh.faces, depth);
  const light = camera.basis().forward.map((v) => -v) as Vec3;
  for (const f of order) {
    const [a, b, c] = [mesh.faces[3 * f], mesh.faces[3 * f + 1], mesh.faces[3 * f + 2]];
    if (![a, b, c].every((v) => Number.isFinite(xy[2 * v]))) {
      continue;
    }
    const base: Vec3 = mesh.colors !== null
      ? [mesh.colors[3 * a], mesh.colors[3 * a + 1], mesh.colors[3 * a + 2]]
      : [0.75, 0.75, 0.78];
    const n = faceNormal(mesh.positions, mesh.faces, f);
    const shaded = lambertShade(n, light, base);
    ctx.fillStyle = `rgb(${shaded.map((v) => Math.round(v * 255)).join(",")})`;
    ctx.beginPath();
    ctx.moveTo(xy[2 * a], xy[2 * a + 1]);
    ctx.lineTo(xy[2 * b], xy[2 * b + 1]);
    ctx.lineTo(xy[2 * c], xy[2 * c + 1]);
    ctx.closePath();
    ctx.fill();
  }
}

function redraw(): void {
  ctx.fillStyle = "#14161c";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (session.mesh !== null) {
    drawMesh();
  } else {
    drawSprites();
  }
}

function syncChrome(): void {
  banner.hidden = session.phase !== "offline";
  prompt.hidden = session.phase !== "empty";
  const parts = [`rev ${session.revision}`, `${session.summary?.n ?? 0} points`];
  if (session.selection !== null) {
    parts.push(`${session.selectionSize()} selected`);
  }
  statusLine.textContent = parts.join(" | ");
  meshBadge.textContent = session.meshMillis === null
    ? "no mesh"
    : `mesh ${session.meshMillis.toFixed(1)} ms (${session.meshCache})`;
  toastBox.replaceChildren(
    ...session.toasts.map((toast) => {
      const node = document.createElement("div");
      node.className = `toast ${toast.tone}`;
      node.textContent = toast.text;
      node.onclick = () => session.dismissToast(toast.id);
      return node;
    }),
  );
  redraw();
}

session.subscribe(syncChrome);

// ----------------------------------------------------------- interaction

let dragging = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("mousedown", (ev) => {
  if (ev.shiftKey) {
    placeBrush(ev.offsetX, ev.offsetY);
    return;
  }
  dragging = true;
  lastX = ev.offsetX;
  lastY = ev.offsetY;
});

window.addEventListener("mouseup", () => {
  dragging = false;
});

canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) {
    return;
  }
  camera.azimuthDeg = (camera.azimuthDeg - (ev.offsetX - lastX) * 0.5) % 360;
  camera.elevationDeg = Math.max(-89, Math.min(89,
    camera.elevationDeg + (ev.offsetY - lastY) * 0.5));
  lastX = ev.offsetX;
  lastY = ev.offsetY;
  redraw();
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  camera.distance = Math.max(0.5, Math.min(12, camera.distance * (1 + ev.deltaY * 1e-3)));
  redraw();
});

/** Shift+click drops a sphere brush on the nearest visible sprite. */
function placeBrush(px: number, py: number): void {
  const cloud = session.cloud;
  if (cloud === null) {
    return;
  }
  const flat = new Float64Array(cloud.points.length * 3);
  cloud.points.forEach((p, i) => flat.set(p, 3 * i));
  const { xy } = camera.project(flat);
  let best = -1;
  let bestDist = 18; // pixels
  for (let i = 0; i < cloud.points.length; i += 1) {
    const d = Math.hypot(xy[2 * i] - px, xy[2 * i + 1] - py);
    if (Number.isFinite(d) && d < bestDist) {
      best = i;
      bestDist = d;
    }
  }
  if (best < 0) {
    session.setSelection(null);
    return;
  }
  const sel: UiSelection = {
    mode: "sphere-brush",
    center: cloud.points[best] as Vec3,
    radius: Number(brushRadius.value),
    revision: session.revision,
  };
  session.setSelection(sel);
}

function guarded(run: () => Promise<unknown>): void {
  run().catch((err) => {
    if (!(err instanceof BusyError)) {
      console.error(err);
    }
  });
}

el<HTMLButtonElement>("btn-select-all").onclick = () => {
  session.setSelection({
    mode: "box",
    min: [-10, -10, -10],
    max: [10, 10, 10],
    revision: session.revision,
  });
};

el<HTMLButtonElement>("btn-clear-sel").onclick = () => session.setSelection(null);

el<HTMLButtonElement>("btn-delete").onclick = () =>
  guarded(() => session.submitEdit("delete"));

el<HTMLButtonElement>("btn-duplicate").onclick = () =>
  guarded(() => session.submitEdit("duplicate", { offset: currentOffset() }));

el<HTMLButtonElement>("btn-translate").onclick = () =>
  guarded(() => session.submitEdit("translate", { offset: currentOffset() }));

el<HTMLButtonElement>("btn-recolor").onclick = () =>
  guarded(() => session.submitEdit("recolor", { color: hexToRgb(colorInput.value) }));

el<HTMLButtonElement>("btn-undo").onclick = () => guarded(() => session.undo());
el<HTMLButtonElement>("btn-redo").onclick = () => guarded(() => session.redo());

el<HTMLButtonElement>("btn-remesh").onclick = () =>
  guarded(() => session.remesh(Number(resolutionSelect.value)));

el<HTMLButtonElement>("btn-points").onclick = () => {
  session.mesh = null;
  syncChrome();
};

el<HTMLButtonElement>("btn-server-frame").onclick = () => {
  renderPane.src = api.renderUrl(
    Math.round(camera.azimuthDeg),
    Math.round(camera.elevationDeg),
    256,
  ) + `&t=${Date.now()}`;
  renderPane.hidden = false;
};

renderPane.onclick = () => {
  renderPane.hidden = true;
};

el<HTMLInputElement>("upload").addEventListener("change", (ev) => {
  const input = ev.target as HTMLInputElement;
  const file = input.files?.[0];
  if (file === undefined) {
    return;
  }
  guarded(async () => {
    const bytes = new Uint8Array(await file.arrayBuffer());
    await session.uploadCloud(bytes);
  });
  input.value = "";
});

window.onerror = (message) => {
  session.pushToast(String(message), "error");
};

guarded(async () => {
  await session.refresh();
  setInterval(() => {
    if (session.phase === "offline" && !session.mutationInFlight) {
      void session.refresh();
    }
  }, 3000);
});
