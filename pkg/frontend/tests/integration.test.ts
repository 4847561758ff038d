/** End-to-end editor loop against a real service process.
 *
 * Covers the acceptance flow: upload a fixture cloud, duplicate+translate a
 * region, re-mesh and observe new geometry plus the server timing header,
 * then undo and verify the cloud is byte-identical to the upload state.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { EditorSession } from "../src/state.js";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr === null || typeof addr === "string") {
        srv.close();
        reject(new Error("could not allocate a port"));
        return;
      }
      const port = addr.port;
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Evenly spread sphere-shell cloud, radius 0.8, written as ASCII PLY. */
function fixturePly(n: number): Uint8Array {
  const golden = Math.PI * (3 - Math.sqrt(5));
  const rows: string[] = [];
  for (let i = 0; i < n; i += 1) {
    const z = 1 - (2 * i + 1) / n;
    const r = Math.sqrt(Math.max(0, 1 - z * z));
    const th = golden * i;
    const p = [0.8 * r * Math.cos(th), 0.8 * r * Math.sin(th), 0.8 * z];
    const c = p.map((v) => Math.round(((v / 0.8) * 0.5 + 0.5) * 255));
    rows.push(`${p[0]} ${p[1]} ${p[2]} ${c[0]} ${c[1]} ${c[2]}`);
  }
  const header = [
    "ply",
    "format ascii 1.0",
    `element vertex ${n}`,
    "property double x",
    "property double y",
    "property double z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
    "end_header",
  ];
  return new TextEncoder().encode(header.join("\n") + "\n" + rows.join("\n") + "\n");
}

let child: ChildProcess | null = null;
let base = "";
let api: ApiClient;
const serverLog: string[] = [];

beforeAll(async () => {
  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  child = spawn("python3", ["-m", "pointforge.cli", "serve", "--port", String(port)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  child.stdout?.on("data", (buf: Buffer) => serverLog.push(buf.toString()));
  child.stderr?.on("data", (buf: Buffer) => serverLog.push(buf.toString()));
  api = new ApiClient(base);
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      await api.state();
      return;
    } catch {
      if (child.exitCode !== null || Date.now() > deadline) {
        throw new Error(`service did not come up:\n${serverLog.join("")}`);
      }
      await sleep(250);
    }
  }
});

afterAll(() => {
  child?.kill("SIGTERM");
});

describe("editor loop against the live service", () => {
  const session = () => new EditorSession(api);
  let pristine: Uint8Array;

  it("uploads the fixture cloud and mirrors it locally", async () => {
    const s = session();
    await s.refresh();
    expect(s.phase).toBe("empty"); // fresh service prompts for an upload
    await s.uploadCloud(fixturePly(200));
    expect(s.summary?.n).toBe(200);
    expect(s.phase).toBe("ready");
    expect(s.cloud?.points).toHaveLength(200);
    pristine = await api.cloudBytes();
    expect(pristine.length).toBeGreaterThan(0);
  });

  it("runs duplicate+translate, re-mesh, observes new geometry, then undoes", async () => {
    const s = session();
    await s.refresh();
    const startRevision = s.revision;

    s.setSelection({
      mode: "sphere-brush",
      center: [0, 0, 0.8],
      radius: 0.35,
      revision: s.revision,
    });
    const localCount = s.selectionSize();
    expect(localCount).toBeGreaterThan(0);

    const changed = await s.submitEdit("duplicate", { offset: [0, 0, 0.3] });
    expect(changed).toBe(localCount); // toast count matches the server reply
    expect(s.summary?.n).toBe(200 + changed);
    expect(s.revision).toBe(startRevision + 1);

    await s.remesh(48);
    expect(s.mesh).not.toBeNull();
    expect(s.mesh!.faces.length / 3).toBeGreaterThan(0);
    expect(s.meshMillis).toBeGreaterThan(0); // server timing header surfaced
    expect(s.meshCache).toBe("miss");
    let maxZ = -Infinity;
    const pos = s.mesh!.positions;
    for (let i = 2; i < pos.length; i += 3) {
      maxZ = Math.max(maxZ, pos[i]);
    }
    expect(maxZ).toBeGreaterThan(0.85); // bump from the duplicated cap

    // a second mesh request at the same revision hits the server cache
    await s.remesh(48);
    expect(s.meshCache).toBe("hit");

    await s.undo();
    expect(s.summary?.n).toBe(200);
    const restored = await api.cloudBytes();
    expect(restored).toEqual(pristine); // byte-identical after undo
  });

  it("recovers from a stale revision tag by refreshing and retrying", async () => {
    const s = session();
    await s.refresh();
    s.setSelection({
      mode: "sphere-brush",
      center: [0, 0, -0.8],
      radius: 0.3,
      revision: s.revision,
    });
    // another client advances the cloud while our tag is in hand
    await api.edit(
      [{ kind: "translate", select: { type: "all" }, offset: [0.01, 0, 0] }],
      s.revision,
    );
    const changed = await s.submitEdit("recolor", { color: [0.9, 0.2, 0.1] });
    expect(changed).toBeGreaterThan(0);
    const live = await api.state();
    expect(s.revision).toBe(live.revision);
  });

  it("rejects a bare stale tag without the session's retry", async () => {
    const live = await api.state();
    await expect(
      api.edit([{ kind: "delete", select: { type: "indices", indices: [0] } }],
        live.revision - 1),
    ).rejects.toMatchObject({ status: 409 });
  });

  it("serves a PNG orbit frame for the current mesh", async () => {
    await api.remesh(32);
    const res = await fetch(api.renderUrl(40, 20, 64));
    expect(res.status).toBe(200);
    const bytes = new Uint8Array(await res.arrayBuffer());
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });

  it("surfaces a 409 when re-meshing after delete(all)", async () => {
    const s = session();
    await s.refresh();
    s.setSelection({
      mode: "box",
      min: [-10, -10, -10],
      max: [10, 10, 10],
      revision: s.revision,
    });
    await s.submitEdit("delete");
    expect(s.phase).toBe("empty");
    await expect(s.remesh(32)).rejects.toMatchObject({ status: 409 });
    expect(s.toasts.at(-1)?.tone).toBe("error");
    // put the cloud back for anyone poking at the server afterwards
    await s.undo();
    expect(s.summary?.n).toBeGreaterThan(0);
  });
});
