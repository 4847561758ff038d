/** Typed client for the edit service; the only way the UI touches geometry. */

export type Selection =
  | { type: "sphere"; center: number[]; radius: number }
  | { type: "indices"; indices: number[] }
  | { type: "all" };

export interface EditOp {
  kind: "delete" | "duplicate" | "translate" | "stretch" | "recolor";
  select: Selection;
  offset?: number[];
  scale?: number[];
  pivot?: number[];
  color?: number[];
}

export interface MeshSummary {
  resolution: number;
  millis: number;
  faces: number;
  vertices: number;
}

export interface StateSummary {
  n: number;
  bbox: [number[], number[]] | null;
  revision: number;
  history_depth: number;
  redo_depth: number;
  has_mesh: boolean;
  changed?: number;
  mesh?: MeshSummary;
}

export interface CloudJson {
  revision: number;
  points: number[][];
  colors: number[][];
}

export interface MeshResponse {
  obj: string;
  millis: number;
  cache: "hit" | "miss";
  revision: number;
  resolution: number;
}

export class ApiError extends Error {
  constructor(public readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

async function raiseForStatus(res: Response): Promise<Response> {
  if (res.ok) {
    return res;
  }
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = (await res.json()) as { detail?: string };
    if (body.detail) {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(public readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async state(): Promise<StateSummary> {
    const res = await raiseForStatus(await fetch(this.url("/state")));
    return (await res.json()) as StateSummary;
  }

  async cloud(): Promise<CloudJson> {
    const res = await raiseForStatus(
      await fetch(this.url("/pointcloud?format=json")),
    );
    return (await res.json()) as CloudJson;
  }

  async cloudBytes(): Promise<Uint8Array> {
    const res = await raiseForStatus(await fetch(this.url("/pointcloud")));
    return new Uint8Array(await res.arrayBuffer());
  }

  async upload(ply: Uint8Array): Promise<StateSummary> {
    const res = await raiseForStatus(
      await fetch(this.url("/pointcloud"), {
        method: "POST",
        headers: { "Content-Type": "application/octet-stream" },
        body: ply as BodyInit,
      }),
    );
    return (await res.json()) as StateSummary;
  }

  async edit(ops: EditOp[], revision?: number): Promise<StateSummary> {
    const body = revision === undefined ? ops : { revision, ops };
    const res = await raiseForStatus(
      await fetch(this.url("/edit"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
    return (await res.json()) as StateSummary;
  }

  async remesh(resolution?: number): Promise<MeshResponse> {
    const res = await raiseForStatus(
      await fetch(this.url("/mesh"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(resolution === undefined ? {} : { resolution }),
      }),
    );
    return {
      obj: await res.text(),
      millis: Number(res.headers.get("X-Mesh-Millis") ?? "0"),
      cache: (res.headers.get("X-Cache") ?? "miss") as "hit" | "miss",
      revision: Number(res.headers.get("X-Revision") ?? "0"),
      resolution: Number(res.headers.get("X-Resolution") ?? "0"),
    };
  }

  async undo(): Promise<StateSummary> {
    const res = await raiseForStatus(
      await fetch(this.url("/undo"), { method: "POST" }),
    );
    return (await res.json()) as StateSummary;
  }

  async redo(): Promise<StateSummary> {
    const res = await raiseForStatus(
      await fetch(this.url("/redo"), { method: "POST" }),
    );
    return (await res.json()) as StateSummary;
  }

  /** Server-side PBR frame for the current mesh; used as an <img> source. */
  renderUrl(az: number, el: number, size: number): string {
    return this.url(`/render?az=${az}&el=${el}&size=${size}`);
  }
}
