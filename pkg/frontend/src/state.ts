/** DOM-free editor session: revision tracking, selection, mutation guard.
 *
 * Every geometry change round-trips the service; this module never moves a
 * point locally. The only client-side geometry work is resolving a box
 * gesture to an index set, which the edit vocabulary requires.
 */

import {
  ApiError,
  type CloudJson,
  type EditOp,
  type Selection,
  type StateSummary,
} from "./api.js";
import { parseObj, type ParsedMesh, type Vec3 } from "./geometry.js";

export interface ServiceApi {
  state(): Promise<StateSummary>;
  cloud(): Promise<CloudJson>;
  upload(ply: Uint8Array): Promise<StateSummary>;
  edit(ops: EditOp[], revision?: number): Promise<StateSummary>;
  remesh(resolution?: number): Promise<{
    obj: string;
    millis: number;
    cache: "hit" | "miss";
    revision: number;
    resolution: number;
  }>;
  undo(): Promise<StateSummary>;
  redo(): Promise<StateSummary>;
}

export type UiSelection =
  | { mode: "sphere-brush"; center: Vec3; radius: number; revision: number }
  | { mode: "box"; min: Vec3; max: Vec3; revision: number };

export interface Toast {
  id: number;
  text: string;
  tone: "info" | "error";
}

export type Phase = "connecting" | "offline" | "empty" | "ready";

export class BusyError extends Error {
  constructor() {
    super("another change is still in flight");
    this.name = "BusyError";
  }
}

let nextToastId = 1;

export class EditorSession {
  summary: StateSummary | null = null;
  cloud: CloudJson | null = null;
  selection: UiSelection | null = null;
  mesh: ParsedMesh | null = null;
  meshRevision = -1;
  meshMillis: number | null = null;
  meshCache: "hit" | "miss" | null = null;
  toasts: Toast[] = [];
  offline = false;
  lastChanged: number | null = null;
  private busy = false;
  private listeners = new Set<() => void>();

  constructor(private readonly api: ServiceApi) {}

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) {
      fn();
    }
  }

  get phase(): Phase {
    if (this.offline) {
      return "offline";
    }
    if (this.summary === null) {
      return "connecting";
    }
    return this.summary.n === 0 ? "empty" : "ready";
  }

  get revision(): number {
    return this.summary?.revision ?? 0;
  }

  get mutationInFlight(): boolean {
    return this.busy;
  }

  pushToast(text: string, tone: Toast["tone"] = "info"): Toast {
    const toast = { id: nextToastId++, text, tone };
    this.toasts = [...this.toasts, toast].slice(-4);
    this.emit();
    return toast;
  }

  dismissToast(id: number): void {
    this.toasts = this.toasts.filter((t) => t.id !== id);
    this.emit();
  }

  /** Pull /state and the point cloud; flips the offline banner on failure. */
  async refresh(): Promise<void> {
    try {
      this.summary = await this.api.state();
      this.cloud = this.summary.n > 0 ? await this.api.cloud() : null;
      this.offline = false;
    } catch (err) {
      if (err instanceof ApiError) {
        throw err;
      }
      this.offline = true; // fetch-level failure, not an HTTP status
    } finally {
      if (this.mesh !== null && this.meshRevision !== this.revision) {
        this.mesh = null;
        this.meshCache = null;
      }
      if (this.selection !== null && this.selection.revision !== this.revision) {
        this.selection = this.retagSelection(this.selection);
      }
      this.emit();
    }
  }

  /** Box gestures re-resolve against the live cloud; brushes just re-tag. */
  private retagSelection(sel: UiSelection): UiSelection | null {
    if (this.cloud === null) {
      return null;
    }
    return { ...sel, revision: this.cloud.revision };
  }

  setSelection(sel: UiSelection | null): void {
    if (sel !== null && sel.revision !== this.revision) {
      throw new Error(
        `selection tagged for revision ${sel.revision}, cloud is at ${this.revision}`,
      );
    }
    this.selection = sel;
    this.emit();
  }

  /** How many points the current gesture covers, mirrored locally. */
  selectionSize(): number {
    if (this.selection === null || this.cloud === null) {
      return 0;
    }
    const resolved = this.resolveSelection(this.selection);
    if (resolved.type === "indices") {
      return resolved.indices.length;
    }
    if (resolved.type === "all") {
      return this.cloud.points.length;
    }
    let count = 0;
    for (const p of this.cloud.points) {
      const d = Math.hypot(
        p[0] - resolved.center[0],
        p[1] - resolved.center[1],
        p[2] - resolved.center[2],
      );
      if (d <= resolved.radius) {
        count += 1;
      }
    }
    return count;
  }

  /** Translate a gesture into the service's selection vocabulary. */
  resolveSelection(sel: UiSelection): Selection {
    if (sel.revision !== this.revision) {
      throw new Error("selection is stale; refresh before resolving");
    }
    if (sel.mode === "sphere-brush") {
      return { type: "sphere", center: [...sel.center], radius: sel.radius };
    }
    if (this.cloud === null) {
      return { type: "indices", indices: [] };
    }
    const indices: number[] = [];
    this.cloud.points.forEach((p, i) => {
      if (
        p[0] >= sel.min[0] && p[0] <= sel.max[0] &&
        p[1] >= sel.min[1] && p[1] <= sel.max[1] &&
        p[2] >= sel.min[2] && p[2] <= sel.max[2]
      ) {
        indices.push(i);
      }
    });
    return { type: "indices", indices };
  }

  private beginMutation(): void {
    if (this.busy) {
      throw new BusyError();
    }
    this.busy = true;
    this.emit();
  }

  private async afterMutation(summary: StateSummary): Promise<void> {
    this.summary = summary;
    this.cloud = summary.n > 0 ? await this.api.cloud() : null;
    if (this.meshRevision !== summary.revision) {
      this.mesh = null;
      this.meshCache = null;
    }
    this.selection =
      this.selection === null ? null : this.retagSelection(this.selection);
  }

  async uploadCloud(ply: Uint8Array): Promise<void> {
    this.beginMutation();
    try {
      const summary = await this.api.upload(ply);
      await this.afterMutation(summary);
      this.pushToast(`loaded ${summary.n} points`);
    } catch (err) {
      this.reportError(err);
      throw err;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  /**
   * POST one edit with the current revision tag. A stale 409 forces a
   * refresh and a single retry with the gesture re-resolved.
   */
  async submitEdit(
    kind: EditOp["kind"],
    params: Partial<Pick<EditOp, "offset" | "scale" | "pivot" | "color">> = {},
    selectionOverride?: UiSelection,
  ): Promise<number> {
    const gesture = selectionOverride ?? this.selection;
    if (gesture === null) {
      throw new Error(`${kind} needs an active selection`);
    }
    this.beginMutation();
    try {
      const changed = await this.postEditOnce(kind, params, gesture, true);
      this.lastChanged = changed;
      this.pushToast(`${kind}: ${changed} point${changed === 1 ? "" : "s"} changed`);
      return changed;
    } catch (err) {
      this.reportError(err);
      throw err;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  private async postEditOnce(
    kind: EditOp["kind"],
    params: Partial<Pick<EditOp, "offset" | "scale" | "pivot" | "color">>,
    gesture: UiSelection,
    allowRetry: boolean,
  ): Promise<number> {
    const tagged =
      gesture.revision === this.revision ? gesture : this.retagSelection(gesture);
    if (tagged === null) {
      throw new Error("no cloud to edit");
    }
    const op: EditOp = { kind, select: this.resolveSelection(tagged), ...params };
    try {
      const summary = await this.api.edit([op], this.revision);
      await this.afterMutation(summary);
      return summary.changed ?? 0;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409 && allowRetry) {
        await this.refresh(); // forced refresh, then one retry
        return this.postEditOnce(kind, params, gesture, false);
      }
      throw err;
    }
  }

  async remesh(resolution?: number): Promise<void> {
    this.beginMutation();
    try {
      const res = await this.api.remesh(resolution);
      this.mesh = parseObj(res.obj);
      this.meshRevision = res.revision;
      this.meshMillis = res.millis;
      this.meshCache = res.cache;
    } catch (err) {
      this.reportError(err);
      throw err;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  async undo(): Promise<void> {
    await this.historyStep(() => this.api.undo());
  }

  async redo(): Promise<void> {
    await this.historyStep(() => this.api.redo());
  }

  private async historyStep(call: () => Promise<StateSummary>): Promise<void> {
    this.beginMutation();
    try {
      await this.afterMutation(await call());
    } catch (err) {
      this.reportError(err);
      throw err;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  private reportError(err: unknown): void {
    if (err instanceof ApiError) {
      this.pushToast(`${err.status}: ${err.message}`, "error");
    } else if (err instanceof BusyError) {
      this.pushToast(err.message, "error");
    } else if (err instanceof Error && err.name !== "GeometryError") {
      this.offline = true;
    } else if (err instanceof Error) {
      this.pushToast(err.message, "error");
    }
  }
}
