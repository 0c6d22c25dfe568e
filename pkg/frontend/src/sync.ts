// Debounced board-to-service synchronization with stale-response dropping.
//
// Every edit schedules a sync; at most one request fires per debounce window
// (default 200 ms, i.e. at most 5 requests/second). Responses carry the
// sequence number of their request and are dropped when a newer response
// has already been applied, so the feedback panel always reflects the most
// recent completed state.

import { ComposeResult, Detection, SceneSpecWire } from "./types.js";

export interface SyncPayload {
  detections: Detection[];
  compose: ComposeResult | null;
}

export type Transport = (
  scene: SceneSpecWire,
  templateId: string | null,
) => Promise<SyncPayload>;

export interface SyncerOptions {
  debounceMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  onApply: (payload: SyncPayload, seq: number) => void;
  onError: (error: unknown) => void;
}

export class Syncer {
  private seq = 0;
  private appliedSeq = 0;
  private timer: unknown = null;
  private pending: { scene: SceneSpecWire; templateId: string | null } | null = null;
  private readonly debounceMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(
    private transport: Transport,
    private opts: SyncerOptions,
  ) {
    this.debounceMs = opts.debounceMs ?? 200;
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  /** Schedule a sync; collapses bursts into one request per window. */
  request(scene: SceneSpecWire, templateId: string | null): void {
    this.pending = { scene, templateId };
    if (this.timer !== null) this.clearTimer(this.timer);
    this.timer = this.setTimer(() => {
      this.timer = null;
      const p = this.pending;
      this.pending = null;
      if (p) void this.fire(p.scene, p.templateId);
    }, this.debounceMs);
  }

  /** Send immediately (used on first load and by tests). */
  async fire(scene: SceneSpecWire, templateId: string | null): Promise<number> {
    const id = ++this.seq;
    try {
      const payload = await this.transport(scene, templateId);
      if (id <= this.appliedSeq) return id; // stale: a newer response landed first
      this.appliedSeq = id;
      this.opts.onApply(payload, id);
    } catch (err) {
      if (id > this.appliedSeq) this.opts.onError(err);
    }
    return id;
  }

  get lastAppliedSeq(): number {
    return this.appliedSeq;
  }
}

/** Standard transport: detection and composition check in parallel. */
export function serviceTransport(
  detect: (scene: SceneSpecWire) => Promise<Detection[]>,
  composeCheck: (scene: SceneSpecWire, templateId: string) => Promise<ComposeResult>,
): Transport {
  return async (scene, templateId) => {
    const detections = detect(scene);
    const compose = templateId ? composeCheck(scene, templateId) : Promise.resolve(null);
    return { detections: await detections, compose: await compose };
  };
}
