// Board state: the single source of truth for what the user has placed.
// All geometry verdicts come from the service; the board only tracks poses,
// keeps them inside the mat, and serializes to a SceneSpec.

import {
  CatalogSpec,
  ComposeResult,
  Detection,
  ORIENTATION_GAP_DEG,
  SceneSpecWire,
} from "./types.js";

export interface PlacedTile {
  id: number;
  specId: string;
  cx: number;
  cy: number;
  thetaDeg: number;
}

const HISTORY_LIMIT = 100;

function normalizeDeg(theta: number): number {
  const t = theta % 360;
  return t < 0 ? t + 360 : t;
}

export class Board {
  readonly width: number;
  readonly height: number;
  snapRotation = true;

  tiles: PlacedTile[] = [];
  taskId: string | null = null;
  lastDetections: Detection[] = [];
  lastResult: ComposeResult | null = null;

  private specs = new Map<string, CatalogSpec>();
  private history: PlacedTile[][] = [];
  private nextId = 1;

  constructor(catalog: CatalogSpec[], width = 480, height = 480) {
    for (const spec of catalog) this.specs.set(spec.id, spec);
    this.width = width;
    this.height = height;
  }

  spec(specId: string): CatalogSpec {
    const s = this.specs.get(specId);
    if (!s) throw new Error(`unknown tile spec ${specId}`);
    return s;
  }

  place(specId: string, cx: number, cy: number, thetaDeg = 0): PlacedTile {
    this.spec(specId);
    this.pushHistory();
    const clamped = this.clamp(specId, cx, cy);
    const tile: PlacedTile = {
      id: this.nextId++,
      specId,
      cx: clamped.cx,
      cy: clamped.cy,
      thetaDeg: this.maybeSnap(normalizeDeg(thetaDeg)),
    };
    this.tiles.push(tile);
    return tile;
  }

  move(id: number, cx: number, cy: number): void {
    const tile = this.find(id);
    this.pushHistory();
    const clamped = this.clamp(tile.specId, cx, cy);
    tile.cx = clamped.cx;
    tile.cy = clamped.cy;
  }

  rotate(id: number, deltaDeg: number): void {
    const tile = this.find(id);
    this.pushHistory();
    tile.thetaDeg = this.maybeSnap(normalizeDeg(tile.thetaDeg + deltaDeg));
  }

  remove(id: number): void {
    this.find(id);
    this.pushHistory();
    this.tiles = this.tiles.filter((t) => t.id !== id);
  }

  clear(): void {
    if (this.tiles.length === 0) return;
    this.pushHistory();
    this.tiles = [];
  }

  undo(): boolean {
    const prev = this.history.pop();
    if (!prev) return false;
    this.tiles = prev;
    return true;
  }

  selectTask(templateId: string | null): void {
    this.taskId = templateId;
    // a new target means old feedback no longer applies
    this.lastResult = null;
  }

  /** Tile whose polygon-ish disc contains the point, topmost first. */
  hitTest(x: number, y: number): PlacedTile | null {
    for (let i = this.tiles.length - 1; i >= 0; i--) {
      const t = this.tiles[i];
      const spec = this.spec(t.specId);
      const r = Math.hypot(spec.size[0], spec.size[1]) / 2;
      if (Math.hypot(t.cx - x, t.cy - y) <= r) return t;
    }
    return null;
  }

  toScene(): SceneSpecWire {
    return {
      image_size: [this.width, this.height],
      tiles: this.tiles.map((t) => ({
        spec_id: t.specId,
        cx: t.cx,
        cy: t.cy,
        theta_deg: t.thetaDeg,
      })),
      photometrics: { brightness_gain: 1, gamma: 1, noise_sigma: 0, shadow: null },
      global_jitter: { scale: 1, rotation_deg: 0, translation: [0, 0] },
      rng_seed: 0,
    };
  }

  private maybeSnap(theta: number): number {
    if (!this.snapRotation) return theta;
    return normalizeDeg(Math.round(theta / ORIENTATION_GAP_DEG) * ORIENTATION_GAP_DEG);
  }

  private clamp(specId: string, cx: number, cy: number): { cx: number; cy: number } {
    const spec = this.spec(specId);
    const m = Math.hypot(spec.size[0], spec.size[1]) / 2 + 2;
    return {
      cx: Math.min(Math.max(cx, m), this.width - m),
      cy: Math.min(Math.max(cy, m), this.height - m),
    };
  }

  private find(id: number): PlacedTile {
    const tile = this.tiles.find((t) => t.id === id);
    if (!tile) throw new Error(`no tile with id ${id}`);
    return tile;
  }

  private pushHistory(): void {
    this.history.push(this.tiles.map((t) => ({ ...t })));
    if (this.history.length > HISTORY_LIMIT) this.history.shift();
  }
}
