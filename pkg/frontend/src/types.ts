// Wire types mirroring the service's JSON formats.

export interface CatalogSpec {
  id: string;
  shape: string;
  color: [number, number, number];
  size: [number, number];
  symmetry: number;
  unit_vertices: [number, number][];
}

export interface TemplateSlot {
  shape: string;
  spec_id: string | null;
  cx: number;
  cy: number;
  theta_deg: number;
  name?: string;
  vertices?: [number, number][];
  color?: [number, number, number];
}

export interface TemplateGroup {
  name?: string;
  alternatives: TemplateSlot[][];
}

export interface Template {
  id: string;
  parts: TemplateGroup[];
}

export interface TilePoseWire {
  spec_id: string;
  cx: number;
  cy: number;
  theta_deg: number;
}

export interface SceneSpecWire {
  image_size: [number, number];
  tiles: TilePoseWire[];
  photometrics: {
    brightness_gain: number;
    gamma: number;
    noise_sigma: number;
    shadow: null;
  };
  global_jitter: {
    scale: number;
    rotation_deg: number;
    translation: [number, number];
  };
  rng_seed: number;
}

export interface Detection {
  shape: string;
  spec_id: string | null;
  score: number;
  cx: number;
  cy: number;
  theta_deg: number;
  orientation_bin: number;
  vertices: [number, number][];
}

export interface SlotRef {
  group: number;
  slot: number;
  detection?: number | null;
  shape?: string | null;
  pos_err?: number | null;
  theta_err?: number | null;
}

export interface ComposeResult {
  complete: boolean;
  chosen: { group: number; name: string | null; alternative: number }[];
  matched: SlotRef[];
  missing: SlotRef[];
  misplaced: SlotRef[];
  extra: number[];
  feedback: string[];
}

export const ORIENTATION_GAP_DEG = 7.5;
