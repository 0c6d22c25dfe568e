// HTTP client for the tilelab service. fetch is injectable for tests.

import { CatalogSpec, ComposeResult, Detection, SceneSpecWire, Template } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const r = await this.fetchFn(this.base + path);
    if (!r.ok) throw new Error(`GET ${path} -> ${r.status}`);
    return (await r.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const r = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!r.ok) throw new Error(`POST ${path} -> ${r.status}`);
    return (await r.json()) as T;
  }

  catalog(): Promise<CatalogSpec[]> {
    return this.getJson("/catalog");
  }

  templates(): Promise<Template[]> {
    return this.getJson("/templates");
  }

  async detect(scene: SceneSpecWire): Promise<Detection[]> {
    const doc = await this.postJson<{ detections: Detection[] }>("/detect", scene);
    return doc.detections;
  }

  composeCheck(scene: SceneSpecWire, templateId: string): Promise<ComposeResult> {
    return this.postJson("/compose/check", { template_id: templateId, scene });
  }
}
