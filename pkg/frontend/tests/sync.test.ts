import { describe, expect, it, vi } from "vitest";

import { Syncer, SyncPayload, serviceTransport } from "../src/sync.js";
import { SceneSpecWire } from "../src/types.js";

function scene(seed = 0): SceneSpecWire {
  return {
    image_size: [480, 480],
    tiles: [],
    photometrics: { brightness_gain: 1, gamma: 1, noise_sigma: 0, shadow: null },
    global_jitter: { scale: 1, rotation_deg: 0, translation: [0, 0] },
    rng_seed: seed,
  };
}

function payload(tag: number): SyncPayload {
  return {
    detections: [],
    compose: {
      complete: false,
      chosen: [],
      matched: [],
      missing: [],
      misplaced: [],
      extra: [tag],
      feedback: [`tag ${tag}`],
    },
  };
}

describe("Syncer stale-response dropping", () => {
  it("drops an out-of-order response from an older request", async () => {
    // request 1 resolves after request 2: scripted out-of-order delivery
    const resolvers: ((p: SyncPayload) => void)[] = [];
    const transport = () =>
      new Promise<SyncPayload>((resolve) => {
        resolvers.push(resolve);
      });
    const applied: number[] = [];
    const syncer = new Syncer(transport, {
      onApply: (p) => applied.push(p.compose!.extra[0]),
      onError: () => {
        throw new Error("unexpected");
      },
    });

    const p1 = syncer.fire(scene(1), null);
    const p2 = syncer.fire(scene(2), null);
    expect(resolvers).toHaveLength(2);
    resolvers[1](payload(2)); // newer response lands first
    await p2;
    resolvers[0](payload(1)); // stale response arrives late
    await p1;

    expect(applied).toEqual([2]); // the stale payload was dropped
    expect(syncer.lastAppliedSeq).toBe(2);
  });

  it("applies in-order responses normally", async () => {
    let n = 0;
    const syncer = new Syncer(async () => payload(++n), {
      onApply: () => {},
      onError: () => {},
    });
    await syncer.fire(scene(), null);
    await syncer.fire(scene(), null);
    expect(syncer.lastAppliedSeq).toBe(2);
  });

  it("suppresses errors from superseded requests", async () => {
    const resolvers: { resolve: (p: SyncPayload) => void; reject: (e: Error) => void }[] = [];
    const transport = () =>
      new Promise<SyncPayload>((resolve, reject) => {
        resolvers.push({ resolve, reject });
      });
    const errors: unknown[] = [];
    const applied: number[] = [];
    const syncer = new Syncer(transport, {
      onApply: (p) => applied.push(p.compose!.extra[0]),
      onError: (e) => errors.push(e),
    });
    const p1 = syncer.fire(scene(1), null);
    const p2 = syncer.fire(scene(2), null);
    resolvers[1].resolve(payload(2));
    await p2;
    resolvers[0].reject(new Error("boom"));
    await p1;
    expect(applied).toEqual([2]);
    expect(errors).toHaveLength(0); // failure of a superseded request is silent
  });

  it("reports errors for the latest request", async () => {
    const errors: unknown[] = [];
    const syncer = new Syncer(
      async () => {
        throw new Error("offline");
      },
      { onApply: () => {}, onError: (e) => errors.push(e) },
    );
    await syncer.fire(scene(), null);
    expect(errors).toHaveLength(1);
  });
});

describe("Syncer debouncing", () => {
  it("collapses a burst of edits into one request", async () => {
    vi.useFakeTimers();
    try {
      let calls = 0;
      const syncer = new Syncer(
        async () => {
          calls++;
          return payload(calls);
        },
        { onApply: () => {}, onError: () => {}, debounceMs: 200 },
      );
      for (let i = 0; i < 25; i++) syncer.request(scene(i), null);
      expect(calls).toBe(0);
      await vi.advanceTimersByTimeAsync(250);
      expect(calls).toBe(1); // one request for the whole burst
    } finally {
      vi.useRealTimers();
    }
  });

  it("caps the request rate at one per window", async () => {
    vi.useFakeTimers();
    try {
      let calls = 0;
      const syncer = new Syncer(
        async () => {
          calls++;
          return payload(calls);
        },
        { onApply: () => {}, onError: () => {}, debounceMs: 200 },
      );
      // an edit every 50 ms for one second: trailing-edge debounce fires
      // only when a 200 ms gap opens, so the rate stays below 5/s
      for (let t = 0; t < 1000; t += 50) {
        syncer.request(scene(t), null);
        await vi.advanceTimersByTimeAsync(50);
      }
      await vi.advanceTimersByTimeAsync(300);
      expect(calls).toBeLessThanOrEqual(5);
      expect(calls).toBeGreaterThan(0);
    } finally {
      vi.useRealTimers();
    }
  });
});

describe("serviceTransport", () => {
  it("skips the compose call without a task", async () => {
    const detect = vi.fn(async () => []);
    const compose = vi.fn(async () => payload(0).compose!);
    const transport = serviceTransport(detect, compose);
    const out = await transport(scene(), null);
    expect(out.compose).toBeNull();
    expect(compose).not.toHaveBeenCalled();
    expect(detect).toHaveBeenCalledOnce();
  });

  it("runs detect and compose for a selected task", async () => {
    const detect = vi.fn(async () => []);
    const compose = vi.fn(async () => payload(7).compose!);
    const transport = serviceTransport(detect, compose);
    const out = await transport(scene(), "mushroom");
    expect(out.compose?.extra).toEqual([7]);
  });
});
