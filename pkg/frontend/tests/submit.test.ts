import { afterEach, describe, expect, it } from "vitest";
import { CanvasMaskModel } from "../src/maskModel.js";
import { ViewState } from "../src/viewState.js";
import { ApiClient } from "../src/api.js";
import { submitEdit, UNEDITED_WARNING } from "../src/submit.js";
import type { MaskGrid } from "../src/types.js";
import { startStub, type Stub } from "./stub.js";

const W = 6;

function grid(): MaskGrid {
  return {
    width: W,
    height: W,
    layout: "base",
    classes: ["bg", "skin", "eye", "nose", "mouth", "hair"],
    palette: [[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4], [5, 5, 5]],
    data: new Array(W * W).fill(1),
  };
}

function paintedModel(): CanvasMaskModel {
  const m = new CanvasMaskModel(grid());
  m.activeClass = 2;
  m.brushRadius = 0;
  m.paintStroke([{ x: 2, y: 2 }]);
  return m;
}

function readyView(): ViewState {
  const v = new ViewState();
  v.latent = "s0";
  v.yaw = 0.1;
  v.pitch = 0.0;
  return v;
}

let stub: Stub | undefined;
afterEach(async () => {
  await stub?.close();
  stub = undefined;
});

describe("submitEdit", () => {
  it("refuses an unedited mask with a warning and sends nothing", async () => {
    // unreachable base: any request would throw, proving none was made
    const client = new ApiClient("http://127.0.0.1:1");
    const model = new CanvasMaskModel(grid());
    const out = await submitEdit(client, model, readyView(), {});
    expect(out.ok).toBe(false);
    expect(out.warning).toBe(UNEDITED_WARNING);
    expect(out.banner).toBeUndefined();
  });

  it("runs the happy path: post, poll to done, feed progress and sparkline", async () => {
    const jobSeq = [
      { id: "j1", kind: "edit", state: "queued", progress: 0, result: null, error: null, metrics: {} },
      { id: "j1", kind: "edit", state: "running", progress: 0.4, result: null, error: null, metrics: { step: 2, total: 1.25, dice: 0.8 } },
      { id: "j1", kind: "edit", state: "running", progress: 0.8, result: null, error: null, metrics: { step: 4, total: 0.9, dice: 0.55 } },
      { id: "j1", kind: "edit", state: "done", progress: 1, result: "j1", error: null, metrics: { steps: 5, best_step: 4, delta_norm: 0.02 } },
    ];
    stub = await startStub((req) => {
      if (req.path === "/api/edit") return { status: 202, body: { job: "j1" } };
      if (req.path === "/api/job/j1") return { status: 200, body: jobSeq[Math.min(req.nth - 1, jobSeq.length - 1)] };
      return { status: 404, body: { error: "nope" } };
    });

    const model = paintedModel();
    const view = readyView();
    const seen: number[] = [];
    const out = await submitEdit(new ApiClient(stub.base), model, view, {
      budget: 40,
      mode: "overlap",
      pollMs: 5,
      onProgress: (j) => seen.push(j.progress),
    });

    expect(out.ok).toBe(true);
    expect(out.jobId).toBe("j1");
    expect(out.job?.state).toBe("done");
    expect(view.progress).toBe(1);
    // one loss point per running poll that carried a total
    expect(view.sparkline).toEqual([1.25, 0.9]);
    for (let i = 1; i < seen.length; i++) expect(seen[i]).toBeGreaterThanOrEqual(seen[i - 1]);

    const post = stub.requests.find((r) => r.path === "/api/edit");
    expect(post?.method).toBe("POST");
    expect(post?.body.latent).toBe("s0");
    expect(post?.body.camera).toEqual({ yaw: 0.1, pitch: 0.0, size: W });
    expect(post?.body.layout).toBe("base");
    expect(post?.body.mode).toBe("overlap");
    expect(post?.body.budget).toBe(40);
    expect(post?.body.target_mask.data).toEqual(model.toGrid().data);
    // one cell at (2,2), dilation 3: 25-cell Manhattan diamond minus the
    // two corners that fall off the 6x6 grid
    const region: number[] = post?.body.region.data;
    expect(region.filter((v: number) => v === 1).length).toBe(23);
  });

  it("retries while the optimizer is busy and reports the wait", async () => {
    stub = await startStub((req) => {
      if (req.path === "/api/edit") {
        if (req.nth <= 2) return { status: 409, body: { error: "edit queue full" } };
        return { status: 202, body: { job: "j2" } };
      }
      if (req.path === "/api/job/j2") {
        return { status: 200, body: { id: "j2", kind: "edit", state: "done", progress: 1, result: "j2", error: null, metrics: {} } };
      }
      return { status: 404, body: { error: "nope" } };
    });

    const statuses: string[] = [];
    const out = await submitEdit(new ApiClient(stub.base), paintedModel(), readyView(), {
      pollMs: 5,
      onStatus: (s) => statuses.push(s),
    });

    expect(out.ok).toBe(true);
    expect(stub.requests.filter((r) => r.path === "/api/edit").length).toBe(3);
    expect(statuses).toContain("optimizer busy; queued for retry");
  });

  it("turns a server error into a banner instead of throwing", async () => {
    stub = await startStub(() => ({ status: 500, body: { error: "boom" } }));
    const out = await submitEdit(new ApiClient(stub.base), paintedModel(), readyView(), {});
    expect(out.ok).toBe(false);
    expect(out.banner).toBe("HTTP 500: boom");
  });

  it("surfaces a failed job through its banner", async () => {
    stub = await startStub((req) => {
      if (req.path === "/api/edit") return { status: 202, body: { job: "j3" } };
      return {
        status: 200,
        body: { id: "j3", kind: "edit", state: "failed", progress: 0.2, result: null, error: "region empty", metrics: {} },
      };
    });
    const out = await submitEdit(new ApiClient(stub.base), paintedModel(), readyView(), { pollMs: 5 });
    expect(out.ok).toBe(false);
    expect(out.banner).toBe("job failed: region empty");
  });

  it("asks for a latent before anything else", async () => {
    const client = new ApiClient("http://127.0.0.1:1");
    const view = new ViewState();
    const out = await submitEdit(client, paintedModel(), view, {});
    expect(out.ok).toBe(false);
    expect(out.banner).toMatch(/latent/);
  });
});
