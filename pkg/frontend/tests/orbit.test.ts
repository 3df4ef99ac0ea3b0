import { afterEach, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { ViewState } from "../src/viewState.js";
import { orbitCompare, StaleJobError } from "../src/orbit.js";
import { startStub, type Stub } from "./stub.js";

function png(tag: number): Buffer {
  return Buffer.from([0x89, 0x50, 0x4e, 0x47, tag]);
}

function readyView(): ViewState {
  const v = new ViewState();
  v.latent = "s5";
  v.yaw = 0.1;
  v.pitch = 0.05;
  v.size = 32;
  v.startJob("j9");
  return v;
}

let stub: Stub | undefined;
afterEach(async () => {
  await stub?.close();
  stub = undefined;
});

describe("orbitCompare", () => {
  it("fetches an edited/source pair at each yaw offset with matching cameras", async () => {
    stub = await startStub((req) => {
      const yaw = Number(req.query.get("yaw"));
      if (req.path === "/api/result/j9") return { status: 200, raw: png(Math.round(yaw * 100) + 50) };
      if (req.path === "/api/render" && req.query.get("latent") === "s5") return { status: 200, raw: png(Math.round(yaw * 100) + 120) };
      return { status: 404, body: { error: "nope" } };
    });

    const view = readyView();
    const panes = await orbitCompare(new ApiClient(stub.base), view);

    expect(panes.length).toBe(3);
    expect(panes.map((p) => p.yaw)).toEqual([0.1 - 0.35, 0.1, 0.1 + 0.35]);
    for (const pane of panes) {
      expect(pane.pitch).toBe(0.05);
      expect(pane.source.slice(0, 4)).toEqual(new Uint8Array([0x89, 0x50, 0x4e, 0x47]));
      expect(pane.edited).not.toEqual(pane.source);
    }
    // every result fetch is paired with a render fetch at the identical camera
    const cams = (p: string) =>
      stub!.requests
        .filter((r) => r.path === p)
        .map((r) => [r.query.get("yaw"), r.query.get("pitch"), r.query.get("size")].join(","))
        .sort();
    expect(cams("/api/result/j9")).toEqual(cams("/api/render"));
    const sizes = stub.requests.map((r) => r.query.get("size"));
    expect(new Set(sizes)).toEqual(new Set(["32"]));
  });

  it("clamps orbit yaws to the camera limits", async () => {
    stub = await startStub(() => ({ status: 200, raw: png(1) }));
    const view = readyView();
    view.yaw = 0.5; // +0.35 would exceed the 0.55 limit
    const panes = await orbitCompare(new ApiClient(stub.base), view);
    const yaws = panes.map((p) => p.yaw);
    expect(yaws[0]).toBeCloseTo(0.15, 10);
    expect(yaws[1]).toBe(0.5);
    expect(yaws[2]).toBe(0.55);
  });

  it("maps a vanished result onto StaleJobError", async () => {
    stub = await startStub((req) => {
      if (req.path.startsWith("/api/result/")) return { status: 404, body: { error: "no such job" } };
      return { status: 200, raw: png(1) };
    });
    await expect(orbitCompare(new ApiClient(stub.base), readyView())).rejects.toBeInstanceOf(StaleJobError);
  });

  it("needs a finished job to compare against", async () => {
    const view = new ViewState();
    view.latent = "s5";
    await expect(orbitCompare(new ApiClient("http://127.0.0.1:1"), view)).rejects.toThrow(/job/);
  });
});
