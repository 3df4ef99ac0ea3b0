/**
 * Page wiring: fetch a sample and its mask, paint on a canvas, submit the
 * edit, watch progress, then compare before/after from several angles.
 * All state lives in CanvasMaskModel + ViewState; this file is DOM glue.
 */

import { ApiClient } from "./api.js";
import { CanvasMaskModel } from "./maskModel.js";
import type { PathPoint } from "./maskModel.js";
import { deriveRegion } from "./region.js";
import { submitEdit } from "./submit.js";
import { orbitCompare } from "./orbit.js";
import { ViewState } from "./viewState.js";

const SCALE = 8; // canvas pixels per grid cell

const client = new ApiClient("");
const view = new ViewState();
let model: CanvasMaskModel | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const banner = $("banner");
const canvas = $<HTMLCanvasElement>("paint");
const ctx = canvas.getContext("2d")!;
const sourceImg = $<HTMLImageElement>("source");
const resultImg = $<HTMLImageElement>("result");
const progressBar = $<HTMLProgressElement>("progress");
const spark = $<HTMLCanvasElement>("sparkline");
const orbitRow = $("orbit");

function setBanner(text: string, isError = false) {
  banner.textContent = text;
  banner.className = isError ? "error" : "";
}

function pngUrl(bytes: Uint8Array): string {
  return URL.createObjectURL(new Blob([bytes.slice().buffer], { type: "image/png" }));
}

function drawModel() {
  if (!model) return;
  canvas.width = model.width * SCALE;
  canvas.height = model.height * SCALE;
  for (let y = 0; y < model.height; y++) {
    for (let x = 0; x < model.width; x++) {
      const [r, g, b] = model.palette[model.grid[y * model.width + x]];
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
    }
  }
  // translucent preview of the region the server would be allowed to touch
  const region = deriveRegion(model.baseline, model.grid, model.width, model.height);
  ctx.fillStyle = "rgba(255,80,80,0.35)";
  for (let i = 0; i < region.length; i++) {
    if (region[i]) {
      ctx.fillRect((i % model.width) * SCALE, Math.floor(i / model.width) * SCALE, SCALE, SCALE);
    }
  }
}

function drawSparkline() {
  const g = spark.getContext("2d")!;
  g.clearRect(0, 0, spark.width, spark.height);
  const vals = view.sparkline;
  if (vals.length < 2) return;
  const lo = Math.min(...vals);
  const hi = Math.max(...vals);
  g.beginPath();
  vals.forEach((v, i) => {
    const x = (i / (vals.length - 1)) * spark.width;
    const y = spark.height - ((v - lo) / (hi - lo || 1)) * spark.height;
    i === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
  });
  g.strokeStyle = "#4286f4";
  g.stroke();
}

function buildPalette() {
  if (!model) return;
  const host = $("palette");
  host.innerHTML = "";
  model.classes.forEach((name, i) => {
    const btn = document.createElement("button");
    const [r, g, b] = model!.palette[i];
    btn.textContent = name;
    btn.style.borderLeft = `12px solid rgb(${r},${g},${b})`;
    btn.onclick = () => {
      model!.activeClass = i;
      setBanner(`painting '${name}'`);
    };
    host.appendChild(btn);
  });
}

async function refreshSource() {
  if (!view.latent) return;
  const png = await client.render(view.latent, view.camera());
  sourceImg.src = pngUrl(png);
}

async function loadSample(seed: number) {
  const info = await client.sample(seed);
  view.latent = info.latent;
  const grid = await client.mask(view.latent, view.camera());
  model = new CanvasMaskModel(grid);
  buildPalette();
  drawModel();
  await refreshSource();
  setBanner(`loaded ${info.latent} (seed ${seed})`);
}

function canvasCell(ev: MouseEvent): PathPoint {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * (model?.width ?? 1),
    y: ((ev.clientY - rect.top) / rect.height) * (model?.height ?? 1),
  };
}

let stroke: PathPoint[] | null = null;
canvas.addEventListener("mousedown", (ev) => {
  stroke = [canvasCell(ev)];
});
canvas.addEventListener("mousemove", (ev) => {
  if (!stroke || !model) return;
  stroke.push(canvasCell(ev));
});
canvas.addEventListener("mouseup", () => {
  if (stroke && model) {
    model.paintStroke(stroke);
    drawModel();
  }
  stroke = null;
});

async function main() {
  const layouts = await client.layouts();
  view.setLimits(layouts.camera_limits);
  view.size = layouts.default_size;

  const yawSlider = $<HTMLInputElement>("yaw");
  const pitchSlider = $<HTMLInputElement>("pitch");
  [yawSlider.min, yawSlider.max] = layouts.camera_limits.yaw.map(String);
  [pitchSlider.min, pitchSlider.max] = layouts.camera_limits.pitch.map(String);
  yawSlider.oninput = async () => {
    view.yaw = Number(yawSlider.value);
    await refreshSource();
  };
  pitchSlider.oninput = async () => {
    view.pitch = Number(pitchSlider.value);
    await refreshSource();
  };

  $("undo").onclick = () => {
    model?.undo();
    drawModel();
  };
  $("redo").onclick = () => {
    model?.redo();
    drawModel();
  };
  $("reload").onclick = () => loadSample(Number($<HTMLInputElement>("seed").value));

  $("submit").onclick = async () => {
    if (!model) return;
    const outcome = await submitEdit(client, model, view, {
      onStatus: (s) => setBanner(s),
      onProgress: (job) => {
        progressBar.value = job.progress;
        drawSparkline();
      },
    });
    if (outcome.warning) setBanner(outcome.warning, true);
    else if (!outcome.ok) setBanner(outcome.banner ?? "edit failed", true);
    else {
      setBanner(`job ${outcome.jobId} done`);
      resultImg.src = pngUrl(await client.result(outcome.jobId!, view.camera()));
    }
  };

  $("toggle").onclick = () => {
    const edited = view.toggleBeforeAfter();
    resultImg.style.display = edited ? "" : "none";
    sourceImg.style.display = edited ? "none" : "";
  };

  $("orbitBtn").onclick = async () => {
    try {
      const panes = await orbitCompare(client, view);
      orbitRow.innerHTML = "";
      for (const pane of panes) {
        for (const bytes of [pane.source, pane.edited]) {
          const img = document.createElement("img");
          img.src = pngUrl(bytes);
          img.title = `yaw ${pane.yaw.toFixed(2)}`;
          orbitRow.appendChild(img);
        }
      }
    } catch (err) {
      setBanner(String(err), true);
    }
  };

  await loadSample(0);
}

main().catch((err) => setBanner(String(err), true));
