import { ApiClient, ApiError } from "./api.js";
import type { CanvasMaskModel } from "./maskModel.js";
import { deriveRegion } from "./region.js";
import type { ViewState } from "./viewState.js";
import type { EditWeights, JobInfo } from "./types.js";

export interface SubmitOptions {
  /** Submit even when the mask equals the fetched baseline. */
  force?: boolean;
  weights?: EditWeights;
  mode?: "overlap" | "percentage";
  budget?: number;
  regionDilation?: number;
  pollMs?: number;
  timeoutMs?: number;
  onProgress?: (job: JobInfo) => void;
  onStatus?: (banner: string) => void;
}

export interface SubmitOutcome {
  ok: boolean;
  /** Set when the client refused to submit (unedited mask). */
  warning?: string;
  /** Set when the request or the job failed; shown in the status banner. */
  banner?: string;
  jobId?: string;
  job?: JobInfo;
}

export const UNEDITED_WARNING =
  "mask matches the fetched prediction; paint a change first (or force-submit)";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Submit the painted mask as an edit job and poll it to completion.
 *
 * Refuses unedited masks unless `force` is set. The editable region is
 * derived client-side from the baseline/painted difference and sent along
 * so the server optimizes exactly what the user confirmed. A full queue
 * (409) downgrades to a "queued" banner and retries on the poll interval.
 */
export async function submitEdit(
  client: ApiClient,
  model: CanvasMaskModel,
  view: ViewState,
  opts: SubmitOptions = {},
): Promise<SubmitOutcome> {
  if (!view.latent) return { ok: false, banner: "no latent loaded" };
  if (!model.isEdited() && !opts.force) {
    return { ok: false, warning: UNEDITED_WARNING };
  }

  const pollMs = opts.pollMs ?? 250;
  const timeoutMs = opts.timeoutMs ?? 300_000;
  const deadline = Date.now() + timeoutMs;
  const region = deriveRegion(
    model.baseline,
    model.grid,
    model.width,
    model.height,
    opts.regionDilation,
  );
  const body = {
    latent: view.latent,
    camera: { yaw: view.yaw, pitch: view.pitch, size: model.width },
    layout: model.layout,
    target_mask: model.toGrid(),
    region: { data: region },
    weights: opts.weights,
    mode: opts.mode,
    budget: opts.budget,
  };

  let jobId: string;
  for (;;) {
    try {
      jobId = await client.submitEdit(body);
      break;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        opts.onStatus?.("optimizer busy; queued for retry");
        if (Date.now() >= deadline) {
          return { ok: false, banner: "timed out waiting for a queue slot" };
        }
        await sleep(pollMs);
        continue;
      }
      const msg = err instanceof ApiError ? `HTTP ${err.status}: ${err.message}` : String(err);
      return { ok: false, banner: msg };
    }
  }

  view.startJob(jobId);
  opts.onStatus?.(`job ${jobId} submitted`);

  for (;;) {
    let job: JobInfo;
    try {
      job = await client.job(jobId);
    } catch (err) {
      const msg = err instanceof ApiError ? `HTTP ${err.status}: ${err.message}` : String(err);
      return { ok: false, banner: msg, jobId };
    }
    view.progress = job.progress;
    if (typeof job.metrics.total === "number") view.pushLoss(job.metrics.total);
    opts.onProgress?.(job);
    if (job.state === "done") return { ok: true, jobId, job };
    if (job.state === "failed") {
      return { ok: false, banner: `job failed: ${job.error}`, jobId, job };
    }
    if (Date.now() >= deadline) {
      return { ok: false, banner: "timed out polling the job", jobId, job };
    }
    await sleep(pollMs);
  }
}
