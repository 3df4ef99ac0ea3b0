import { ApiClient, ApiError } from "./api.js";
import type { ViewState } from "./viewState.js";

export interface OrbitPane {
  yaw: number;
  pitch: number;
  source: Uint8Array;
  edited: Uint8Array;
}

export class StaleJobError extends Error {
  constructor(jobId: string) {
    super(`result for job ${jobId} is gone; re-run the edit`);
    this.name = "StaleJobError";
  }
}

/**
 * Fetch synchronized before/after renders at the slider camera for each
 * yaw offset, so a finished edit can be inspected from several angles.
 * Both panes of a pair share the exact camera; a 404 on the result side
 * means the job's artifacts were dropped by the server.
 */
export async function orbitCompare(
  client: ApiClient,
  view: ViewState,
  yawOffsets: number[] = [-0.35, 0, 0.35],
): Promise<OrbitPane[]> {
  if (!view.latent) throw new Error("no latent loaded");
  if (!view.jobId) throw new Error("no finished job to compare");
  const [lo, hi] = view.limits.yaw;
  const panes: OrbitPane[] = [];
  for (const off of yawOffsets) {
    const yaw = Math.min(hi, Math.max(lo, view.yaw + off));
    const cam = { yaw, pitch: view.pitch, size: view.size };
    let edited: Uint8Array;
    try {
      edited = await client.result(view.jobId, cam);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        throw new StaleJobError(view.jobId);
      }
      throw err;
    }
    const source = await client.render(view.latent, cam);
    panes.push({ yaw, pitch: view.pitch, source, edited });
  }
  return panes;
}
