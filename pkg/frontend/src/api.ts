import type {
  CameraSpec,
  EditBody,
  JobInfo,
  LayoutsResponse,
  MaskGrid,
  SampleInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { error?: string };
    if (body.error) detail = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

function cameraQuery(cam: CameraSpec): URLSearchParams {
  return new URLSearchParams({
    yaw: String(cam.yaw),
    pitch: String(cam.pitch),
    size: String(cam.size),
  });
}

/** Thin typed wrapper over the edit service endpoints. */
export class ApiClient {
  private fetchFn: typeof fetch;

  constructor(
    readonly base: string,
    fetchFn?: typeof fetch,
  ) {
    this.fetchFn = fetchFn ?? fetch;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  private async getBytes(path: string): Promise<Uint8Array> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) throw await parseError(res);
    return new Uint8Array(await res.arrayBuffer());
  }

  sample(seed: number): Promise<SampleInfo> {
    return this.getJson(`/api/sample?seed=${seed}`);
  }

  layouts(): Promise<LayoutsResponse> {
    return this.getJson("/api/layouts");
  }

  mask(latent: string, cam: CameraSpec, layout = "base"): Promise<MaskGrid> {
    const q = cameraQuery(cam);
    q.set("latent", latent);
    q.set("layout", layout);
    return this.getJson(`/api/mask?${q}`);
  }

  render(latent: string, cam: CameraSpec): Promise<Uint8Array> {
    const q = cameraQuery(cam);
    q.set("latent", latent);
    return this.getBytes(`/api/render?${q}`);
  }

  /** POST /api/edit; resolves to the job id. 409 = queue full. */
  async submitEdit(body: EditBody): Promise<string> {
    const res = await this.fetchFn(this.base + "/api/edit", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await parseError(res);
    const out = (await res.json()) as { job: string };
    return out.job;
  }

  job(id: string): Promise<JobInfo> {
    return this.getJson(`/api/job/${id}`);
  }

  result(id: string, cam: CameraSpec): Promise<Uint8Array> {
    return this.getBytes(`/api/result/${id}?${cameraQuery(cam)}`);
  }
}
