/** JSON shapes exchanged with the HTTP API, one interface per payload. */

export interface CameraSpec {
  yaw: number;
  pitch: number;
  size: number;
}

/** Row-major class-index grid, the wire format of /api/mask. */
export interface MaskGrid {
  width: number;
  height: number;
  layout: string;
  classes: string[];
  palette: number[][]; // rgb 0..255 per class
  data: number[];
}

export interface SampleInfo {
  latent: string;
  seed: number;
  layers: number;
  dim: number;
}

export interface LayoutInfo {
  name: string;
  classes: string[];
  palette: number[][];
  has_adapter: boolean;
}

export interface CameraLimits {
  yaw: [number, number];
  pitch: [number, number];
}

export interface LayoutsResponse {
  layouts: LayoutInfo[];
  camera_limits: CameraLimits;
  default_size: number;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobInfo {
  id: string;
  kind: string;
  state: JobState;
  progress: number;
  result: string;
  error: string;
  metrics: Record<string, number>;
  target_mask?: MaskGrid;
}

export interface EditWeights {
  lam_ce?: number;
  lam_ovlp?: number;
}

export interface EditBody {
  latent: string;
  camera: { yaw: number; pitch: number; size: number };
  layout?: string;
  target_mask: MaskGrid | { data: number[] };
  region?: { data: number[] };
  weights?: EditWeights;
  mode?: string;
  budget?: number;
}
