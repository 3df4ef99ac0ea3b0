import type { CameraLimits, CameraSpec } from "./types.js";

const SPARKLINE_CAP = 200;

/**
 * Camera sliders, the before/after toggle, and the state of the current
 * job. Slider setters clamp to the limits advertised by /api/layouts so
 * the client can never request a camera the server would reject.
 */
export class ViewState {
  latent: string | null = null;
  size = 64;
  showEdited = true;
  jobId: string | null = null;
  progress = 0;
  sparkline: number[] = [];

  private _yaw = 0;
  private _pitch = 0;
  private _limits: CameraLimits = { yaw: [-0.55, 0.55], pitch: [-0.3, 0.3] };

  get yaw(): number {
    return this._yaw;
  }

  set yaw(v: number) {
    const [lo, hi] = this._limits.yaw;
    this._yaw = Math.min(hi, Math.max(lo, v));
  }

  get pitch(): number {
    return this._pitch;
  }

  set pitch(v: number) {
    const [lo, hi] = this._limits.pitch;
    this._pitch = Math.min(hi, Math.max(lo, v));
  }

  get limits(): CameraLimits {
    return { yaw: [...this._limits.yaw], pitch: [...this._limits.pitch] };
  }

  setLimits(limits: CameraLimits): void {
    this._limits = { yaw: [...limits.yaw], pitch: [...limits.pitch] };
    // re-clamp sliders that the narrower range may have orphaned
    this.yaw = this._yaw;
    this.pitch = this._pitch;
  }

  camera(): CameraSpec {
    return { yaw: this._yaw, pitch: this._pitch, size: this.size };
  }

  toggleBeforeAfter(): boolean {
    this.showEdited = !this.showEdited;
    return this.showEdited;
  }

  pushLoss(v: number): void {
    this.sparkline.push(v);
    if (this.sparkline.length > SPARKLINE_CAP) this.sparkline.shift();
  }

  startJob(id: string): void {
    this.jobId = id;
    this.progress = 0;
    this.sparkline = [];
  }
}
