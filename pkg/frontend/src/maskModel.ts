import type { MaskGrid } from "./types.js";

export interface PathPoint {
  x: number;
  y: number;
}

/** One undo unit: the cells a stroke changed, with both values. */
export interface StrokeDiff {
  cells: { idx: number; before: number; after: number }[];
}

function distToSegment(px: number, py: number, a: PathPoint, b: PathPoint): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lenSq = dx * dx + dy * dy;
  let t = 0;
  if (lenSq > 0) {
    t = Math.max(0, Math.min(1, ((px - a.x) * dx + (py - a.y) * dy) / lenSq));
  }
  const cx = a.x + t * dx;
  const cy = a.y + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/**
 * Local paint model for one fetched mask. The grid is row-major class
 * indices exactly as served by /api/mask; the baseline copy is kept so the
 * client can tell an edited mask from an untouched one.
 */
export class CanvasMaskModel {
  readonly width: number;
  readonly height: number;
  readonly layout: string;
  readonly classes: string[];
  readonly palette: number[][];
  readonly baseline: number[];
  grid: number[];
  activeClass = 1;
  brushRadius = 2;

  private undoStack: StrokeDiff[] = [];
  private redoStack: StrokeDiff[] = [];

  constructor(source: MaskGrid) {
    if (source.data.length !== source.width * source.height) {
      throw new Error(
        `grid length ${source.data.length} != ${source.width}x${source.height}`,
      );
    }
    this.width = source.width;
    this.height = source.height;
    this.layout = source.layout;
    this.classes = [...source.classes];
    this.palette = source.palette.map((c) => [...c]);
    this.grid = [...source.data];
    this.baseline = [...source.data];
  }

  /**
   * Set every cell within `radius` (euclidean, cell centers) of the path to
   * `cls`. A zero-length path paints a single disc. Returns the recorded
   * diff; an empty diff (painting over same-class cells) is not pushed onto
   * the undo stack.
   */
  paintStroke(path: PathPoint[], cls?: number, radius?: number): StrokeDiff {
    const c = cls ?? this.activeClass;
    const r = radius ?? this.brushRadius;
    if (!Number.isInteger(c) || c < 0 || c >= this.classes.length) {
      throw new Error(`class ${c} out of range for layout '${this.layout}'`);
    }
    if (path.length === 0) return { cells: [] };

    const diff: StrokeDiff = { cells: [] };
    const segs: [PathPoint, PathPoint][] = [];
    if (path.length === 1) segs.push([path[0], path[0]]);
    for (let i = 1; i < path.length; i++) segs.push([path[i - 1], path[i]]);

    // bounding box per segment keeps the scan cheap on large grids
    for (const [a, b] of segs) {
      const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - r));
      const x1 = Math.min(this.width - 1, Math.ceil(Math.max(a.x, b.x) + r));
      const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - r));
      const y1 = Math.min(this.height - 1, Math.ceil(Math.max(a.y, b.y) + r));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const idx = y * this.width + x;
          if (this.grid[idx] === c) continue;
          if (distToSegment(x, y, a, b) <= r) {
            diff.cells.push({ idx, before: this.grid[idx], after: c });
            this.grid[idx] = c;
          }
        }
      }
    }
    if (diff.cells.length > 0) {
      this.undoStack.push(diff);
      this.redoStack = [];
    }
    return diff;
  }

  undo(): boolean {
    const diff = this.undoStack.pop();
    if (!diff) return false;
    for (let i = diff.cells.length - 1; i >= 0; i--) {
      this.grid[diff.cells[i].idx] = diff.cells[i].before;
    }
    this.redoStack.push(diff);
    return true;
  }

  redo(): boolean {
    const diff = this.redoStack.pop();
    if (!diff) return false;
    for (const cell of diff.cells) this.grid[cell.idx] = cell.after;
    this.undoStack.push(diff);
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** True once any cell differs from the grid as fetched. */
  isEdited(): boolean {
    return this.grid.some((v, i) => v !== this.baseline[i]);
  }

  toGrid(): MaskGrid {
    return {
      width: this.width,
      height: this.height,
      layout: this.layout,
      classes: [...this.classes],
      palette: this.palette.map((c) => [...c]),
      data: [...this.grid],
    };
  }
}
