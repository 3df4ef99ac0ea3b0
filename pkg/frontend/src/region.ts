/**
 * Editable-region derivation, mirroring the server's default: cells where
 * the painted grid differs from the baseline, dilated by `dilation` steps
 * of 4-neighborhood growth (a Manhattan diamond around each changed cell).
 * The result is what the client overlays for confirmation and submits.
 */
export function deriveRegion(
  baseline: number[],
  edited: number[],
  width: number,
  height: number,
  dilation = 3,
): number[] {
  if (baseline.length !== edited.length || baseline.length !== width * height) {
    throw new Error("grid sizes disagree");
  }
  let region = baseline.map((v, i) => (v !== edited[i] ? 1 : 0));
  for (let step = 0; step < dilation; step++) {
    const grown = [...region];
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const idx = y * width + x;
        if (region[idx]) continue;
        if (
          (x > 0 && region[idx - 1]) ||
          (x < width - 1 && region[idx + 1]) ||
          (y > 0 && region[idx - width]) ||
          (y < height - 1 && region[idx + width])
        ) {
          grown[idx] = 1;
        }
      }
    }
    region = grown;
  }
  return region;
}

export function regionCellCount(region: number[]): number {
  return region.reduce((n, v) => n + (v ? 1 : 0), 0);
}
