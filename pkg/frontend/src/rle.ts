/** ROI masks: rasterization of circles and polygons to boolean grids, and the
 * row-major run-length encoding shared with the server (alternating run
 * lengths starting with background). */

export interface RleMask {
  size: [number, number];
  counts: number[];
}

export type Mask = { height: number; width: number; data: Uint8Array };

export function emptyMask(height: number, width: number): Mask {
  return { height, width, data: new Uint8Array(height * width) };
}

export function maskArea(mask: Mask): number {
  let n = 0;
  for (const v of mask.data) n += v;
  return n;
}

export function encodeRle(mask: Mask): RleMask {
  const counts: number[] = [];
  let current = 0;
  let run = 0;
  for (const v of mask.data) {
    const bit = v ? 1 : 0;
    if (bit === current) {
      run += 1;
    } else {
      counts.push(run);
      current = bit;
      run = 1;
    }
  }
  counts.push(run);
  return { size: [mask.height, mask.width], counts };
}

export function decodeRle(rle: RleMask): Mask {
  const [h, w] = rle.size;
  const total = rle.counts.reduce((a, b) => a + b, 0);
  if (total !== h * w) {
    throw new Error(`RLE counts sum to ${total}, expected ${h * w}`);
  }
  const mask = emptyMask(h, w);
  let pos = 0;
  let value = 0;
  for (const run of rle.counts) {
    if (run < 0) throw new Error("negative run length");
    if (value) mask.data.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  return mask;
}

/** Pixel-center-in-circle test; (ci, cj) and r in pixel coordinates. */
export function rasterizeCircle(
  height: number,
  width: number,
  ci: number,
  cj: number,
  r: number,
): Mask {
  const mask = emptyMask(height, width);
  const r2 = r * r;
  for (let i = 0; i < height; i++) {
    for (let j = 0; j < width; j++) {
      const di = i + 0.5 - ci;
      const dj = j + 0.5 - cj;
      if (di * di + dj * dj <= r2) mask.data[i * width + j] = 1;
    }
  }
  return mask;
}

/** Even-odd rule over pixel centers; points are [i, j] vertices. */
export function rasterizePolygon(
  height: number,
  width: number,
  points: Array<[number, number]>,
): Mask {
  const mask = emptyMask(height, width);
  if (points.length < 3) return mask;
  for (let i = 0; i < height; i++) {
    for (let j = 0; j < width; j++) {
      const pi = i + 0.5;
      const pj = j + 0.5;
      let inside = false;
      for (let a = 0, b = points.length - 1; a < points.length; b = a++) {
        const [ai, aj] = points[a];
        const [bi, bj] = points[b];
        if (ai > pi !== bi > pi && pj < ((bj - aj) * (pi - ai)) / (bi - ai) + aj) {
          inside = !inside;
        }
      }
      if (inside) mask.data[i * width + j] = 1;
    }
  }
  return mask;
}

/** Remove pixels of `mask` that collide with `other`; reports whether any
 * clipping happened so the UI can warn. */
export function clipAgainst(mask: Mask, other: Mask): { mask: Mask; clipped: boolean } {
  const out = { height: mask.height, width: mask.width, data: mask.data.slice() };
  let clipped = false;
  for (let k = 0; k < out.data.length; k++) {
    if (out.data[k] && other.data[k]) {
      out.data[k] = 0;
      clipped = true;
    }
  }
  return { mask: out, clipped };
}

export function masksOverlap(a: Mask, b: Mask): boolean {
  for (let k = 0; k < a.data.length; k++) {
    if (a.data[k] && b.data[k]) return true;
  }
  return false;
}
