/** Client-side recomputation of the hypothesis test from returned results:
 * the sampling path is the exact empirical tail over the returned per-sample
 * contrast differences, so moving the threshold slider costs no request. */

export function empiricalTailP(deltaSamples: number[], tau: number): number {
  if (deltaSamples.length === 0) throw new Error("no delta samples");
  let n = 0;
  for (const d of deltaSamples) {
    if (d > tau) n += 1;
  }
  return n / deltaSamples.length;
}

/** Standard normal survival function via the Abramowitz-Stegun erfc fit
 * (|error| < 1.5e-7), for redrawing the direct path's tail locally. */
export function normalSf(z: number): number {
  const x = Math.abs(z) / Math.SQRT2;
  const t = 1 / (1 + 0.3275911 * x);
  const poly =
    t *
    (0.254829592 +
      t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
  const erfc = poly * Math.exp(-x * x);
  const sfAbs = erfc / 2;
  return z >= 0 ? sfAbs : 1 - sfAbs;
}

export function directTailP(muDelta: number, sigmaDelta: number, tau: number): number {
  if (sigmaDelta === 0) {
    return muDelta === tau ? 0.5 : muDelta > tau ? 1 : 0;
  }
  return normalSf((tau - muDelta) / sigmaDelta);
}

export function normalPdf(x: number, mu: number, sigma: number): number {
  const z = (x - mu) / sigma;
  return Math.exp(-0.5 * z * z) / (sigma * Math.sqrt(2 * Math.PI));
}

export interface Histogram {
  bin_edges: number[];
  counts: number[];
}

export function histogramFromSamples(samples: number[], nBins: number): Histogram {
  const lo = Math.min(...samples);
  const hi = Math.max(...samples);
  const span = hi > lo ? hi - lo : 1;
  const edges: number[] = [];
  for (let i = 0; i <= nBins; i++) edges.push(lo + (span * i) / nBins);
  const counts = new Array(nBins).fill(0);
  for (const s of samples) {
    let k = Math.floor(((s - lo) / span) * nBins);
    if (k === nBins) k = nBins - 1;
    counts[k] += 1;
  }
  return { bin_edges: edges, counts };
}
