/** Canvas rendering: windowed grayscale slice with ROI overlays (feature red,
 * reference blue), and the contrast-difference histogram with the threshold
 * line and the direct path's Normal curve overlaid. */

import { Tensor } from "./binv.js";
import { Mask } from "./rle.js";
import { grayToRgba, windowToGray } from "./windowing.js";
import { MethodResult } from "./api.js";
import { directTailP, empiricalTailP, normalPdf } from "./stats.js";

const FEATURE_RGBA: [number, number, number, number] = [220, 50, 47, 110];
const REFERENCE_RGBA: [number, number, number, number] = [38, 110, 220, 110];

export function renderImage(
  canvas: HTMLCanvasElement,
  tensor: Tensor,
  loHu: number,
  hiHu: number,
  feature: Mask | null,
  reference: Mask | null,
): void {
  const [h, w] = tensor.shape.slice(-2);
  const gray = windowToGray(tensor.data, loHu, hiHu);
  const rgba = grayToRgba(gray);
  blendMask(rgba, feature, FEATURE_RGBA);
  blendMask(rgba, reference, REFERENCE_RGBA);
  const ctx = canvas.getContext("2d")!;
  const image = new ImageData(new Uint8ClampedArray(rgba), w, h);
  const off = document.createElement("canvas");
  off.width = w;
  off.height = h;
  off.getContext("2d")!.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function blendMask(
  rgba: Uint8ClampedArray,
  mask: Mask | null,
  color: [number, number, number, number],
): void {
  if (!mask) return;
  const [r, g, b, a] = color;
  const alpha = a / 255;
  for (let k = 0; k < mask.data.length; k++) {
    if (!mask.data[k]) continue;
    rgba[4 * k] = Math.round(rgba[4 * k] * (1 - alpha) + r * alpha);
    rgba[4 * k + 1] = Math.round(rgba[4 * k + 1] * (1 - alpha) + g * alpha);
    rgba[4 * k + 2] = Math.round(rgba[4 * k + 2] * (1 - alpha) + b * alpha);
  }
}

export interface TailReadout {
  samplingP: number | null;
  directP: number | null;
}

/** Recompute both tails locally for the current threshold. */
export function recomputeTails(
  sampling: MethodResult | undefined,
  direct: MethodResult | undefined,
  tau: number,
): TailReadout {
  return {
    samplingP: sampling?.delta_samples ? empiricalTailP(sampling.delta_samples, tau) : null,
    directP: direct ? directTailP(direct.mu_delta, direct.sigma_delta, tau) : null,
  };
}

export function renderHistogram(
  canvas: HTMLCanvasElement,
  sampling: MethodResult | undefined,
  direct: MethodResult | undefined,
  tau: number,
): void {
  const ctx = canvas.getContext("2d")!;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#181818";
  ctx.fillRect(0, 0, width, height);
  if (!sampling?.histogram && !direct) return;

  let lo = Infinity;
  let hi = -Infinity;
  if (sampling?.histogram) {
    lo = Math.min(lo, sampling.histogram.bin_edges[0]);
    hi = Math.max(hi, sampling.histogram.bin_edges[sampling.histogram.bin_edges.length - 1]);
  }
  if (direct && direct.sigma_delta > 0) {
    lo = Math.min(lo, direct.mu_delta - 4 * direct.sigma_delta);
    hi = Math.max(hi, direct.mu_delta + 4 * direct.sigma_delta);
  }
  lo = Math.min(lo, tau - 1);
  hi = Math.max(hi, tau + 1);
  const span = hi - lo || 1;
  const toX = (v: number) => ((v - lo) / span) * width;

  let maxDensity = 0;
  if (sampling?.histogram) {
    const { bin_edges, counts } = sampling.histogram;
    const n = counts.reduce((a, b) => a + b, 0) || 1;
    for (let k = 0; k < counts.length; k++) {
      const density = counts[k] / (n * (bin_edges[k + 1] - bin_edges[k]));
      maxDensity = Math.max(maxDensity, density);
    }
  }
  if (direct && direct.sigma_delta > 0) {
    maxDensity = Math.max(maxDensity, normalPdf(direct.mu_delta, direct.mu_delta, direct.sigma_delta));
  }
  const toY = (d: number) => height - (d / (maxDensity || 1)) * (height - 14) - 4;

  if (sampling?.histogram) {
    const { bin_edges, counts } = sampling.histogram;
    const n = counts.reduce((a, b) => a + b, 0) || 1;
    ctx.fillStyle = "rgba(72, 120, 208, 0.75)";
    for (let k = 0; k < counts.length; k++) {
      const density = counts[k] / (n * (bin_edges[k + 1] - bin_edges[k]));
      const x0 = toX(bin_edges[k]);
      const x1 = toX(bin_edges[k + 1]);
      ctx.fillRect(x0, toY(density), Math.max(x1 - x0 - 1, 1), height - 4 - toY(density));
    }
  }
  if (direct && direct.sigma_delta > 0) {
    ctx.strokeStyle = "#d8b440";
    ctx.lineWidth = 2;
    ctx.beginPath();
    for (let px = 0; px <= width; px++) {
      const v = lo + (span * px) / width;
      const y = toY(normalPdf(v, direct.mu_delta, direct.sigma_delta));
      if (px === 0) ctx.moveTo(px, y);
      else ctx.lineTo(px, y);
    }
    ctx.stroke();
  }
  ctx.strokeStyle = "#e04040";
  ctx.setLineDash([5, 3]);
  ctx.beginPath();
  ctx.moveTo(toX(tau), 0);
  ctx.lineTo(toX(tau), height);
  ctx.stroke();
  ctx.setLineDash([]);
}
