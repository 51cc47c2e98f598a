/** Client-side grayscale windowing: images arrive in scaled model units
 * (1 unit = 1000 HU) and the display window is quoted in HU, so window
 * changes re-render locally without re-fetching the raw tensor. */

export const HU_PER_UNIT = 1000;

export function windowToGray(
  values: Float32Array,
  loHu: number,
  hiHu: number,
): Uint8ClampedArray {
  if (!(hiHu > loHu)) {
    throw new Error(`window must have lo < hi, got [${loHu}, ${hiHu}]`);
  }
  const out = new Uint8ClampedArray(values.length);
  const scale = 255 / (hiHu - loHu);
  for (let i = 0; i < values.length; i++) {
    const hu = values[i] * HU_PER_UNIT;
    out[i] = Math.round(Math.min(Math.max((hu - loHu) * scale, 0), 255));
  }
  return out;
}

export function grayToRgba(gray: Uint8ClampedArray): Uint8ClampedArray {
  const rgba = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    rgba[4 * i] = rgba[4 * i + 1] = rgba[4 * i + 2] = gray[i];
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}
