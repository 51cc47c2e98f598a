import { describe, expect, it } from "vitest";
import { parseTensor } from "../src/binv.js";

function buildTensor(shape: number[], values: number[]): ArrayBuffer {
  const rank = shape.length;
  const buf = new ArrayBuffer(12 + 8 * rank + 4 * values.length);
  const view = new DataView(buf);
  const magic = "BINV0001";
  for (let i = 0; i < 8; i++) view.setUint8(i, magic.charCodeAt(i));
  view.setUint32(8, rank, true);
  shape.forEach((d, i) => {
    view.setUint32(12 + 8 * i, d, true);
    view.setUint32(12 + 8 * i + 4, 0, true);
  });
  values.forEach((v, i) => view.setFloat32(12 + 8 * rank + 4 * i, v, true));
  return buf;
}

describe("tensor parser", () => {
  it("parses a 2x2 tensor", () => {
    const t = parseTensor(buildTensor([2, 2], [1, 2, 3, 4]));
    expect(t.shape).toEqual([2, 2]);
    expect(Array.from(t.data)).toEqual([1, 2, 3, 4]);
  });

  it("rejects bad magic", () => {
    const buf = buildTensor([1], [0]);
    new DataView(buf).setUint8(0, "X".charCodeAt(0));
    expect(() => parseTensor(buf)).toThrow(/bad magic/);
  });

  it("rejects truncated payload naming the expected size", () => {
    const buf = buildTensor([2, 2], [1, 2, 3, 4]);
    expect(() => parseTensor(buf.slice(0, 43))).toThrow(/expected 44/);
  });

  it("rejects rank zero", () => {
    const buf = buildTensor([1], [0]);
    new DataView(buf).setUint32(8, 0, true);
    expect(() => parseTensor(buf)).toThrow(/rank 0/);
  });
});
