/** Parser for the raw tensor wire format served by the run API.
 *
 * Layout: 8-byte magic "BINV0001" | uint32 LE rank | rank x uint64 LE dims |
 * row-major float32 LE payload.
 */

export interface Tensor {
  shape: number[];
  data: Float32Array;
}

const MAGIC = "BINV0001";

export function parseTensor(buf: ArrayBuffer): Tensor {
  const view = new DataView(buf);
  if (buf.byteLength < 12) {
    throw new Error(`tensor too short: ${buf.byteLength} bytes`);
  }
  let magic = "";
  for (let i = 0; i < 8; i++) {
    magic += String.fromCharCode(view.getUint8(i));
  }
  if (magic !== MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)} at offset 0`);
  }
  const rank = view.getUint32(8, true);
  if (rank === 0) {
    throw new Error("rank 0 not allowed (offset 8)");
  }
  const dimsEnd = 12 + 8 * rank;
  if (buf.byteLength < dimsEnd) {
    throw new Error("truncated dims (offset 12)");
  }
  const shape: number[] = [];
  let count = 1;
  for (let i = 0; i < rank; i++) {
    const lo = view.getUint32(12 + 8 * i, true);
    const hi = view.getUint32(12 + 8 * i + 4, true);
    const dim = hi * 2 ** 32 + lo;
    shape.push(dim);
    count *= dim;
  }
  const expected = dimsEnd + 4 * count;
  if (buf.byteLength !== expected) {
    throw new Error(
      `payload size mismatch: have ${buf.byteLength}, expected ${expected}`,
    );
  }
  return { shape, data: new Float32Array(buf.slice(dimsEnd)) };
}
