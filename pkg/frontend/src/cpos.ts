/** Decoder for the service's binary positions stream:
 *  magic "CPOS", u32 vertex count, then little-endian float32 xyz triples. */
export function parseCpos(buffer: ArrayBuffer): Float32Array {
  const view = new DataView(buffer);
  if (buffer.byteLength < 8) {
    throw new Error("positions stream too short");
  }
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3));
  if (magic !== "CPOS") {
    throw new Error(`bad positions magic: ${magic}`);
  }
  const count = view.getUint32(4, true);
  const expected = 8 + 12 * count;
  if (buffer.byteLength !== expected) {
    throw new Error(`positions stream length ${buffer.byteLength}, expected ${expected}`);
  }
  const out = new Float32Array(count * 3);
  for (let i = 0; i < count * 3; i++) {
    out[i] = view.getFloat32(8 + 4 * i, true);
  }
  return out;
}
