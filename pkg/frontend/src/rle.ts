// Map frames carry the occupancy grid as run-length encoded u8 (0..255)
// probabilities over row-major cells.

export function decodeRle(pairs: [number, number][], expected: number): Uint8Array {
  const out = new Uint8Array(expected);
  let at = 0;
  for (const [value, count] of pairs) {
    if (count < 0 || at + count > expected) {
      throw new Error(`rle overruns grid: ${at + count} > ${expected}`);
    }
    out.fill(value, at, at + count);
    at += count;
  }
  if (at !== expected) {
    throw new Error(`rle underfills grid: ${at} < ${expected}`);
  }
  return out;
}
