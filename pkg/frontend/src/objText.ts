/** Minimal OBJ reader for the viewport: positions + fan-triangulated faces.
 *  The server is the authority on validation; this only feeds the renderer. */
export interface ObjGeometry {
  positions: Float32Array;   // 3 * nv
  triangles: Uint32Array;    // 3 * nf vertex indices
}

export function parseObjGeometry(text: string): ObjGeometry {
  const positions: number[] = [];
  const triangles: number[] = [];
  for (const rawLine of text.split("\n")) {
    const line = rawLine.trim();
    if (line.startsWith("v ")) {
      const parts = line.split(/\s+/);
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (line.startsWith("f ")) {
      const corners = line
        .split(/\s+/)
        .slice(1)
        .map((tok) => {
          const v = Number(tok.split("/")[0]);
          return v < 0 ? positions.length / 3 + v : v - 1;
        });
      for (let i = 1; i + 1 < corners.length; i++) {
        triangles.push(corners[0], corners[i], corners[i + 1]);
      }
    }
  }
  if (positions.length === 0 || triangles.length === 0) {
    throw new Error("OBJ has no geometry");
  }
  return {
    positions: new Float32Array(positions),
    triangles: new Uint32Array(triangles),
  };
}

/** Axis-aligned bounding-box diagonal of a flat xyz array. */
export function bboxDiagonal(positions: Float32Array): number {
  const lo = [Infinity, Infinity, Infinity];
  const hi = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < positions.length; i += 3) {
    for (let c = 0; c < 3; c++) {
      const v = positions[i + c];
      if (v < lo[c]) lo[c] = v;
      if (v > hi[c]) hi[c] = v;
    }
  }
  return Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
}
