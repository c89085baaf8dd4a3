// Parser for the service's OBJ meshes ("v x y z [r g b]" plus "f i j k").

export interface ParsedMesh {
  positions: Float32Array; // xyz per vertex
  colors: Float32Array | null; // rgb per vertex when the file carries them
  indices: Uint32Array; // triangle corners, 0-based
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const colors: number[] = [];
  const indices: number[] = [];
  let sawColor = false;
  const lines = text.split("\n");
  for (let lineNo = 0; lineNo < lines.length; lineNo++) {
    const line = lines[lineNo].trim();
    if (!line || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length !== 4 && parts.length !== 7) {
        throw new Error(`line ${lineNo + 1}: vertex needs 3 or 6 numbers`);
      }
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
      if (parts.length === 7) {
        sawColor = true;
        colors.push(Number(parts[4]), Number(parts[5]), Number(parts[6]));
      } else {
        colors.push(0.8, 0.8, 0.8);
      }
    } else if (parts[0] === "f") {
      if (parts.length !== 4) throw new Error(`line ${lineNo + 1}: only triangles supported`);
      for (const token of parts.slice(1)) {
        const idx = Number(token.split("/")[0]);
        if (!Number.isInteger(idx) || idx < 1) throw new Error(`line ${lineNo + 1}: bad face index ${token}`);
        indices.push(idx - 1);
      }
    }
  }
  if (positions.length === 0 || indices.length === 0) throw new Error("OBJ contains no mesh");
  const vertexCount = positions.length / 3;
  for (const idx of indices) {
    if (idx >= vertexCount) throw new Error(`face index ${idx + 1} out of range`);
  }
  return {
    positions: new Float32Array(positions),
    colors: sawColor ? new Float32Array(colors) : null,
    indices: new Uint32Array(indices),
  };
}

/** Vertex multiset fingerprint, order-independent (for comparing meshes). */
export function vertexFingerprint(mesh: ParsedMesh, decimals = 6): string {
  const rows: string[] = [];
  for (let i = 0; i < mesh.positions.length; i += 3) {
    rows.push(
      [mesh.positions[i], mesh.positions[i + 1], mesh.positions[i + 2]].map((v) => v.toFixed(decimals)).join(","),
    );
  }
  rows.sort();
  return rows.join(";");
}
