import { describe, expect, it } from "vitest";
import { bboxDiagonal, parseObjGeometry } from "../src/objText.js";

describe("parseObjGeometry", () => {
  it("reads vertices and triangles", () => {
    const geom = parseObjGeometry("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    expect(geom.positions.length).toBe(9);
    expect(Array.from(geom.triangles)).toEqual([0, 1, 2]);
  });

  it("fan-triangulates polygons and handles v/vt/vn corners", () => {
    const geom = parseObjGeometry(
      "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n");
    expect(Array.from(geom.triangles)).toEqual([0, 1, 2, 0, 2, 3]);
  });

  it("throws on empty geometry", () => {
    expect(() => parseObjGeometry("# nothing\n")).toThrow();
  });

  it("bbox diagonal", () => {
    const geom = parseObjGeometry("v 0 0 0\nv 1 2 2\nv 0 1 0\nf 1 2 3\n");
    expect(bboxDiagonal(geom.positions)).toBeCloseTo(3.0, 10);
  });
});
