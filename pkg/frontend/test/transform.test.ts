import { describe, expect, it } from "vitest";
import { MapTransform } from "../src/transform.js";

const GEOM = { originX: 0, originY: 0, resolution: 0.1, width: 100, height: 100 };

describe("map transform", () => {
  it("roundtrips canvas -> world -> canvas within 1 px everywhere", () => {
    const t = new MapTransform(GEOM, 900, 460);
    for (let px = 0; px <= 900; px += 7) {
      for (let py = 0; py <= 460; py += 7) {
        const [x, y] = t.canvasToWorld(px, py);
        const [bx, by] = t.worldToCanvas(x, y);
        expect(Math.abs(bx - px)).toBeLessThan(1.0);
        expect(Math.abs(by - py)).toBeLessThan(1.0);
      }
    }
  });

  it("roundtrips world -> canvas -> world within one cell", () => {
    const t = new MapTransform(GEOM, 640, 480);
    for (let x = 0; x <= 10; x += 0.37) {
      for (let y = 0; y <= 10; y += 0.37) {
        const [px, py] = t.worldToCanvas(x, y);
        const [bx, by] = t.canvasToWorld(px, py);
        expect(Math.abs(bx - x)).toBeLessThan(GEOM.resolution);
        expect(Math.abs(by - y)).toBeLessThan(GEOM.resolution);
      }
    }
  });

  it("flips y: world origin lands at the bottom of the map area", () => {
    const t = new MapTransform(GEOM, 500, 500);
    const [, pyLow] = t.worldToCanvas(0, 0);
    const [, pyHigh] = t.worldToCanvas(0, 10);
    expect(pyLow).toBeGreaterThan(pyHigh);
  });

  it("respects a non-zero map origin", () => {
    const t = new MapTransform({ ...GEOM, originX: -5, originY: -5 }, 400, 400);
    const [px, py] = t.worldToCanvas(-5, -5);
    const [x, y] = t.canvasToWorld(px, py);
    expect(x).toBeCloseTo(-5, 6);
    expect(y).toBeCloseTo(-5, 6);
  });

  it("letterboxes non-square canvases and reports inMap correctly", () => {
    const t = new MapTransform(GEOM, 1000, 500);
    expect(t.inMap(500, 250)).toBe(true);
    expect(t.inMap(10, 250)).toBe(false); // left letterbox margin
  });
});
