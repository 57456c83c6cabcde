// Occupancy-map canvas: grey-ramp probability grid, robot pose triangle,
// planned path polyline, goal marker; clicks convert to world coordinates.

import { decodeRle } from "./rle.js";
import { MapTransform } from "./transform.js";
import type { DashboardStore } from "./store.js";

export class MapView {
  private transform: MapTransform | null = null;
  private gridImage: ImageData | null = null;
  private gridStamp = -1;
  goalMarker: [number, number] | null = null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly store: DashboardStore,
  ) {}

  currentTransform(): MapTransform | null {
    return this.transform;
  }

  /** Canvas pixel -> world meters, or null when outside the map. */
  clickToWorld(px: number, py: number): [number, number] | null {
    if (!this.transform || !this.transform.inMap(px, py)) return null;
    return this.transform.canvasToWorld(px, py);
  }

  private rebuildGrid(): void {
    const map = this.store.map;
    if (!map) return;
    if (map.t_us === this.gridStamp && this.gridImage) return;
    this.gridStamp = map.t_us;
    const cells = decodeRle(map.rle, map.width * map.height);
    const img = new ImageData(map.width, map.height);
    for (let i = 0; i < cells.length; i++) {
      // p=0 free -> white, p=1 occupied -> black; rows flipped (canvas y down)
      const row = Math.floor(i / map.width);
      const col = i % map.width;
      const j = (map.height - 1 - row) * map.width + col;
      const shade = 255 - cells[i];
      img.data[4 * j] = shade;
      img.data[4 * j + 1] = shade;
      img.data[4 * j + 2] = shade;
      img.data[4 * j + 3] = 255;
    }
    this.gridImage = img;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    const map = this.store.map;
    if (!map) {
      ctx.fillStyle = "#999999";
      ctx.font = "13px sans-serif";
      ctx.fillText("waiting for map frames...", 12, 22);
      this.transform = null;
      return;
    }
    this.transform = new MapTransform(
      {
        originX: map.origin.x,
        originY: map.origin.y,
        resolution: map.resolution,
        width: map.width,
        height: map.height,
      },
      w,
      h,
    );
    this.rebuildGrid();
    if (this.gridImage) {
      // draw the cell image scaled to the letterboxed map area
      const off = new OffscreenCanvas(map.width, map.height);
      const octx = off.getContext("2d");
      if (octx) {
        octx.putImageData(this.gridImage, 0, 0);
        ctx.imageSmoothingEnabled = false;
        const t = this.transform;
        ctx.drawImage(
          off,
          t.offsetX,
          t.offsetY,
          t.worldW * t.scale,
          t.worldH * t.scale,
        );
      }
    }
    const t = this.transform;

    const path = this.store.path;
    if (path && path.xs.length > 0) {
      ctx.strokeStyle = "#2d7dd2";
      ctx.lineWidth = 2;
      ctx.beginPath();
      path.xs.forEach((x, i) => {
        const [px, py] = t.worldToCanvas(x, path.ys[i]);
        if (i === 0) ctx.moveTo(px, py);
        else ctx.lineTo(px, py);
      });
      ctx.stroke();
    }

    if (this.goalMarker) {
      const [gx, gy] = t.worldToCanvas(this.goalMarker[0], this.goalMarker[1]);
      ctx.strokeStyle = "#d62828";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(gx, gy, 7, 0, 2 * Math.PI);
      ctx.moveTo(gx - 10, gy);
      ctx.lineTo(gx + 10, gy);
      ctx.moveTo(gx, gy - 10);
      ctx.lineTo(gx, gy + 10);
      ctx.stroke();
    }

    const pose = this.store.pose;
    if (pose) {
      const [px, py] = t.worldToCanvas(pose.x, pose.y);
      const r = 9;
      // theta is world-frame CCW; canvas y is flipped
      const a = -pose.theta;
      ctx.fillStyle = "#06a77d";
      ctx.beginPath();
      ctx.moveTo(px + r * Math.cos(a), py + r * Math.sin(a));
      ctx.lineTo(px + r * Math.cos(a + 2.5), py + r * Math.sin(a + 2.5));
      ctx.lineTo(px + r * Math.cos(a - 2.5), py + r * Math.sin(a - 2.5));
      ctx.closePath();
      ctx.fill();
    }
  }
}
