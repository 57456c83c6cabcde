// Canvas <-> world coordinate mapping for the occupancy map view.
//
// World: meters, origin at the map frame's origin, y up.
// Canvas: pixels, origin top-left, y down. The grid is drawn to fill the
// canvas while preserving aspect (letterboxed with offsets).

export interface MapGeometry {
  originX: number;
  originY: number;
  resolution: number;
  width: number; // cells
  height: number; // cells
}

export class MapTransform {
  readonly scale: number; // px per meter
  readonly offsetX: number; // px letterbox
  readonly offsetY: number;
  readonly worldW: number;
  readonly worldH: number;

  constructor(readonly geom: MapGeometry, readonly canvasW: number, readonly canvasH: number) {
    this.worldW = geom.width * geom.resolution;
    this.worldH = geom.height * geom.resolution;
    this.scale = Math.min(canvasW / this.worldW, canvasH / this.worldH);
    this.offsetX = (canvasW - this.worldW * this.scale) / 2;
    this.offsetY = (canvasH - this.worldH * this.scale) / 2;
  }

  worldToCanvas(x: number, y: number): [number, number] {
    const px = this.offsetX + (x - this.geom.originX) * this.scale;
    const py = this.offsetY + (this.worldH - (y - this.geom.originY)) * this.scale;
    return [px, py];
  }

  canvasToWorld(px: number, py: number): [number, number] {
    const x = (px - this.offsetX) / this.scale + this.geom.originX;
    const y = this.worldH - (py - this.offsetY) / this.scale + this.geom.originY;
    return [x, y];
  }

  inMap(px: number, py: number): boolean {
    const [x, y] = this.canvasToWorld(px, py);
    return (
      x >= this.geom.originX &&
      x <= this.geom.originX + this.worldW &&
      y >= this.geom.originY &&
      y <= this.geom.originY + this.worldH
    );
  }
}
