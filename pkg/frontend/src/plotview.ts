// Scrolling time-series of one numeric field over a 60 s window with
// pause/resume; pausing freezes the view while samples keep buffering.

import type { DashboardStore, PlotBuffer } from "./store.js";

export class PlotView {
  key: string | null = null; // "channel field"
  paused = false;
  private pausedAt: number | null = null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly store: DashboardStore,
  ) {}

  select(key: string | null): void {
    this.key = key;
    this.paused = false;
    this.pausedAt = null;
  }

  togglePause(): boolean {
    this.paused = !this.paused;
    if (this.paused) {
      const buf = this.buffer();
      this.pausedAt = buf ? buf.times[buf.times.length - 1] ?? null : null;
    } else {
      this.pausedAt = null;
    }
    return this.paused;
  }

  buffer(): PlotBuffer | null {
    return this.key ? this.store.plots.get(this.key) ?? null : null;
  }

  /** CSV of exactly the visible window (frozen when paused). */
  downloadCsv(): string | null {
    const buf = this.buffer();
    if (!buf) return null;
    return buf.toCsv(this.pausedAt ?? undefined);
  }

  windowEnd(): number | undefined {
    return this.pausedAt ?? undefined;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#dddddd";
    ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
    const buf = this.buffer();
    if (!buf || buf.times.length === 0) {
      ctx.fillStyle = "#999999";
      ctx.font = "13px sans-serif";
      ctx.fillText(this.key ? "waiting for samples..." : "select a channel field", 12, 22);
      return;
    }
    const { times, values } = buf.visible(this.windowEnd());
    if (times.length === 0) return;
    const tEnd = times[times.length - 1];
    const tStart = tEnd - buf.windowS;
    let lo = Math.min(...values);
    let hi = Math.max(...values);
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    const px = (t: number) => ((t - tStart) / buf.windowS) * (w - 50) + 45;
    const py = (v: number) => h - 18 - ((v - lo) / (hi - lo)) * (h - 36);

    ctx.strokeStyle = "#2d7dd2";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    times.forEach((t, i) => {
      if (i === 0) ctx.moveTo(px(t), py(values[i]));
      else ctx.lineTo(px(t), py(values[i]));
    });
    ctx.stroke();

    ctx.fillStyle = "#555555";
    ctx.font = "11px sans-serif";
    ctx.textAlign = "left";
    ctx.fillText(hi.toPrecision(4), 4, 14);
    ctx.fillText(lo.toPrecision(4), 4, h - 6);
    ctx.textAlign = "right";
    ctx.fillText(`${this.key}${this.paused ? "  [paused]" : ""}`, w - 8, 14);
  }
}
