// Live node-graph: nodes as boxes on an outer ring, channels as ellipses on
// an inner ring, publish edges node->channel and subscribe edges
// channel->node. Stale nodes grey out.

import type { DashboardStore } from "./store.js";

interface Placed {
  x: number;
  y: number;
  label: string;
  kind: "node" | "channel";
  stale?: boolean;
}

export function layoutGraph(store: DashboardStore, w: number, h: number): {
  vertices: Placed[];
  edges: [number, number, "pub" | "sub"][];
} {
  const names = [...store.nodes.keys()].sort();
  const channels = new Set<string>();
  for (const node of store.nodes.values()) {
    for (const [channel] of node.publishers) channels.add(channel);
    for (const filter of node.subscribers) channels.add(filter);
  }
  const channelList = [...channels].sort();

  const cx = w / 2;
  const cy = h / 2;
  const rOuter = Math.min(w, h) * 0.42;
  const rInner = Math.min(w, h) * 0.22;
  const vertices: Placed[] = [];
  const index = new Map<string, number>();

  names.forEach((name, i) => {
    const a = (2 * Math.PI * i) / Math.max(names.length, 1) - Math.PI / 2;
    index.set(`n:${name}`, vertices.length);
    vertices.push({
      x: cx + rOuter * Math.cos(a),
      y: cy + rOuter * Math.sin(a),
      label: name,
      kind: "node",
      stale: store.isStale(name),
    });
  });
  channelList.forEach((channel, i) => {
    const a = (2 * Math.PI * i) / Math.max(channelList.length, 1) - Math.PI / 2 + 0.3;
    index.set(`c:${channel}`, vertices.length);
    vertices.push({
      x: cx + rInner * Math.cos(a),
      y: cy + rInner * Math.sin(a),
      label: channel,
      kind: "channel",
    });
  });

  const edges: [number, number, "pub" | "sub"][] = [];
  for (const node of [...store.nodes.values()].sort((a, b) => a.name.localeCompare(b.name))) {
    const ni = index.get(`n:${node.name}`)!;
    for (const [channel] of node.publishers) {
      edges.push([ni, index.get(`c:${channel}`)!, "pub"]);
    }
    for (const filter of node.subscribers) {
      edges.push([index.get(`c:${filter}`)!, ni, "sub"]);
    }
  }
  return { vertices, edges };
}

export class GraphView {
  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly store: DashboardStore,
  ) {}

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    const { vertices, edges } = layoutGraph(this.store, w, h);

    ctx.lineWidth = 1;
    for (const [from, to, kind] of edges) {
      const a = vertices[from];
      const b = vertices[to];
      ctx.strokeStyle = kind === "pub" ? "#2d7dd2" : "#8a8a8a";
      ctx.beginPath();
      ctx.moveTo(a.x, a.y);
      ctx.lineTo(b.x, b.y);
      ctx.stroke();
      // arrowhead
      const angle = Math.atan2(b.y - a.y, b.x - a.x);
      ctx.beginPath();
      ctx.moveTo(b.x, b.y);
      ctx.lineTo(b.x - 8 * Math.cos(angle - 0.4), b.y - 8 * Math.sin(angle - 0.4));
      ctx.lineTo(b.x - 8 * Math.cos(angle + 0.4), b.y - 8 * Math.sin(angle + 0.4));
      ctx.fill();
    }

    ctx.font = "12px sans-serif";
    ctx.textAlign = "center";
    for (const v of vertices) {
      if (v.kind === "node") {
        ctx.fillStyle = v.stale ? "#cccccc" : "#ffd166";
        ctx.strokeStyle = v.stale ? "#aaaaaa" : "#333333";
        const bw = Math.max(60, v.label.length * 8);
        ctx.fillRect(v.x - bw / 2, v.y - 14, bw, 28);
        ctx.strokeRect(v.x - bw / 2, v.y - 14, bw, 28);
        ctx.fillStyle = v.stale ? "#888888" : "#222222";
        ctx.fillText(v.label, v.x, v.y + 4);
      } else {
        ctx.fillStyle = "#e8f0fe";
        ctx.strokeStyle = "#2d7dd2";
        ctx.beginPath();
        ctx.ellipse(v.x, v.y, Math.max(40, v.label.length * 4), 12, 0, 0, 2 * Math.PI);
        ctx.fill();
        ctx.stroke();
        ctx.fillStyle = "#1a4a7a";
        ctx.fillText(v.label, v.x, v.y + 4);
      }
    }
  }
}
