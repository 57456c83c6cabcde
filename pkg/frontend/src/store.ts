// Session state fed by bridge frames. Stateless beyond the session: a
// refresh rebuilds everything from the next snapshot.

import type {
  MapFrame,
  PathFrame,
  PoseFrame,
  SampleFrame,
  ServerFrame,
  TopologyFrame,
  TopologyNode,
} from "./protocol.js";

export interface NodeView extends TopologyNode {
  lastSeenFrame: number;
}

export type Listener = () => void;

export class PlotBuffer {
  times: number[] = []; // seconds (t_us / 1e6)
  values: number[] = [];

  constructor(readonly windowS: number = 60) {}

  push(tUs: number, value: number): void {
    const t = tUs / 1e6;
    this.times.push(t);
    this.values.push(value);
    const cutoff = t - this.windowS;
    let drop = 0;
    while (drop < this.times.length && this.times[drop] < cutoff) drop++;
    if (drop > 0) {
      this.times.splice(0, drop);
      this.values.splice(0, drop);
    }
  }

  /** Points visible in a window ending at endS (defaults to the newest). */
  visible(endS?: number): { times: number[]; values: number[] } {
    const end = endS ?? this.times[this.times.length - 1] ?? 0;
    const start = end - this.windowS;
    const times: number[] = [];
    const values: number[] = [];
    for (let i = 0; i < this.times.length; i++) {
      if (this.times[i] >= start && this.times[i] <= end) {
        times.push(this.times[i]);
        values.push(this.values[i]);
      }
    }
    return { times, values };
  }

  toCsv(endS?: number): string {
    const { times, values } = this.visible(endS);
    const lines = ["t_s,value"];
    for (let i = 0; i < times.length; i++) lines.push(`${times[i]},${values[i]}`);
    return lines.join("\n") + "\n";
  }
}

export function numericLeaves(value: unknown, prefix = ""): [string, number][] {
  const out: [string, number][] = [];
  if (typeof value === "number") {
    out.push([prefix, value]);
  } else if (typeof value === "boolean") {
    out.push([prefix, value ? 1 : 0]);
  } else if (Array.isArray(value)) {
    // arrays are plottable element-wise only for short ones
    if (value.length <= 8) {
      value.forEach((v, i) => out.push(...numericLeaves(v, `${prefix}[${i}]`)));
    }
  } else if (typeof value === "object" && value !== null) {
    for (const [k, v] of Object.entries(value)) {
      out.push(...numericLeaves(v, prefix ? `${prefix}.${k}` : k));
    }
  }
  return out;
}

export class DashboardStore {
  topologyFrameCount = 0;
  nodes = new Map<string, NodeView>();
  map: MapFrame | null = null;
  pose: PoseFrame | null = null;
  path: PathFrame | null = null;
  lastError: { reason: string; cmd?: string } | null = null;
  lastAck: Record<string, unknown> | null = null;
  plots = new Map<string, PlotBuffer>(); // "channel field" -> buffer
  sampleFields = new Map<string, Set<string>>(); // channel -> seen numeric fields

  private listeners = new Set<Listener>();

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l();
  }

  /** Nodes absent from the last two topology frames count as stale. */
  isStale(name: string): boolean {
    const node = this.nodes.get(name);
    if (!node) return true;
    return this.topologyFrameCount - node.lastSeenFrame >= 2;
  }

  clear(): void {
    this.topologyFrameCount = 0;
    this.nodes.clear();
    this.map = null;
    this.pose = null;
    this.path = null;
    this.lastError = null;
    this.emit();
  }

  apply(frame: ServerFrame): void {
    switch (frame.type) {
      case "hello":
        break;
      case "topology":
        this.applyTopology(frame);
        break;
      case "sample":
        this.applySample(frame);
        break;
      case "map":
        this.map = frame;
        break;
      case "pose":
        this.pose = frame;
        break;
      case "path":
        this.path = frame;
        break;
      case "ack":
        this.lastAck = frame;
        break;
      case "error":
        this.lastError = { reason: frame.reason, cmd: frame.cmd };
        break;
    }
    this.emit();
  }

  private applyTopology(frame: TopologyFrame): void {
    this.topologyFrameCount++;
    for (const node of frame.nodes) {
      this.nodes.set(node.name, { ...node, lastSeenFrame: this.topologyFrameCount });
    }
  }

  private applySample(frame: SampleFrame): void {
    const fields = this.sampleFields.get(frame.channel) ?? new Set<string>();
    for (const [field, value] of numericLeaves(frame.value)) {
      fields.add(field);
      const key = `${frame.channel} ${field}`;
      let buf = this.plots.get(key);
      if (!buf) {
        buf = new PlotBuffer();
        this.plots.set(key, buf);
      }
      buf.push(frame.t_us, value);
    }
    this.sampleFields.set(frame.channel, fields);
  }
}
