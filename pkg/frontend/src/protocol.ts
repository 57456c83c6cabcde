// Bridge websocket protocol (v1). The JSON frames here are the sole
// contract with the backend.

export interface HelloFrame {
  type: "hello";
  v: number;
}

export interface TopologyNode {
  name: string;
  publishers: [string, number][];
  subscribers: string[];
  services: string[];
}

export interface TopologyFrame {
  type: "topology";
  v: number;
  nodes: TopologyNode[];
}

export interface SampleFrame {
  type: "sample";
  channel: string;
  t_us: number;
  value: Record<string, unknown>;
}

export interface MapFrame {
  type: "map";
  t_us: number;
  width: number;
  height: number;
  resolution: number;
  origin: { x: number; y: number; theta: number };
  rle: [number, number][];
}

export interface PoseFrame {
  type: "pose";
  t_us: number;
  x: number;
  y: number;
  theta: number;
}

export interface PathFrame {
  type: "path";
  t_us: number;
  xs: number[];
  ys: number[];
}

export interface AckFrame {
  type: "ack";
  cmd: string;
  [key: string]: unknown;
}

export interface ErrorFrame {
  type: "error";
  reason: string;
  cmd?: string;
}

export type ServerFrame =
  | HelloFrame
  | TopologyFrame
  | SampleFrame
  | MapFrame
  | PoseFrame
  | PathFrame
  | AckFrame
  | ErrorFrame;

const FRAME_TYPES = new Set([
  "hello", "topology", "sample", "map", "pose", "path", "ack", "error",
]);

export function parseFrame(raw: string): ServerFrame | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const frame = data as { type?: unknown };
  if (typeof frame.type !== "string" || !FRAME_TYPES.has(frame.type)) return null;
  return data as ServerFrame;
}

export type ClientCommand =
  | { type: "subscribe"; channel: string }
  | { type: "unsubscribe"; channel: string }
  | { type: "teleop"; v: number; w: number }
  | { type: "set_goal"; x: number; y: number }
  | { type: "reset" };
