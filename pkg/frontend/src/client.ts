// Websocket client for the bridge: dispatches frames, reconnects with
// capped backoff, resubscribes channels after a reconnect.

import type { ClientCommand, ServerFrame } from "./protocol.js";
import { parseFrame } from "./protocol.js";

export type Status = "connecting" | "open" | "closed";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
  readyState: number;
}

export type WsFactory = (url: string) => WebSocketLike;

export interface ClientOptions {
  wsFactory?: WsFactory;
  backoffMs?: number;
  backoffCapMs?: number;
  setTimeoutFn?: (fn: () => void, ms: number) => unknown;
}

export class BridgeClient {
  status: Status = "closed";
  private ws: WebSocketLike | null = null;
  private closed = false;
  private backoff: number;
  private readonly backoff0: number;
  private readonly cap: number;
  private readonly factory: WsFactory;
  private readonly later: (fn: () => void, ms: number) => unknown;
  private subscriptions = new Set<string>();
  private frameHandlers = new Set<(f: ServerFrame) => void>();
  private statusHandlers = new Set<(s: Status) => void>();

  constructor(readonly url: string, options: ClientOptions = {}) {
    this.factory = options.wsFactory ?? ((u) => new WebSocket(u) as unknown as WebSocketLike);
    this.backoff0 = options.backoffMs ?? 500;
    this.cap = options.backoffCapMs ?? 10_000;
    this.backoff = this.backoff0;
    this.later = options.setTimeoutFn ?? ((fn, ms) => setTimeout(fn, ms));
  }

  onFrame(handler: (f: ServerFrame) => void): () => void {
    this.frameHandlers.add(handler);
    return () => this.frameHandlers.delete(handler);
  }

  onStatus(handler: (s: Status) => void): () => void {
    this.statusHandlers.add(handler);
    return () => this.statusHandlers.delete(handler);
  }

  private setStatus(s: Status): void {
    this.status = s;
    for (const h of this.statusHandlers) h(s);
  }

  connect(): void {
    if (this.closed) return;
    this.setStatus("connecting");
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoff = this.backoff0;
      this.setStatus("open");
      for (const channel of this.subscriptions) {
        ws.send(JSON.stringify({ type: "subscribe", channel }));
      }
    };
    ws.onmessage = (ev) => {
      const frame = parseFrame(String(ev.data));
      if (frame === null) return;
      for (const h of this.frameHandlers) h(frame);
    };
    ws.onerror = () => {
      // onclose handles scheduling
    };
    ws.onclose = () => {
      this.setStatus("closed");
      if (!this.closed) {
        this.later(() => this.connect(), this.backoff);
        this.backoff = Math.min(this.backoff * 2, this.cap);
      }
    };
  }

  send(cmd: ClientCommand): boolean {
    if (cmd.type === "subscribe") this.subscriptions.add(cmd.channel);
    if (cmd.type === "unsubscribe") this.subscriptions.delete(cmd.channel);
    if (this.ws === null || this.status !== "open") return false;
    this.ws.send(JSON.stringify(cmd));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
