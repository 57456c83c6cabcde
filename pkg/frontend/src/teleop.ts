// Keyboard teleoperation mirroring the CLI teleop semantics: WASD/arrow
// presses (incl. auto-repeat) step v by 0.1 m/s and w by 0.2 rad/s, space
// zeroes, and releasing the last movement key emits a zero command
// (dead-man analog). Commands are rate-limited to 20 Hz while held.

export const V_STEP = 0.1;
export const W_STEP = 0.2;
export const V_MAX = 1.0;
export const W_MAX = 2.0;
export const EMIT_INTERVAL_MS = 50; // <= 20 Hz

const KEY_ALIASES: Record<string, string> = {
  ArrowUp: "w",
  ArrowDown: "s",
  ArrowLeft: "a",
  ArrowRight: "d",
};

export interface TeleopCommand {
  v: number;
  w: number;
}

export class TeleopKeys {
  v = 0;
  w = 0;
  private held = new Set<string>();
  private lastEmit = -Infinity;
  private pendingZero = false;

  constructor(
    private readonly emit: (cmd: TeleopCommand) => void,
    private readonly now: () => number = () => performance.now(),
  ) {}

  private clamp(): void {
    this.v = Math.max(-V_MAX, Math.min(V_MAX, this.v));
    this.w = Math.max(-W_MAX, Math.min(W_MAX, this.w));
  }

  keyDown(key: string): boolean {
    const k = KEY_ALIASES[key] ?? key.toLowerCase();
    if (k === " ") {
      this.v = 0;
      this.w = 0;
      this.forceEmit();
      return true;
    }
    if (k === "w") this.v += V_STEP;
    else if (k === "s") this.v -= V_STEP;
    else if (k === "a") this.w += W_STEP;
    else if (k === "d") this.w -= W_STEP;
    else return false;
    this.held.add(k);
    this.clamp();
    this.maybeEmit();
    return true;
  }

  keyUp(key: string): boolean {
    const k = KEY_ALIASES[key] ?? key.toLowerCase();
    if (!this.held.delete(k)) return false;
    if (this.held.size === 0) {
      this.v = 0;
      this.w = 0;
      this.forceEmit(); // key-up emits zero immediately
    }
    return true;
  }

  /** Call on an interval to keep publishing the held command. */
  tick(): void {
    if (this.held.size > 0) this.maybeEmit();
  }

  private maybeEmit(): void {
    const t = this.now();
    if (t - this.lastEmit >= EMIT_INTERVAL_MS) {
      this.lastEmit = t;
      this.emit({ v: round3(this.v), w: round3(this.w) });
    }
  }

  private forceEmit(): void {
    this.lastEmit = this.now();
    this.emit({ v: round3(this.v), w: round3(this.w) });
  }
}

function round3(x: number): number {
  return Math.round(x * 1000) / 1000;
}
