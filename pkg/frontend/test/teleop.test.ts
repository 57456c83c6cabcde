import { describe, expect, it } from "vitest";
import { TeleopKeys, V_STEP, W_STEP, V_MAX } from "../src/teleop.js";

function harness(startMs = 0) {
  const sent: { v: number; w: number }[] = [];
  let now = startMs;
  const keys = new TeleopKeys((cmd) => sent.push(cmd), () => now);
  return { sent, keys, advance: (ms: number) => (now += ms) };
}

describe("teleop keys", () => {
  it("steps v/w like the CLI teleop", () => {
    const { sent, keys, advance } = harness();
    keys.keyDown("w");
    expect(sent.at(-1)).toEqual({ v: V_STEP, w: 0 });
    advance(60);
    keys.keyDown("w"); // auto-repeat accumulates
    expect(sent.at(-1)).toEqual({ v: 2 * V_STEP, w: 0 });
    advance(60);
    keys.keyDown("ArrowLeft");
    expect(sent.at(-1)).toEqual({ v: 2 * V_STEP, w: W_STEP });
  });

  it("clamps to the limits", () => {
    const { sent, keys, advance } = harness();
    for (let i = 0; i < 50; i++) {
      keys.keyDown("w");
      advance(60);
    }
    expect(Math.max(...sent.map((c) => c.v))).toBe(V_MAX);
  });

  it("space zeroes immediately", () => {
    const { sent, keys, advance } = harness();
    keys.keyDown("w");
    advance(10);
    keys.keyDown(" ");
    expect(sent.at(-1)).toEqual({ v: 0, w: 0 });
  });

  it("key-up emits zero when the last key is released", () => {
    const { sent, keys, advance } = harness();
    keys.keyDown("w");
    advance(60);
    keys.keyDown("a");
    advance(5);
    keys.keyUp("w");
    expect(sent.at(-1)!.v).not.toBe(0); // "a" still held: no zero yet
    keys.keyUp("a");
    expect(sent.at(-1)).toEqual({ v: 0, w: 0 });
  });

  it("ignores unrelated keys", () => {
    const { sent, keys } = harness();
    expect(keys.keyDown("x")).toBe(false);
    expect(keys.keyUp("x")).toBe(false);
    expect(sent).toEqual([]);
  });

  it("rate limits held commands to 20 Hz", () => {
    const { sent, keys, advance } = harness();
    keys.keyDown("w");
    for (let i = 0; i < 100; i++) {
      advance(10); // tick every 10 ms for 1 s
      keys.tick();
    }
    // 1 s of holding at <= 20 Hz plus the initial emit
    expect(sent.length).toBeLessThanOrEqual(21);
    expect(sent.length).toBeGreaterThanOrEqual(18);
  });
});
