import { describe, expect, it } from "vitest";
import { parseFrame } from "../src/protocol.js";
import { DashboardStore, PlotBuffer, numericLeaves } from "../src/store.js";

function topology(names: string[]) {
  return {
    type: "topology" as const,
    v: 1,
    nodes: names.map((name) => ({
      name,
      publishers: [[`${name}/out`, 1]] as [string, number][],
      subscribers: [],
      services: [],
    })),
  };
}

describe("protocol parsing", () => {
  it("accepts known frames and rejects junk", () => {
    expect(parseFrame('{"type":"hello","v":1}')).toEqual({ type: "hello", v: 1 });
    expect(parseFrame("not json")).toBeNull();
    expect(parseFrame('{"no":"type"}')).toBeNull();
    expect(parseFrame('{"type":"mystery"}')).toBeNull();
    expect(parseFrame("42")).toBeNull();
  });
});

describe("numeric leaves", () => {
  it("flattens nested values with dotted paths", () => {
    const leaves = numericLeaves({ x: 1.5, nested: { theta: 0.2 }, name: "hi", ok: true });
    expect(leaves).toContainEqual(["x", 1.5]);
    expect(leaves).toContainEqual(["nested.theta", 0.2]);
    expect(leaves).toContainEqual(["ok", 1]);
    expect(leaves.find(([k]) => k === "name")).toBeUndefined();
  });

  it("indexes short arrays and skips long ones", () => {
    expect(numericLeaves({ a: [1, 2] })).toEqual([
      ["a[0]", 1],
      ["a[1]", 2],
    ]);
    expect(numericLeaves({ big: Array(100).fill(0) })).toEqual([]);
  });
});

describe("store", () => {
  it("marks nodes stale after two topology frames without them", () => {
    const store = new DashboardStore();
    store.apply(topology(["a", "b"]));
    expect(store.isStale("a")).toBe(false);
    store.apply(topology(["a"]));
    expect(store.isStale("b")).toBe(false); // one frame missed: still fresh
    store.apply(topology(["a"]));
    expect(store.isStale("b")).toBe(true); // greyed within 2 frames
    expect(store.isStale("a")).toBe(false);
  });

  it("buffers samples per channel and field", () => {
    const store = new DashboardStore();
    store.apply({
      type: "sample", channel: "slam/pose", t_us: 1_000_000,
      value: { x: 1.0, y: 2.0, theta: 0.1 },
    });
    store.apply({
      type: "sample", channel: "slam/pose", t_us: 2_000_000,
      value: { x: 1.5, y: 2.0, theta: 0.1 },
    });
    const buf = store.plots.get("slam/pose x")!;
    expect(buf.values).toEqual([1.0, 1.5]);
    expect([...store.sampleFields.get("slam/pose")!]).toContain("theta");
  });

  it("keeps latest map, pose and path; clear() resets the session", () => {
    const store = new DashboardStore();
    store.apply({ type: "pose", t_us: 1, x: 1, y: 2, theta: 0 });
    store.apply({ type: "path", t_us: 1, xs: [0, 1], ys: [0, 1] });
    expect(store.pose?.x).toBe(1);
    expect(store.path?.xs).toEqual([0, 1]);
    store.clear();
    expect(store.pose).toBeNull();
    expect(store.path).toBeNull();
  });

  it("notifies listeners on every applied frame", () => {
    const store = new DashboardStore();
    let calls = 0;
    const off = store.subscribe(() => calls++);
    store.apply({ type: "hello", v: 1 });
    store.apply(topology(["x"]));
    off();
    store.apply({ type: "hello", v: 1 });
    expect(calls).toBe(2);
  });
});

describe("plot buffer", () => {
  it("trims to the window", () => {
    const buf = new PlotBuffer(60);
    for (let i = 0; i < 200; i++) buf.push(i * 1_000_000, i);
    expect(buf.times[0]).toBeGreaterThanOrEqual(199 - 60);
    expect(buf.values[buf.values.length - 1]).toBe(199);
  });

  it("paused window excludes newer samples (buffering continues)", () => {
    const buf = new PlotBuffer(60);
    for (let i = 0; i <= 10; i++) buf.push(i * 1_000_000, i);
    const frozenEnd = 10;
    for (let i = 11; i <= 20; i++) buf.push(i * 1_000_000, i);
    const frozen = buf.visible(frozenEnd);
    expect(frozen.values[frozen.values.length - 1]).toBe(10);
    const live = buf.visible();
    expect(live.values[live.values.length - 1]).toBe(20); // kept buffering
  });

  it("csv matches the visible points exactly", () => {
    const buf = new PlotBuffer(60);
    buf.push(1_000_000, 0.5);
    buf.push(2_000_000, -1.25);
    expect(buf.toCsv()).toBe("t_s,value\n1,0.5\n2,-1.25\n");
  });
});
