import { describe, expect, it } from "vitest";

import { makeCamera } from "../src/camera.js";
import type { StateMessage } from "../src/protocol.js";
import { render } from "../src/render.js";

/** Minimal recording stand-in for CanvasRenderingContext2D. */
function fakeContext(width = 400, height = 300) {
  const calls: { op: string; args: unknown[] }[] = [];
  const record = (op: string) => (...args: unknown[]) => {
    calls.push({ op, args });
  };
  const ctx = {
    canvas: { width, height },
    fillStyle: "",
    strokeStyle: "",
    lineWidth: 1,
    fillRect: record("fillRect"),
    strokeRect: record("strokeRect"),
    beginPath: record("beginPath"),
    moveTo: record("moveTo"),
    lineTo: record("lineTo"),
    arc: record("arc"),
    fill: record("fill"),
    stroke: record("stroke"),
    save: record("save"),
    restore: record("restore"),
    translate: record("translate"),
    rotate: record("rotate"),
    setLineDash: record("setLineDash"),
  };
  return { ctx: ctx as unknown as CanvasRenderingContext2D, calls };
}

function state(bodies: StateMessage["bodies"], leds: StateMessage["leds"] = []): StateMessage {
  return { op: "state", t_ms: 32, bodies, devices: [], leds };
}

const ROBOT = {
  node: "BOT", x: 0, y: 0, theta: 0.5, color: 0.3, static: false,
  shape: { kind: "circle" as const, radius: 0.1 },
};
const WALL = {
  node: "WALL", x: 1, y: 0, theta: 0, color: 0.8, static: true,
  shape: { kind: "rect" as const, width: 0.2, height: 1 },
};

describe("render", () => {
  it("draws the grid even with no state", () => {
    const { ctx, calls } = fakeContext();
    render(ctx, null, makeCamera(), null);
    expect(calls.filter((c) => c.op === "fillRect").length).toBe(1); // background
    expect(calls.filter((c) => c.op === "stroke").length).toBeGreaterThan(2); // grid lines
  });

  it("draws circles with heading markers and rects", () => {
    const { ctx, calls } = fakeContext();
    render(ctx, state([ROBOT, WALL]), makeCamera(), null);
    const arcs = calls.filter((c) => c.op === "arc");
    expect(arcs.length).toBe(1);
    expect(arcs[0].args[2]).toBeCloseTo(0.1 * 120); // radius in px at default zoom
    // one rect body -> one filled rect besides the background
    expect(calls.filter((c) => c.op === "strokeRect").length).toBe(1);
    // dynamic circle gets a heading line; rotation applied
    expect(calls.some((c) => c.op === "rotate" && (c.args[0] as number) === -0.5)).toBe(true);
    expect(calls.filter((c) => c.op === "lineTo").length).toBeGreaterThan(0);
  });

  it("marks the selected body with a dash pattern", () => {
    const { ctx, calls } = fakeContext();
    render(ctx, state([ROBOT, WALL]), makeCamera(), "WALL");
    expect(calls.some((c) => c.op === "setLineDash" &&
      JSON.stringify(c.args[0]) === "[6,4]")).toBe(true);
  });

  it("draws LED dots on their robot", () => {
    const { ctx, calls } = fakeContext();
    render(ctx, state([ROBOT], [{ robot: "BOT", name: "lamp", state: 1 }]),
      makeCamera(), null);
    expect(calls.filter((c) => c.op === "arc").length).toBe(2); // body + LED dot
  });

  it("draws segments as lines", () => {
    const { ctx, calls } = fakeContext();
    const seg = {
      node: "S", x: 0, y: 0, theta: 0, color: 0.5, static: true,
      shape: { kind: "segment" as const, ax: -1, ay: 0, bx: 1, by: 0 },
    };
    render(ctx, state([seg]), makeCamera(), null);
    const moves = calls.filter((c) => c.op === "moveTo");
    expect(moves.length).toBeGreaterThan(0);
  });
});
