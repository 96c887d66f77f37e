/**
 * View state: the latest complete state broadcast plus UI concerns
 * (selection, connection status, measured speed factor). Rendering only
 * ever sees whole snapshots; a broadcast replaces the previous one
 * atomically.
 */

import type { BodyState, ConnectionStatus, StateMessage } from "./protocol.js";

export class ViewState {
  state: StateMessage | null = null;
  selection: string | null = null;
  status: ConnectionStatus = "disconnected";
  statusDetail = "";
  basicStepMs = 0;
  lastError = "";

  private samples: { wall: number; t: number }[] = [];

  applyState(message: StateMessage, wallNowMs: number): void {
    this.state = message;
    this.samples.push({ wall: wallNowMs, t: message.t_ms });
    if (this.samples.length > 60) this.samples.shift();
  }

  /** Virtual/wall speed over the recent broadcast window; 0 when unknown. */
  speedFactor(): number {
    if (this.samples.length < 2) return 0;
    const first = this.samples[0];
    const last = this.samples[this.samples.length - 1];
    const wall = last.wall - first.wall;
    if (wall <= 0) return 0;
    return (last.t - first.t) / wall;
  }

  paused(): boolean {
    return this.state?.paused ?? false;
  }

  body(node: string): BodyState | undefined {
    return this.state?.bodies.find((b) => b.node === node);
  }
}

/** Topmost body whose shape contains the world point (last drawn wins). */
export function pickBody(bodies: BodyState[], wx: number, wy: number): BodyState | null {
  for (let i = bodies.length - 1; i >= 0; i--) {
    if (bodyContains(bodies[i], wx, wy)) return bodies[i];
  }
  return null;
}

export function bodyContains(body: BodyState, wx: number, wy: number): boolean {
  const dx = wx - body.x;
  const dy = wy - body.y;
  const c = Math.cos(-body.theta);
  const s = Math.sin(-body.theta);
  const lx = c * dx - s * dy;
  const ly = s * dx + c * dy;
  const shape = body.shape;
  if (shape.kind === "circle") {
    return lx * lx + ly * ly <= (shape.radius ?? 0) ** 2;
  }
  if (shape.kind === "rect") {
    return Math.abs(lx) <= (shape.width ?? 0) / 2 && Math.abs(ly) <= (shape.height ?? 0) / 2;
  }
  // segment: within a small grab distance of the line
  const ax = shape.ax ?? 0, ay = shape.ay ?? 0, bx = shape.bx ?? 0, by = shape.by ?? 0;
  const ex = bx - ax, ey = by - ay;
  const len2 = ex * ex + ey * ey;
  const t = len2 > 0 ? Math.min(Math.max(((lx - ax) * ex + (ly - ay) * ey) / len2, 0), 1) : 0;
  const px = ax + t * ex, py = ay + t * ey;
  return Math.hypot(lx - px, ly - py) <= 0.05;
}
