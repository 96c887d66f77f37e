/** Canvas drawing: grid, bodies to scale, heading markers, LEDs, selection. */

import { Camera, worldToScreen } from "./camera.js";
import type { StateMessage } from "./protocol.js";

const LED_COLORS = ["#333", "#f33", "#3f3", "#39f", "#ff3", "#f3f", "#3ff"];

function gray(level: number): string {
  const v = Math.round(Math.min(Math.max(level, 0), 1) * 255);
  return `rgb(${v},${v},${v})`;
}

export function render(
  ctx: CanvasRenderingContext2D,
  state: StateMessage | null,
  cam: Camera,
  selection: string | null,
): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = "#181c20";
  ctx.fillRect(0, 0, width, height);
  drawGrid(ctx, cam);
  if (state === null) return;

  for (const body of state.bodies) {
    const [sx, sy] = worldToScreen(cam, width, height, body.x, body.y);
    ctx.save();
    ctx.translate(sx, sy);
    ctx.rotate(-body.theta); // canvas y is flipped
    ctx.fillStyle = gray(body.color);
    ctx.strokeStyle = body.node === selection ? "#ffb300" : "#555";
    ctx.lineWidth = body.node === selection ? 3 : 1;
    if (body.node === selection) ctx.setLineDash([6, 4]);
    const k = cam.pxPerMeter;
    const shape = body.shape;
    if (shape.kind === "circle") {
      const r = (shape.radius ?? 0) * k;
      ctx.beginPath();
      ctx.arc(0, 0, r, 0, Math.PI * 2);
      ctx.fill();
      ctx.stroke();
      if (!body.static) {
        ctx.strokeStyle = "#e33";
        ctx.setLineDash([]);
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(0, 0);
        ctx.lineTo(r, 0);
        ctx.stroke();
      }
    } else if (shape.kind === "rect") {
      const w = (shape.width ?? 0) * k;
      const h = (shape.height ?? 0) * k;
      ctx.fillRect(-w / 2, -h / 2, w, h);
      ctx.strokeRect(-w / 2, -h / 2, w, h);
    } else {
      ctx.beginPath();
      ctx.moveTo((shape.ax ?? 0) * k, -(shape.ay ?? 0) * k);
      ctx.lineTo((shape.bx ?? 0) * k, -(shape.by ?? 0) * k);
      ctx.lineWidth = Math.max(2, ctx.lineWidth);
      ctx.stroke();
    }
    ctx.restore();
  }

  // LED dots ride on their robot's body
  for (const led of state.leds) {
    const body = state.bodies.find((b) => b.node === led.robot);
    if (!body) continue;
    const [sx, sy] = worldToScreen(cam, width, height, body.x, body.y);
    ctx.beginPath();
    ctx.arc(sx + 10, sy - 10, 4, 0, Math.PI * 2);
    ctx.fillStyle = LED_COLORS[Math.min(led.state, LED_COLORS.length - 1)] ?? "#333";
    ctx.fill();
    ctx.strokeStyle = "#000";
    ctx.lineWidth = 1;
    ctx.stroke();
  }
}

function drawGrid(ctx: CanvasRenderingContext2D, cam: Camera): void {
  const { width, height } = ctx.canvas;
  const k = cam.pxPerMeter;
  let spacing = 1.0; // meters; widen when zoomed far out
  while (spacing * k < 40) spacing *= 5;
  while (spacing * k > 400) spacing /= 5;
  const x0 = cam.cx - width / 2 / k;
  const x1 = cam.cx + width / 2 / k;
  const y0 = cam.cy - height / 2 / k;
  const y1 = cam.cy + height / 2 / k;
  ctx.strokeStyle = "#262c33";
  ctx.lineWidth = 1;
  for (let x = Math.ceil(x0 / spacing) * spacing; x <= x1; x += spacing) {
    const [sx] = worldToScreen(cam, width, height, x, 0);
    ctx.beginPath();
    ctx.moveTo(sx, 0);
    ctx.lineTo(sx, height);
    ctx.stroke();
  }
  for (let y = Math.ceil(y0 / spacing) * spacing; y <= y1; y += spacing) {
    const [, sy] = worldToScreen(cam, width, height, 0, y);
    ctx.beginPath();
    ctx.moveTo(0, sy);
    ctx.lineTo(width, sy);
    ctx.stroke();
  }
  // axes
  ctx.strokeStyle = "#3a444f";
  const [ox, oy] = worldToScreen(cam, width, height, 0, 0);
  ctx.beginPath();
  ctx.moveTo(ox, 0);
  ctx.lineTo(ox, height);
  ctx.moveTo(0, oy);
  ctx.lineTo(width, oy);
  ctx.stroke();
}
