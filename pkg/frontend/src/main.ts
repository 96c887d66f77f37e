/** Viewer entry point: wires the session, view state, canvas, and controls. */

import { makeCamera } from "./camera.js";
import { Interaction } from "./interact.js";
import { ViewState } from "./model.js";
import { WireSession, webSocketTransport } from "./protocol.js";
import { render } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

const canvas = el<HTMLCanvasElement>("world");
const ctx = canvas.getContext("2d")!;
const statusEl = el<HTMLSpanElement>("status");
const clockEl = el<HTMLSpanElement>("clock");
const speedEl = el<HTMLSpanElement>("speed");
const errorEl = el<HTMLSpanElement>("lasterror");
const devicesEl = el<HTMLTableSectionElement>("devices");
const observerToggle = el<HTMLInputElement>("observer-mode");

const params = new URLSearchParams(location.search);
const defaultUrl = `ws://${location.host || "127.0.0.1:8099"}/ws`;
const url = params.get("server") ?? defaultUrl;

const view = new ViewState();
let session = makeSession(observerToggle.checked);
let interact = new Interaction(view, session, makeCamera(), () => [
  canvas.width,
  canvas.height,
]);

function makeSession(readOnly: boolean): WireSession {
  const s = new WireSession(webSocketTransport(url), {
    role: readOnly ? "observer" : "supervisor",
  });
  s.onStatus = (status, detail) => {
    view.status = status;
    view.statusDetail = detail;
    statusEl.textContent = detail ? `${status} (${detail})` : status;
    statusEl.className = `pill ${status}`;
  };
  s.onWelcome = (welcome) => {
    view.basicStepMs = welcome.basic_step_ms;
  };
  s.onState = (state) => {
    view.applyState(state, performance.now());
    interact.onState();
    updatePanels();
  };
  s.onServerError = (code, detail) => {
    view.lastError = `${code}: ${detail}`;
    errorEl.textContent = view.lastError;
  };
  s.connect();
  return s;
}

observerToggle.addEventListener("change", () => {
  session.close();
  session = makeSession(observerToggle.checked);
  interact = new Interaction(view, session, interact.cam, () => [
    canvas.width,
    canvas.height,
  ]);
});

function updatePanels(): void {
  const state = view.state;
  if (state === null) return;
  clockEl.textContent = `t = ${state.t_ms} ms${state.paused ? " (paused)" : ""}`;
  const factor = view.speedFactor();
  speedEl.textContent = factor > 0 ? `${factor.toFixed(1)}x` : "-";
  const rows = state.devices
    .map(
      (d) =>
        `<tr><td>${d.robot}</td><td>${d.name}</td><td>${d.kind}</td>` +
        `<td>${formatValue(d.display_value)}</td></tr>`,
    )
    .join("");
  devicesEl.innerHTML = rows;
}

function formatValue(value: unknown): string {
  if (value === null || value === undefined) return "-";
  if (Array.isArray(value)) return value.map((v) => String(v)).join(", ");
  return String(value);
}

for (const action of ["pause", "resume", "step_once", "reset"] as const) {
  el<HTMLButtonElement>(`btn-${action}`).addEventListener("click", () => {
    session.transportControl(action);
  });
}

canvas.addEventListener("pointerdown", (e) => {
  canvas.setPointerCapture(e.pointerId);
  interact.pointerDown(e.offsetX, e.offsetY, e.shiftKey);
});
canvas.addEventListener("pointermove", (e) => interact.pointerMove(e.offsetX, e.offsetY));
canvas.addEventListener("pointerup", (e) => interact.pointerUp(e.offsetX, e.offsetY));
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  interact.wheel(e.offsetX, e.offsetY, e.deltaY);
});

function resize(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
}
window.addEventListener("resize", resize);
resize();

function frame(): void {
  render(ctx, view.state, interact.cam, view.selection);
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
