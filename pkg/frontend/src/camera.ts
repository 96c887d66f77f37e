/** Pan/zoom camera: world meters to canvas pixels, y up in world space. */

export interface Camera {
  cx: number; // world point at the canvas center
  cy: number;
  pxPerMeter: number;
}

export const DEFAULT_PX_PER_METER = 120;

export function makeCamera(): Camera {
  return { cx: 0, cy: 0, pxPerMeter: DEFAULT_PX_PER_METER };
}

export function worldToScreen(
  cam: Camera, width: number, height: number, x: number, y: number,
): [number, number] {
  return [
    width / 2 + (x - cam.cx) * cam.pxPerMeter,
    height / 2 - (y - cam.cy) * cam.pxPerMeter,
  ];
}

export function screenToWorld(
  cam: Camera, width: number, height: number, sx: number, sy: number,
): [number, number] {
  return [
    cam.cx + (sx - width / 2) / cam.pxPerMeter,
    cam.cy - (sy - height / 2) / cam.pxPerMeter,
  ];
}

export function panByPixels(cam: Camera, dxPx: number, dyPx: number): Camera {
  return {
    ...cam,
    cx: cam.cx - dxPx / cam.pxPerMeter,
    cy: cam.cy + dyPx / cam.pxPerMeter,
  };
}

/** Zoom about a screen point so the world point under the cursor stays put. */
export function zoomAt(
  cam: Camera, width: number, height: number,
  sx: number, sy: number, factor: number,
): Camera {
  const clamped = Math.min(Math.max(cam.pxPerMeter * factor, 5), 20000);
  const [wx, wy] = screenToWorld(cam, width, height, sx, sy);
  const next = { ...cam, pxPerMeter: clamped };
  const [nx, ny] = screenToWorld(next, width, height, sx, sy);
  return { ...next, cx: next.cx + (wx - nx), cy: next.cy + (wy - ny) };
}
