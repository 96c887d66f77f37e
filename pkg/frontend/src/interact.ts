/**
 * Pointer interaction: select and drag bodies (plain drag moves, shift-drag
 * rotates), pan on empty space, wheel zoom. Drags send set_pose through a
 * per-state throttle; the drop point always lands.
 */

import { Camera, panByPixels, screenToWorld, zoomAt } from "./camera.js";
import { ViewState, pickBody } from "./model.js";
import type { WireSession } from "./protocol.js";
import { DragThrottle } from "./throttle.js";

interface DragState {
  node: string;
  rotate: boolean;
  grabDx: number; // cursor offset from the body origin at grab time
  grabDy: number;
  startTheta: number;
  startBearing: number;
}

export class Interaction {
  cam: Camera;
  readonly throttle = new DragThrottle();
  private drag: DragState | null = null;
  private panning: { sx: number; sy: number; cam: Camera } | null = null;

  constructor(
    private view: ViewState,
    private session: WireSession,
    cam: Camera,
    private size: () => [number, number],
  ) {
    this.cam = cam;
  }

  /** Call on every state broadcast so the throttle opens. */
  onState(): void {
    this.throttle.onState();
  }

  pointerDown(sx: number, sy: number, shift: boolean): void {
    const [w, h] = this.size();
    const [wx, wy] = screenToWorld(this.cam, w, h, sx, sy);
    const body = this.view.state ? pickBody(this.view.state.bodies, wx, wy) : null;
    if (body === null) {
      this.view.selection = null;
      this.panning = { sx, sy, cam: this.cam };
      return;
    }
    this.view.selection = body.node;
    this.drag = {
      node: body.node,
      rotate: shift,
      grabDx: wx - body.x,
      grabDy: wy - body.y,
      startTheta: body.theta,
      startBearing: Math.atan2(wy - body.y, wx - body.x),
    };
  }

  pointerMove(sx: number, sy: number): void {
    if (this.panning !== null) {
      this.cam = panByPixels(this.panning.cam, sx - this.panning.sx, sy - this.panning.sy);
      return;
    }
    if (this.drag === null) return;
    this.offerPose(sx, sy);
  }

  pointerUp(sx: number, sy: number): void {
    if (this.drag !== null) {
      this.offerPose(sx, sy); // final sample: the drop point
      this.drag = null;
    }
    this.panning = null;
  }

  wheel(sx: number, sy: number, deltaY: number): void {
    const [w, h] = this.size();
    const factor = Math.exp(-deltaY * 0.001);
    this.cam = zoomAt(this.cam, w, h, sx, sy, factor);
  }

  private offerPose(sx: number, sy: number): void {
    const drag = this.drag!;
    const body = this.view.body(drag.node);
    if (body === undefined) return;
    const [w, h] = this.size();
    const [wx, wy] = screenToWorld(this.cam, w, h, sx, sy);
    let x = body.x;
    let y = body.y;
    let theta = body.theta;
    if (drag.rotate) {
      const bearing = Math.atan2(wy - body.y, wx - body.x);
      theta = drag.startTheta + (bearing - drag.startBearing);
    } else {
      x = wx - drag.grabDx;
      y = wy - drag.grabDy;
    }
    this.throttle.offer(() => this.session.setPose(drag.node, x, y, theta));
  }
}
