/**
 * Wire session: hello/welcome handshake, request/response correlation by id,
 * state stream handling, and reconnection with backoff.
 *
 * The transport is injected so the same session logic runs over a browser
 * WebSocket or a raw NDJSON socket in tests.
 */

export interface Transport {
  send(text: string): void;
  close(): void;
}

export interface TransportHandlers {
  onOpen(): void;
  onMessage(text: string): void;
  onClose(): void;
}

export type TransportFactory = (handlers: TransportHandlers) => Transport;

export type Role = "controller" | "supervisor" | "observer";

export interface ShapeInfo {
  kind: "circle" | "rect" | "segment";
  radius?: number;
  width?: number;
  height?: number;
  ax?: number;
  ay?: number;
  bx?: number;
  by?: number;
}

export interface BodyState {
  node: string;
  x: number;
  y: number;
  theta: number;
  color: number;
  static: boolean;
  shape: ShapeInfo;
}

export interface DeviceState {
  robot: string;
  name: string;
  kind: string;
  display_value: unknown;
}

export interface StateMessage {
  op: "state";
  t_ms: number;
  paused?: boolean;
  bodies: BodyState[];
  devices: DeviceState[];
  leds: { robot: string; name: string; state: number }[];
}

export interface WelcomeMessage {
  op: "welcome";
  version: number;
  basic_step_ms: number;
  devices: unknown[];
}

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

interface Pending {
  resolve(message: Record<string, unknown>): void;
  reject(err: Error): void;
}

export interface SessionOptions {
  role?: Role;
  subscribeEvery?: number;
  /** backoff schedule in ms; the last entry repeats */
  backoff?: number[];
  scheduler?: (fn: () => void, ms: number) => void;
}

export class WireSession {
  onState: (state: StateMessage) => void = () => {};
  onWelcome: (welcome: WelcomeMessage) => void = () => {};
  onStatus: (status: ConnectionStatus, detail: string) => void = () => {};
  onServerError: (code: string, detail: string) => void = () => {};
  onNotice: (message: Record<string, unknown>) => void = () => {};

  private transport: Transport | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private attempts = 0;
  private stopped = false;
  private readonly role: Role;
  private readonly subscribeEvery: number;
  private readonly backoff: number[];
  private readonly schedule: (fn: () => void, ms: number) => void;

  constructor(private factory: TransportFactory, options: SessionOptions = {}) {
    this.role = options.role ?? "supervisor";
    this.subscribeEvery = options.subscribeEvery ?? 1;
    this.backoff = options.backoff ?? [250, 500, 1000, 2000, 5000];
    this.schedule = options.scheduler ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  private open(): void {
    this.onStatus("connecting", `attempt ${this.attempts + 1}`);
    this.transport = this.factory({
      onOpen: () => this.handshake(),
      onMessage: (text) => this.dispatch(text),
      onClose: () => this.handleClose(),
    });
  }

  private async handshake(): Promise<void> {
    this.attempts = 0;
    try {
      const welcome = await this.request("hello", { role: this.role });
      this.onWelcome(welcome as unknown as WelcomeMessage);
      if (this.role !== "observer" && this.subscribeEvery > 0) {
        await this.request("subscribe", { every_n_ticks: this.subscribeEvery });
      }
      this.onStatus("connected", "");
    } catch (err) {
      this.onStatus("disconnected", String(err));
    }
  }

  private handleClose(): void {
    this.transport = null;
    for (const pending of this.pending.values()) {
      pending.reject(new Error("connection closed"));
    }
    this.pending.clear();
    if (this.stopped) {
      this.onStatus("disconnected", "closed");
      return;
    }
    const wait = this.backoff[Math.min(this.attempts, this.backoff.length - 1)];
    this.attempts += 1;
    this.onStatus("disconnected", `retrying in ${wait} ms`);
    this.schedule(() => {
      if (!this.stopped) this.open();
    }, wait);
  }

  private dispatch(text: string): void {
    let message: Record<string, unknown>;
    try {
      message = JSON.parse(text);
    } catch {
      return; // tolerate garbage frames
    }
    const id = message.id;
    if (typeof id === "number" && this.pending.has(id)) {
      const pending = this.pending.get(id)!;
      this.pending.delete(id);
      if (message.op === "error") {
        this.onServerError(String(message.code), String(message.detail));
        pending.reject(new Error(`${message.code}: ${message.detail}`));
      } else {
        pending.resolve(message);
      }
      return;
    }
    if (message.op === "state") {
      this.onState(message as unknown as StateMessage);
    } else if (message.op === "error") {
      this.onServerError(String(message.code), String(message.detail));
    } else {
      this.onNotice(message);
    }
  }

  /** Fire-and-forget send; most UI actions do not await the ack. */
  send(op: string, fields: Record<string, unknown> = {}): void {
    if (this.transport === null) return;
    const id = this.nextId++;
    this.transport.send(JSON.stringify({ op, id, ...fields }));
  }

  request(op: string, fields: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.transport === null) {
      return Promise.reject(new Error("not connected"));
    }
    const id = this.nextId++;
    const promise = new Promise<Record<string, unknown>>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
    });
    this.transport.send(JSON.stringify({ op, id, ...fields }));
    return promise;
  }

  setPose(node: string, x: number, y: number, theta: number): void {
    this.send("set_pose", { node, x, y, theta });
  }

  transportControl(action: "pause" | "resume" | "step_once" | "reset"): void {
    this.send(action);
  }

  close(): void {
    this.stopped = true;
    this.transport?.close();
  }
}

/** Browser transport: text frames over the server's /ws endpoint. */
export function webSocketTransport(url: string): TransportFactory {
  return (handlers) => {
    const ws = new WebSocket(url);
    ws.onopen = () => handlers.onOpen();
    ws.onmessage = (event) => handlers.onMessage(String(event.data));
    ws.onclose = () => handlers.onClose();
    ws.onerror = () => {};
    return {
      send: (text) => ws.send(text),
      close: () => ws.close(),
    };
  };
}
