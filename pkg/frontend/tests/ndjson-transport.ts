/** Node-side transport: the same wire messages over raw TCP NDJSON, so the
 * session logic can be exercised against a live server without a browser. */

import * as net from "node:net";
import type { Transport, TransportFactory } from "../src/protocol.js";

export function ndjsonTransport(host: string, port: number): TransportFactory {
  return (handlers) => {
    const sock = net.createConnection({ host, port });
    sock.setNoDelay(true);
    let buffer = "";
    sock.on("connect", () => handlers.onOpen());
    sock.on("data", (chunk) => {
      buffer += chunk.toString("utf-8");
      let idx: number;
      while ((idx = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 1);
        if (line.trim().length > 0) handlers.onMessage(line);
      }
    });
    sock.on("close", () => handlers.onClose());
    sock.on("error", () => {});
    const transport: Transport = {
      send: (text) => sock.write(text + "\n"),
      close: () => sock.destroy(),
    };
    return transport;
  };
}
