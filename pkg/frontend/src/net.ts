// WebSocket wiring with capped-backoff reconnects. The server is the only
// source of truth; after a reconnect the next snapshot resynchronizes the
// whole view.

import { ConsoleCommand, Snapshot, encodeCommand, parseSnapshot } from "./protocol.js";

export interface NetHandlers {
  onSnapshot: (snap: Snapshot) => void;
  onStatus: (status: "connecting" | "open" | "closed") => void;
}

export interface NetLink {
  send: (cmd: ConsoleCommand) => boolean;
  close: () => void;
}

export function connect(baseUrl: string, handlers: NetHandlers): NetLink {
  const wsUrl = baseUrl.replace(/^http/, "ws").replace(/\/$/, "") + "/stream";
  let ws: WebSocket | null = null;
  let closed = false;
  let retryMs = 500;

  const open = () => {
    handlers.onStatus("connecting");
    ws = new WebSocket(wsUrl);
    ws.onopen = () => {
      retryMs = 500;
      handlers.onStatus("open");
    };
    ws.onmessage = (ev: MessageEvent) => {
      const snap = parseSnapshot(String(ev.data));
      if (snap) handlers.onSnapshot(snap);
    };
    ws.onclose = () => {
      handlers.onStatus("closed");
      if (!closed) {
        setTimeout(open, retryMs);
        retryMs = Math.min(retryMs * 2, 8000);
      }
    };
    ws.onerror = () => {
      // onclose drives the retry
    };
  };
  open();

  return {
    send: (cmd: ConsoleCommand) => {
      if (ws && ws.readyState === WebSocket.OPEN) {
        ws.send(encodeCommand(cmd));
        return true;
      }
      return false;
    },
    close: () => {
      closed = true;
      ws?.close();
    },
  };
}

export async function createSession(
  baseUrl: string,
  body: { experiment: number; seed: number; condition: string },
): Promise<unknown> {
  const resp = await fetch(baseUrl.replace(/\/$/, "") + "/session", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) throw new Error(`session create failed: ${resp.status}`);
  return resp.json();
}
