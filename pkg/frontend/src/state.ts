// Console state: server-authoritative snapshot application plus the small
// amount of client bookkeeping (connection status, key hold, toasts).

import { ConsoleCommand, Snapshot } from "./protocol.js";

export type Connection = "connecting" | "open" | "closed";

export interface Toast {
  text: string;
  at: number; // ms epoch
}

export interface ConsoleState {
  connection: Connection;
  snapshot: Snapshot | null;
  confirmEnteredAt: number | null; // snapshot time when confirm began
  heldKey: "left" | "right" | "lift" | null;
  toasts: Toast[];
  commandLog: ConsoleCommand[];
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    snapshot: null,
    confirmEnteredAt: null,
    heldKey: null,
    toasts: [],
    commandLog: [],
  };
}

export function applySnapshot(state: ConsoleState, snap: Snapshot): ConsoleState {
  // last-writer-wins: an older tick never replaces a newer one
  if (state.snapshot && snap.tick <= state.snapshot.tick) return state;
  let confirmEnteredAt = state.confirmEnteredAt;
  if (snap.phase === "confirm") {
    if (state.snapshot?.phase !== "confirm" || confirmEnteredAt === null) {
      confirmEnteredAt = snap.t;
    }
  } else {
    confirmEnteredAt = null;
  }
  return { ...state, snapshot: snap, confirmEnteredAt };
}

export function setConnection(state: ConsoleState, c: Connection): ConsoleState {
  return { ...state, connection: c, snapshot: c === "open" ? state.snapshot : null };
}

const KEY_COMMANDS: Record<string, ConsoleCommand> = {
  ArrowLeft: "mi_left",
  ArrowRight: "mi_right",
  ArrowUp: "mi_lift",
};

export interface KeyResult {
  state: ConsoleState;
  send: ConsoleCommand | null;
  toast: string | null;
}

/** Movement keys are legal only during decide/confirm; elsewhere the key
 * is swallowed with a toast, never sent. */
export function keyDown(state: ConsoleState, key: string, nowMs: number): KeyResult {
  const cmd = KEY_COMMANDS[key];
  if (!cmd) return { state, send: null, toast: null };
  const phase = state.snapshot?.phase;
  if (state.connection !== "open" || !phase) {
    return { state, send: null, toast: "not connected" };
  }
  if (phase !== "decide" && phase !== "confirm") {
    const toast = `${key.replace("Arrow", "").toLowerCase()} ignored during ${phase}`;
    return {
      state: { ...state, toasts: [...state.toasts, { text: toast, at: nowMs }] },
      send: null,
      toast,
    };
  }
  const held = key === "ArrowLeft" ? "left" : key === "ArrowRight" ? "right" : "lift";
  if (state.heldKey === held) return { state, send: null, toast: null }; // key repeat
  return {
    state: { ...state, heldKey: held, commandLog: [...state.commandLog, cmd] },
    send: cmd,
    toast: null,
  };
}

export function keyUp(state: ConsoleState, key: string): KeyResult {
  if (!(key in KEY_COMMANDS) || state.heldKey === null) {
    return { state, send: null, toast: null };
  }
  return {
    state: { ...state, heldKey: null, commandLog: [...state.commandLog, "mi_release"] },
    send: "mi_release",
    toast: null,
  };
}

export function pruneToasts(state: ConsoleState, nowMs: number, ttlMs = 2500): ConsoleState {
  const keep = state.toasts.filter((t) => nowMs - t.at < ttlMs);
  return keep.length === state.toasts.length ? state : { ...state, toasts: keep };
}
