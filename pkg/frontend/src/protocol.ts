// Wire types shared with the session service. Snapshots are JSON text
// records on the /stream WebSocket; the console never simulates the loop,
// it renders exactly what these records say.

export interface RunningMetrics {
  selections: number;
  mean_decision_s: number;
  itr: number;
  sci: number;
  fpr: number;
}

export interface Snapshot {
  tick: number;
  t: number;
  s_t: number;
  command: string;
  cursor: number;
  sway_x: number;
  condition: string;
  phase: "prepare" | "decide" | "confirm" | "execute";
  joints: number[];
  gripper: "open" | "closed";
  metrics: RunningMetrics;
}

export interface ArmGeometry {
  dh: [number, number, number, number][]; // a_mm, alpha_rad, d_mm, theta_offset_rad
  tool_z_mm: number;
  observe_joints: number[];
}

export interface SessionInfo {
  session: number;
  experiment: number;
  seed: number;
  condition: string;
  snapshot_hz: number;
  n_targets: number;
  arm: ArmGeometry;
}

const PHASES = new Set(["prepare", "decide", "confirm", "execute"]);

export function parseSnapshot(text: string): Snapshot | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const d = raw as Record<string, unknown>;
  if (typeof d.tick !== "number" || typeof d.t !== "number") return null;
  if (typeof d.phase !== "string" || !PHASES.has(d.phase)) return null;
  if (!Array.isArray(d.joints) || d.joints.length !== 6) return null;
  if (typeof d.cursor !== "number" || typeof d.sway_x !== "number") return null;
  const metrics = (d.metrics ?? {}) as Record<string, number>;
  return {
    tick: d.tick,
    t: d.t,
    s_t: typeof d.s_t === "number" ? d.s_t : 0,
    command: typeof d.command === "string" ? d.command : "",
    cursor: d.cursor,
    sway_x: d.sway_x,
    condition: typeof d.condition === "string" ? d.condition : "",
    phase: d.phase as Snapshot["phase"],
    joints: d.joints.map(Number),
    gripper: d.gripper === "closed" ? "closed" : "open",
    metrics: {
      selections: metrics.selections ?? 0,
      mean_decision_s: metrics.mean_decision_s ?? 0,
      itr: metrics.itr ?? 0,
      sci: metrics.sci ?? 0,
      fpr: metrics.fpr ?? 0,
    },
  };
}

export type ConsoleCommand =
  | "mi_left"
  | "mi_right"
  | "mi_lift"
  | "mi_release"
  | "pause"
  | "reset";

export function encodeCommand(cmd: ConsoleCommand): string {
  return JSON.stringify({ cmd });
}
