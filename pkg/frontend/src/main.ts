// Operator console: target lane with sway feedback, 2-D arm side view,
// phase timer and running metrics, all rendered from server snapshots.

import { DhRow, linkPositions, sideView } from "./arm.js";
import { dwellProgress, ringArc, targetLane } from "./layout.js";
import { ArmGeometry, SessionInfo, Snapshot } from "./protocol.js";
import {
  ConsoleState,
  applySnapshot,
  initialState,
  keyDown,
  keyUp,
  pruneToasts,
  setConnection,
} from "./state.js";
import { NetLink, connect, createSession } from "./net.js";

const FALLBACK_DH: DhRow[] = [
  [0, Math.PI / 2, 130, 0],
  [320, 0, 0, -Math.PI / 2],
  [300, 0, 0, 0],
  [0, Math.PI / 2, 65, Math.PI / 2],
  [0, -Math.PI / 2, 75, 0],
  [0, 0, 60, 0],
];

let state: ConsoleState = initialState();
let arm: ArmGeometry = { dh: FALLBACK_DH, tool_z_mm: 110, observe_joints: [] };
let nTargets = 3;
let link: NetLink | null = null;

const base = (window as unknown as { BCIGRASP_URL?: string }).BCIGRASP_URL
  ?? window.location.origin.replace(/:\d+$/, ":8765");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  try {
    const info = (await createSession(base, {
      experiment: 3,
      seed: 0,
      condition: "neurofeedback",
    })) as SessionInfo;
    arm = info.arm;
    nTargets = info.n_targets;
    el<HTMLSpanElement>("session-label").textContent =
      `experiment ${info.experiment}, seed ${info.seed}, ${info.condition}`;
  } catch {
    el<HTMLSpanElement>("session-label").textContent = "session create failed";
  }
  link = connect(base, {
    onSnapshot: (snap) => {
      state = applySnapshot(state, snap);
    },
    onStatus: (status) => {
      state = setConnection(state, status);
    },
  });
}

document.addEventListener("keydown", (ev) => {
  if (ev.repeat) return;
  const res = keyDown(state, ev.key, performance.now());
  state = res.state;
  if (res.send && link) link.send(res.send);
});

document.addEventListener("keyup", (ev) => {
  const res = keyUp(state, ev.key);
  state = res.state;
  if (res.send && link) link.send(res.send);
});

el<HTMLButtonElement>("pause-btn").addEventListener("click", () => link?.send("pause"));
el<HTMLButtonElement>("reset-btn").addEventListener("click", () => link?.send("reset"));

function draw() {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const snap = state.snapshot;

  ctx.fillStyle = "#10141c";
  ctx.fillRect(0, 0, width, height);

  if (state.connection !== "open" || !snap) {
    ctx.fillStyle = "#e05555";
    ctx.font = "20px system-ui";
    ctx.textAlign = "center";
    ctx.fillText(
      state.connection === "connecting" ? "connecting…" : "disconnected — retrying",
      width / 2,
      height / 2,
    );
    requestAnimationFrame(draw);
    return;
  }

  drawLane(ctx, snap, width);
  drawArm(ctx, snap, width, height);
  drawPhase(ctx, snap, width);
  drawMetrics(snap);
  drawToasts(ctx, width, height);
  requestAnimationFrame(draw);
}

function drawLane(ctx: CanvasRenderingContext2D, snap: Snapshot, width: number) {
  const blocks = targetLane(nTargets, snap.cursor, snap.sway_x, width, 90);
  for (const b of blocks) {
    ctx.fillStyle = b.highlighted ? "#3f8cff" : "#2a3142";
    ctx.strokeStyle = b.highlighted ? "#9cc4ff" : "#3a4256";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.roundRect(b.x - b.size / 2, b.y - b.size / 2, b.size, b.size, 8);
    ctx.fill();
    ctx.stroke();
    if (b.highlighted && Math.abs(snap.sway_x) > 0.01) {
      // arrow indicator riding with the sway
      const dir = Math.sign(snap.sway_x);
      ctx.fillStyle = "#ffd166";
      ctx.beginPath();
      const ax = b.x + dir * (b.size / 2 + 12);
      ctx.moveTo(ax, b.y - 8);
      ctx.lineTo(ax + dir * 12, b.y);
      ctx.lineTo(ax, b.y + 8);
      ctx.fill();
    }
  }
  if (snap.phase === "confirm" && state.confirmEnteredAt !== null) {
    const progress = dwellProgress(state.confirmEnteredAt, snap.t);
    const { startAngle, endAngle } = ringArc(progress);
    const b = blocks[snap.cursor];
    ctx.strokeStyle = "#7ee081";
    ctx.lineWidth = 5;
    ctx.beginPath();
    ctx.arc(b.x, b.y, b.size / 2 + 12, startAngle, endAngle);
    ctx.stroke();
  }
}

function drawArm(ctx: CanvasRenderingContext2D, snap: Snapshot, width: number, height: number) {
  const pts = sideView(linkPositions(snap.joints, arm.dh), width, height - 160);
  ctx.save();
  ctx.translate(0, 150);
  ctx.strokeStyle = "#8be9fd";
  ctx.lineWidth = 5;
  ctx.lineJoin = "round";
  ctx.beginPath();
  pts.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
  ctx.stroke();
  for (const p of pts) {
    ctx.fillStyle = "#f5f7fa";
    ctx.beginPath();
    ctx.arc(p.x, p.y, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  const tip = pts[pts.length - 1];
  ctx.fillStyle = snap.gripper === "closed" ? "#e0a14f" : "#6adb8f";
  ctx.beginPath();
  ctx.arc(tip.x, tip.y, 7, 0, 2 * Math.PI);
  ctx.fill();
  ctx.restore();
}

function drawPhase(ctx: CanvasRenderingContext2D, snap: Snapshot, width: number) {
  ctx.fillStyle = "#c6cbd6";
  ctx.font = "15px system-ui";
  ctx.textAlign = "left";
  ctx.fillText(`phase: ${snap.phase}   t=${snap.t.toFixed(2)} s`, 16, 24);
  ctx.fillText(`s(t) ${snap.s_t >= 0 ? "+" : ""}${snap.s_t.toFixed(2)}`, 16, 44);
  ctx.fillStyle = snap.s_t >= 0 ? "#7ee081" : "#ff8d8d";
  const barW = (width / 4) * Math.abs(snap.s_t);
  ctx.fillRect(width / 2, 36, (snap.s_t >= 0 ? 1 : -1) * barW, 8);
  ctx.strokeStyle = "#3a4256";
  ctx.strokeRect(width / 4, 36, width / 2, 8);
}

function drawMetrics(snap: Snapshot) {
  const m = snap.metrics;
  el<HTMLSpanElement>("metric-itr").textContent = m.itr.toFixed(1);
  el<HTMLSpanElement>("metric-sci").textContent = m.sci.toFixed(3);
  el<HTMLSpanElement>("metric-latency").textContent = m.mean_decision_s.toFixed(2);
  el<HTMLSpanElement>("metric-fpr").textContent = (100 * m.fpr).toFixed(1) + "%";
  el<HTMLSpanElement>("metric-selections").textContent = String(m.selections);
  el<HTMLSpanElement>("connection-label").textContent = state.connection;
}

function drawToasts(ctx: CanvasRenderingContext2D, width: number, height: number) {
  state = pruneToasts(state, performance.now());
  ctx.font = "14px system-ui";
  ctx.textAlign = "center";
  state.toasts.forEach((toast, i) => {
    ctx.fillStyle = "rgba(224, 160, 79, 0.9)";
    ctx.fillText(toast.text, width / 2, height - 20 - 20 * i);
  });
}

boot().then(() => requestAnimationFrame(draw));
