"""Session service: the networked control surface of the simulator.

Endpoints:
    POST /session {experiment, seed, condition}  create/replace the session
    GET  /state                                  latest snapshot
    POST /target {target_id, marker_id}          confirm path of record
    WS   /stream                                 snapshots out, commands in

The stream carries JSON text records. Client commands are {"cmd": NAME}
with NAME one of mi_left, mi_right, mi_lift, mi_release, pause, reset
(console-driven mode injects these as synthetic decoder outputs), plus
{"cmd": "tick", "blocks": N} to advance simulated time when no real-time
pacer is running (headless clients and tests).

One command-injecting client steers a session; any number of read-only
subscribers may watch. Snapshots are fanned out through bounded buffers
that drop the oldest entry rather than block the simulation tick.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
from dataclasses import dataclass, replace

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .ar import ArCondition, ArConfig, ArLoop, ArPhase, TargetConfirmed, init_scene
from .arm import (
    DEFAULT_DH,
    OBSERVE_JOINTS,
    ArmModel,
    ExecutionPolicy,
    Outcome,
    fk,
    joints_at,
    synth_waypoints,
)
from .bridge import Snapshot, SnapshotBuffer, TargetMessage
from .ar import CursorMoved
from .arm import ArmExecutor
from .config import CONDITION_NAMES, ExperimentConfig
from .decoder import CLASS_ORDER, ClassifierOutput
from .eeg import Command
from .geometry import Frame, Pose
from .harness import CAMERA_MOUNT, calibration_dance, default_config, derive_seed
from .loop import SelectionResult, place_scene, run_pick_pipeline
from .metrics import itr_detail

SNAPSHOT_HZ = 20
SNAPSHOT_DT = 1.0 / SNAPSHOT_HZ

CONSOLE_COMMANDS = ("mi_left", "mi_right", "mi_lift", "mi_release", "pause", "reset")


def _console_output(held: str | None) -> ClassifierOutput:
    scores = np.zeros(4)
    if held == "mi_left":
        scores[CLASS_ORDER.index(Command.LEFT)] = 1.0
        return ClassifierOutput(scores, Command.LEFT, -0.85, np.full(4, 0.25))
    if held == "mi_right":
        scores[CLASS_ORDER.index(Command.RIGHT)] = 1.0
        return ClassifierOutput(scores, Command.RIGHT, 0.85, np.full(4, 0.25))
    if held == "mi_lift":
        scores[CLASS_ORDER.index(Command.LIFT)] = 1.0
        return ClassifierOutput(scores, Command.LIFT, 0.0, np.full(4, 0.25))
    scores[CLASS_ORDER.index(Command.NEUTRAL)] = 1.0
    return ClassifierOutput(scores, Command.NEUTRAL, 0.0, np.full(4, 0.25))


@dataclass
class RunningMetrics:
    selections: int = 0
    total_decision_time: float = 0.0
    sci_sum: float = 0.0
    sci_blocks: int = 0
    moves: int = 0
    wrong_moves: int = 0

    def as_dict(self) -> dict:
        mean_t = self.total_decision_time / self.selections if self.selections else 0.0
        itr = itr_detail(3, 1.0, mean_t).bits_per_min if mean_t > 0 else 0.0
        return {
            "selections": self.selections,
            "mean_decision_s": round(mean_t, 3),
            "itr": round(itr, 2),
            "sci": round(self.sci_sum / self.sci_blocks, 4) if self.sci_blocks else 0.0,
            "fpr": round(self.wrong_moves / self.moves, 4) if self.moves else 0.0,
        }


class LiveSession:
    """Console-driven closed loop advanced on simulated time."""

    def __init__(self, cfg: ExperimentConfig, condition: ArCondition):
        self.cfg = cfg
        self.condition = condition
        self.model = ArmModel()
        self.calibration = calibration_dance(cfg, derive_seed(cfg.seed, 0, 6))
        self.paused = False
        self.held: str | None = None
        self.tick = 0
        self.t = 0.0
        self.trial_index = 0
        self.metrics = RunningMetrics()
        self.subscribers: list[SnapshotBuffer] = []
        self.confirmed_targets: set[int] = set()
        self._start_trial()

    # -- trial lifecycle --------------------------------------------------

    def _start_trial(self):
        seed = derive_seed(self.cfg.seed, self.trial_index, 3)
        self.scene = place_scene(self.cfg.scene, derive_seed(self.cfg.seed, self.trial_index, 4))
        markers = [o.marker_id for o in self.scene]
        self.ar = init_scene(
            self.cfg.scene.n_targets, self.condition, seed=seed,
            config=ArConfig(
                theta=self.cfg.decoder.theta, tau_s=self.cfg.decoder.tau_s,
                confirm_dwell_s=self.cfg.decoder.tau_lift_s,
                lift_enter_s=self.cfg.decoder.tau_s,
                refractory_s=self.cfg.decoder.refractory_s,
                execute_enabled=self.cfg.experiment != 2,
            ),
            marker_ids=markers,
        )
        self.exec_log = None
        self.exec_start_t: float | None = None
        self.decide_started: float | None = None
        self.gripper = "open"

    def reset(self):
        # http-confirm dedupe is session-scoped, so it survives trial resets
        self.trial_index += 1
        self._start_trial()

    @property
    def executing(self) -> bool:
        return self.exec_log is not None and self.exec_start_t is not None and (
            self.t - self.exec_start_t < self.exec_log.t_exec_s
        )

    # -- advancing --------------------------------------------------------

    def advance_blocks(self, steps: int) -> list[Snapshot]:
        """Advance simulated time by whole snapshot periods (0.05 s); one
        snapshot per step, pushed to every subscriber. The finer-than-block
        cadence keeps command-to-snapshot latency under the 20 Hz period."""
        due: list[Snapshot] = []
        for _ in range(steps):
            if not self.paused:
                self._step_block(SNAPSHOT_DT)
            self.t += SNAPSHOT_DT
            snap = self._snapshot(self.t)
            due.append(snap)
            for sub in self.subscribers:
                sub.push(snap)
        return due

    def _step_block(self, dt: float):
        st = self.ar.state
        if st.phase is ArPhase.EXECUTE:
            if self.exec_log is None:
                self._start_pipeline()
            elif not self.executing:
                self.reset()
            return
        if st.done:
            self.reset()
            return
        out = _console_output(self.held)
        events = self.ar.step(out, dt)
        if st.phase is ArPhase.DECIDE:
            if self.decide_started is None:
                self.decide_started = st.t
            d = {"mi_left": -1, "mi_right": +1}.get(self.held or "", 0)
            if d:
                self.metrics.sci_sum += max(0.0, out.s_t * d)
                self.metrics.sci_blocks += 1  # uniform dt: mean == integral/T
        for ev in events:
            if isinstance(ev, CursorMoved):
                self.metrics.moves += 1
                want = {"mi_left": Command.LEFT, "mi_right": Command.RIGHT}.get(self.held or "")
                if want is not None and ev.command is not want:
                    self.metrics.wrong_moves += 1
            if isinstance(ev, TargetConfirmed):
                self.metrics.selections += 1
                if self.decide_started is not None:
                    self.metrics.total_decision_time += ev.t - self.decide_started
                self.confirmed_targets.add(ev.target_id)

    def _start_pipeline(self):
        st = self.ar.state
        target_id, marker_id = st.confirmed
        selection = SelectionResult(
            confirmed=(target_id, marker_id), timed_out=False, duration_s=st.t,
            decision_time_s=None, sci_trace=None, false_moves=0, total_decisions=0,
            events=[],
        )
        outcome, failure, t_plan, t_exec, regrasps, err = run_pick_pipeline(
            self.cfg, selection, self.scene, target_id, self.calibration,
            CAMERA_MOUNT, seed=derive_seed(self.cfg.seed, self.trial_index, 7),
        )
        # rebuild the joint trajectory for animation
        obj = next(o for o in self.scene if o.marker_id == marker_id)
        observe_pose = fk(OBSERVE_JOINTS, self.model)
        try:
            ws = synth_waypoints(
                Pose.from_translation(obj.position_mm, (Frame.BASE, Frame.OBJECT)),
                self.cfg.offsets, observe_pose.q, self.model,
            )
            log = ArmExecutor(self.model, ExecutionPolicy()).execute(
                ws, OBSERVE_JOINTS, obj.position_mm,
                z_return_mm=self.cfg.offsets.z_return_mm,
            )
        except Exception:
            log = None
        self.exec_log = log if log is not None else _EmptyLog()
        self.exec_start_t = self.t
        self.exec_outcome = outcome

    def confirm_external(self, msg: TargetMessage) -> dict:
        """HTTP confirm path; idempotent per (session, target)."""
        if self.executing:
            raise BusyError("robot executing")
        if msg.target_id in self.confirmed_targets:
            return {"accepted": True, "duplicate": True}
        slots = {o.target_id: o for o in self.scene}
        if msg.target_id not in slots:
            raise ValueError(f"unknown target {msg.target_id}")
        st = self.ar.state
        if st.phase not in (ArPhase.DECIDE, ArPhase.CONFIRM):
            raise BusyError(f"cannot confirm during {st.phase.value}")
        st.cursor = msg.target_id
        st.confirmed = (msg.target_id, slots[msg.target_id].marker_id)
        st.phase = ArPhase.EXECUTE
        st.sway_x = 0.0
        self.confirmed_targets.add(msg.target_id)
        self.metrics.selections += 1
        return {"accepted": True, "duplicate": False}

    # -- snapshots ----------------------------------------------------------

    def _snapshot(self, t_snap: float) -> Snapshot:
        st = self.ar.state
        out = _console_output(self.held)
        joints = OBSERVE_JOINTS
        gripper = "open"
        if self.exec_log is not None and self.exec_start_t is not None:
            rel = t_snap - self.exec_start_t
            joints = joints_at(self.exec_log.segments, rel, OBSERVE_JOINTS)
            closure = _closure_time(self.exec_log)
            if closure is not None and rel >= closure and rel <= self.exec_log.t_exec_s:
                gripper = "closed"
        self.tick += 1
        return Snapshot(
            tick=self.tick, t=round(t_snap, 6), s_t=out.s_t,
            command=self.held or "", cursor=st.cursor, sway_x=st.sway_x,
            condition=st.condition.value, phase=st.phase.value,
            joints=[float(q) for q in joints], gripper=gripper,
            metrics=self.metrics.as_dict(),
        )

    def subscribe(self, capacity: int = 64) -> SnapshotBuffer:
        buf = SnapshotBuffer(capacity)
        self.subscribers.append(buf)
        return buf

    def unsubscribe(self, buf: SnapshotBuffer):
        if buf in self.subscribers:
            self.subscribers.remove(buf)


class _EmptyLog:
    t_exec_s = 0.0
    segments: list = []


def _closure_time(log) -> float | None:
    slow = [s for s in log.segments if getattr(s.speed, "value", "") == "slow"]
    if not slow:
        return None
    return slow[0].t_start + slow[0].duration + 1.0


class BusyError(Exception):
    pass


def arm_geometry_dict() -> dict:
    return {
        "dh": [[r.a_mm, r.alpha_rad, r.d_mm, r.theta_offset_rad] for r in DEFAULT_DH],
        "tool_z_mm": 110.0,
        "observe_joints": [float(q) for q in OBSERVE_JOINTS],
    }


def create_app(cfg: ExperimentConfig | None = None, realtime: bool = False):
    state: dict = {"session": None, "cfg": cfg or default_config(3), "task": None}

    @contextlib.asynccontextmanager
    async def lifespan(_app):
        if realtime:
            state["task"] = asyncio.create_task(_pace())
        yield
        task = state.get("task")
        if task:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task

    app = FastAPI(title="bcigrasp session service", lifespan=lifespan)

    def session() -> LiveSession:
        if state["session"] is None:
            base = state["cfg"]
            state["session"] = LiveSession(base, ArCondition.NEUROFEEDBACK)
        return state["session"]

    @app.post("/session")
    async def create_session(body: dict):
        experiment = int(body.get("experiment", state["cfg"].experiment))
        seed = int(body.get("seed", state["cfg"].seed))
        cond_name = body.get("condition", ArCondition.NEUROFEEDBACK.value)
        if cond_name not in CONDITION_NAMES:
            raise HTTPException(400, f"unknown condition {cond_name!r}")
        cfg2 = replace(default_config(experiment), seed=seed)
        state["cfg"] = cfg2
        state["session"] = LiveSession(cfg2, CONDITION_NAMES[cond_name])
        return {
            "session": 1,
            "experiment": experiment,
            "seed": seed,
            "condition": cond_name,
            "snapshot_hz": SNAPSHOT_HZ,
            "n_targets": cfg2.scene.n_targets,
            "arm": arm_geometry_dict(),
        }

    @app.get("/state")
    async def get_state():
        s = session()
        return json.loads(s._snapshot(s.t).to_json())

    @app.post("/target")
    async def post_target(body: dict):
        try:
            msg = TargetMessage(int(body["target_id"]), int(body["marker_id"]))
        except (KeyError, ValueError) as exc:
            raise HTTPException(400, str(exc))
        s = session()
        try:
            return s.confirm_external(msg)
        except BusyError as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        s = session()
        buf = s.subscribe()
        recv_task: asyncio.Task | None = None

        async def flush():
            for snap in buf.drain():
                await ws.send_text(snap.to_json())

        try:
            while True:
                await flush()
                if recv_task is None:
                    recv_task = asyncio.ensure_future(ws.receive_text())
                done, _ = await asyncio.wait({recv_task}, timeout=0.005)
                if recv_task in done:
                    text = recv_task.result()
                    recv_task = None
                    ack = handle_command(s, text)
                    if ack is not None:
                        await flush()
                        await ws.send_text(ack)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            if recv_task is not None:
                recv_task.cancel()
                with contextlib.suppress(Exception):
                    await recv_task
            s.unsubscribe(buf)

    def handle_command(s: LiveSession, text: str) -> str | None:
        """Apply one client command; 'tick' returns an ack emitted after the
        due snapshots so lockstep clients need no timeouts."""
        try:
            body = json.loads(text)
        except json.JSONDecodeError:
            return None
        cmd = body.get("cmd")
        if cmd == "tick":
            n = int(body.get("blocks", 1))
            due = s.advance_blocks(n)
            return json.dumps({"ack": "tick", "blocks": n, "snapshots": len(due)})
        if cmd == "pause":
            s.paused = not s.paused
        elif cmd == "reset":
            s.reset()
        elif cmd in ("mi_left", "mi_right", "mi_lift"):
            s.held = cmd
        elif cmd == "mi_release":
            s.held = None
        return None

    async def _pace():
        # wall-clock pacing: 0.125 s of simulated time per 0.125 s elapsed;
        # always advances the CURRENT session so /session swaps take over
        loop = asyncio.get_event_loop()
        next_deadline = loop.time() + SNAPSHOT_DT
        while True:
            await asyncio.sleep(max(0.0, next_deadline - loop.time()))
            session().advance_blocks(1)
            next_deadline += SNAPSHOT_DT
            if loop.time() > next_deadline + 1.0:  # fell badly behind; resync
                next_deadline = loop.time() + SNAPSHOT_DT

    return app


def serve(cfg: ExperimentConfig, port: int, out_dir=None, host: str = "127.0.0.1"):
    import uvicorn

    app = create_app(cfg, realtime=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")
