"""AR target-selection state machine.

Phases run Prepare (2 s) -> Decide (up to 6 s) -> Confirm (3 s sustained
lift) -> Execute. Decide-phase left/right commands come from a dwell
commander over the signed decoder output and move the cursor one slot,
clamped at the ends. The highlighted block sways laterally according to
the feedback condition: neurofeedback tracks the signed output, sham
tracks its magnitude with a seed-drawn direction sequence, static and
no-AR keep it still. Sway is a critically damped second-order tracker
advanced with its exact discrete solution, so it is stable for any step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import ClassifierOutput, CommandEvent, DwellCommander
from .eeg import Command


class TargetCountOutOfRange(Exception):
    pass


class NotInConfirmPhase(Exception):
    pass


class ArCondition(enum.Enum):
    NO_AR = "no_ar"
    STATIC = "static"
    SHAM = "sham"
    NEUROFEEDBACK = "neurofeedback"


class ArPhase(enum.Enum):
    PREPARE = "prepare"
    DECIDE = "decide"
    CONFIRM = "confirm"
    EXECUTE = "execute"


@dataclass(frozen=True)
class PhaseChanged:
    t: float
    phase: ArPhase


@dataclass(frozen=True)
class CursorMoved:
    t: float
    command: Command
    cursor: int
    clamped: bool


@dataclass(frozen=True)
class TargetConfirmed:
    t: float
    target_id: int
    marker_id: int


@dataclass(frozen=True)
class TimedOut:
    t: float


ArEvent = PhaseChanged | CursorMoved | TargetConfirmed | TimedOut


@dataclass
class SwayDynamics:
    """Critically damped tracker x'' = w^2 (u - x) - 2 w x'."""

    omega: float = 8.0
    x: float = 0.0
    v: float = 0.0

    def advance(self, u: float, dt: float) -> float:
        e = self.x - u
        b = self.v + self.omega * e
        decay = math.exp(-self.omega * dt)
        self.x = u + (e + b * dt) * decay
        self.v = (b - self.omega * (e + b * dt)) * decay
        return self.x

    def freeze(self):
        self.x = 0.0
        self.v = 0.0


@dataclass(frozen=True)
class ArConfig:
    prepare_s: float = 2.0
    decide_limit_s: float = 6.0
    confirm_dwell_s: float = 3.0
    lift_enter_s: float = 0.4  # reuses the decoder dwell for phase entry
    sway_omega: float = 8.0
    sway_amplitude: float = 0.25  # fraction of inter-target spacing
    sway_visibility_eps: float = 0.02
    theta: float = 0.5
    tau_s: float = 0.4
    refractory_s: float = 0.5
    execute_enabled: bool = True
    start_cursor: int | None = None  # default: middle slot


@dataclass
class ArState:
    targets: list[tuple[int, int]]  # (target_id, marker_id)
    cursor: int
    condition: ArCondition
    phase: ArPhase = ArPhase.PREPARE
    t: float = 0.0
    sway_x: float = 0.0
    phase_clock: float = 0.0
    decide_clock: float = 0.0
    confirmed: tuple[int, int] | None = None
    done: bool = False
    timed_out: bool = False

    @property
    def n_targets(self) -> int:
        return len(self.targets)


class ArLoop:
    """Single-owner interaction loop; advance with step(), read state freely."""

    def __init__(self, n_targets: int, condition: ArCondition, seed: int,
                 config: ArConfig | None = None,
                 marker_ids: list[int] | None = None):
        if not 3 <= n_targets <= 5:
            raise TargetCountOutOfRange(f"need 3-5 targets, got {n_targets}")
        cfg = config or ArConfig()
        markers = marker_ids if marker_ids is not None else [10 + i for i in range(n_targets)]
        if len(markers) != n_targets:
            raise ValueError("marker_ids length must match n_targets")
        cursor = cfg.start_cursor if cfg.start_cursor is not None else n_targets // 2
        if not 0 <= cursor < n_targets:
            raise ValueError("start cursor out of range")
        self.config = cfg
        self.state = ArState(
            targets=[(i, m) for i, m in enumerate(markers)],
            cursor=cursor,
            condition=condition,
        )
        self._commander = DwellCommander(cfg.theta, cfg.tau_s, 1e9, cfg.refractory_s)
        self._sway = SwayDynamics(cfg.sway_omega)
        self._sham_dirs = np.random.default_rng(seed).choice([-1.0, 1.0], size=4096)
        self._sham_idx = 0
        self._drive_sign = 0
        self._lift_since: float | None = None
        self._confirm_hold = 0.0

    # -- feedback ----------------------------------------------------------
    # One signed tracker follows the decoder output for both swaying
    # conditions; sham renders the same amplitude envelope with a
    # seed-drawn direction that re-draws at each zero crossing, so only
    # direction congruence distinguishes sham from neurofeedback.

    def _rendered_sway(self, s_t: float, dt: float) -> float:
        cond = self.state.condition
        if cond in (ArCondition.NO_AR, ArCondition.STATIC):
            self._sway.advance(0.0, dt)
            return 0.0
        x = self._sway.advance(self.config.sway_amplitude * s_t, dt)
        x = float(np.clip(x, -0.5, 0.5))
        if cond is ArCondition.NEUROFEEDBACK:
            return x
        sign = 0 if x == 0.0 else (1 if x > 0 else -1)
        if sign != 0 and self._drive_sign != 0 and sign != self._drive_sign:
            self._sham_idx = (self._sham_idx + 1) % len(self._sham_dirs)
        if sign != 0:
            self._drive_sign = sign
        return abs(x) * float(self._sham_dirs[self._sham_idx])

    def congruent(self, intent: Command) -> bool:
        """True when the rendered feedback visibly matches the user's intent."""
        if self.state.condition is not ArCondition.NEUROFEEDBACK or self.state.done:
            return False
        if self.state.phase is ArPhase.DECIDE and intent in (Command.LEFT, Command.RIGHT):
            if abs(self.state.sway_x) <= self.config.sway_visibility_eps:
                return False
            want = 1.0 if intent is Command.RIGHT else -1.0
            return math.copysign(1.0, self.state.sway_x) == want
        if self.state.phase is ArPhase.CONFIRM and intent is Command.LIFT:
            return True  # lock-on positive feedback
        return False

    # -- transitions -------------------------------------------------------

    def step(self, out: ClassifierOutput, dt: float) -> list[ArEvent]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        st = self.state
        if st.done:
            return []
        st.t += dt
        st.phase_clock += dt
        events: list[ArEvent] = []

        if st.phase is ArPhase.PREPARE:
            if st.phase_clock >= self.config.prepare_s - 1e-12:
                self._enter(ArPhase.DECIDE, events)
            return events

        if st.phase is ArPhase.DECIDE:
            st.decide_clock += dt
            st.sway_x = self._rendered_sway(out.s_t, dt)
            for ev in self._commander.feed(st.t, out):
                events.append(self._apply_command(ev))
            self._track_lift(out, dt, events)
            if st.phase is ArPhase.DECIDE and st.decide_clock > self.config.decide_limit_s + 1e-12:
                st.done = True
                st.timed_out = True
                events.append(TimedOut(st.t))
            return events

        if st.phase is ArPhase.CONFIRM:
            st.sway_x = self._rendered_sway(0.0, dt)  # block is locking on
            if out.label is Command.LIFT:
                self._confirm_hold += dt
                if self._confirm_hold >= self.config.confirm_dwell_s - 1e-12:
                    events.append(self.confirm())
                    if st.phase is ArPhase.EXECUTE:
                        events.append(PhaseChanged(st.t, ArPhase.EXECUTE))
            else:
                self._lift_since = None
                self._confirm_hold = 0.0
                self._enter(ArPhase.DECIDE, events)
            return events

        return events  # EXECUTE: inert for the selection loop

    def _enter(self, phase: ArPhase, events: list[ArEvent]):
        self.state.phase = phase
        self.state.phase_clock = 0.0
        events.append(PhaseChanged(self.state.t, phase))

    def _apply_command(self, ev: CommandEvent) -> CursorMoved:
        st = self.state
        delta = {Command.LEFT: -1, Command.RIGHT: +1}.get(ev.command, 0)
        new = min(max(st.cursor + delta, 0), st.n_targets - 1)
        clamped = new == st.cursor and delta != 0
        st.cursor = new
        return CursorMoved(ev.t, ev.command, st.cursor, clamped)

    def _track_lift(self, out: ClassifierOutput, dt: float, events: list[ArEvent]):
        st = self.state
        if out.label is Command.LIFT:
            if self._lift_since is None:
                self._lift_since = st.t
            hold = st.t - self._lift_since + dt  # first lift sample counts dt
            if hold >= self.config.lift_enter_s - 1e-12:
                self._confirm_hold = hold
                self._enter(ArPhase.CONFIRM, events)
        else:
            self._lift_since = None

    def confirm(self) -> TargetConfirmed:
        st = self.state
        if st.phase is not ArPhase.CONFIRM or self._confirm_hold < self.config.confirm_dwell_s - 1e-12:
            raise NotInConfirmPhase("confirm requires the confirm phase with dwell satisfied")
        target_id, marker_id = st.targets[st.cursor]
        st.confirmed = (target_id, marker_id)
        self._sway.freeze()
        st.sway_x = 0.0
        ev = TargetConfirmed(st.t, target_id, marker_id)
        if self.config.execute_enabled:
            st.phase = ArPhase.EXECUTE
            st.phase_clock = 0.0
        else:
            st.done = True
        return ev


def init_scene(n_targets: int, condition: ArCondition, seed: int,
               config: ArConfig | None = None,
               marker_ids: list[int] | None = None) -> ArLoop:
    return ArLoop(n_targets, condition, seed, config, marker_ids)


def event_csv_line(event: ArEvent, condition: ArCondition) -> str:
    """`t,event,{cursor|target_id|condition},detail` log line."""
    if isinstance(event, PhaseChanged):
        return f"{event.t!r},phase,{condition.value},{event.phase.value}"
    if isinstance(event, CursorMoved):
        detail = f"{event.command.value}{'(clamped)' if event.clamped else ''}"
        return f"{event.t!r},cursor,{event.cursor},{detail}"
    if isinstance(event, TargetConfirmed):
        return f"{event.t!r},confirm,{event.target_id},marker={event.marker_id}"
    if isinstance(event, TimedOut):
        return f"{event.t!r},timeout,{condition.value},decide_limit"
    raise TypeError(f"unknown event {event!r}")
