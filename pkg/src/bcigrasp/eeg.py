"""Synthetic 14-channel, 128 Hz EEG with command-dependent rhythm attenuation.

Signal model per channel: streamed 1/f ("pink") noise plus mu- and
beta-band sinusoids with per-channel random phase. Issuing a motor
command attenuates rhythm amplitude on that command's channel group,
which shows up as a bandpower drop relative to baseline. A congruent
visual-feedback flag can deepen the attenuation via the subject's
sway gain.

Generation is deterministic per (inputs, seed) and block-size invariant:
streaming a trial in chunks yields bit-identical samples to one-shot
generation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

FS_HZ = 128
CHANNELS = (
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
    "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
)
N_CHANNELS = len(CHANNELS)

MU_HZ = 10.0
BETA_HZ = 14.0


class Command(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    LIFT = "lift"
    NEUTRAL = "neutral"


# Contralateral convention: imagining left-hand movement attenuates
# right-hemisphere sensors and vice versa; lift uses both central sites.
# The headset layout has no true central row, so the frontocentral pair
# stands in. This assignment is a convention of the simulator.
COMMAND_GROUPS: dict[Command, tuple[str, ...]] = {
    Command.LEFT: ("FC6", "F4"),
    Command.RIGHT: ("FC5", "F3"),
    Command.LIFT: ("FC5", "FC6"),
}
GROUP_INDICES = {
    cmd: np.array([CHANNELS.index(ch) for ch in chs]) for cmd, chs in COMMAND_GROUPS.items()
}

# Mirror map swapping hemispheres (used by symmetry tests).
MIRROR_PAIRS = (("AF3", "AF4"), ("F7", "F8"), ("F3", "F4"), ("FC5", "FC6"),
                ("T7", "T8"), ("P7", "P8"), ("O1", "O2"))


class RepsOutOfRange(Exception):
    pass


class Phase(enum.IntEnum):
    BASELINE = 0
    MI = 1
    NEUTRAL = 2


PHASE_NAMES = {Phase.BASELINE: "baseline", Phase.MI: "mi", Phase.NEUTRAL: "neutral"}


@dataclass(frozen=True)
class TrialTimeline:
    baseline_s: float = 2.0
    mi_s: float = 10.0
    neutral_s: float = 5.0

    def __post_init__(self):
        if min(self.baseline_s, self.mi_s, self.neutral_s) <= 0:
            raise ValueError("all phases must have positive duration")

    @property
    def total_s(self) -> float:
        return self.baseline_s + self.mi_s + self.neutral_s

    def phase_of(self, t: float) -> Phase:
        if t < self.baseline_s:
            return Phase.BASELINE
        if t < self.baseline_s + self.mi_s:
            return Phase.MI
        return Phase.NEUTRAL


@dataclass(frozen=True)
class SubjectProfile:
    """Synthetic-subject parameters.

    erd_depth is the fractional rhythm-power drop while a command is
    held; sway_gain scales that drop whenever feedback is congruent
    with the commanded direction (effective depth erd_depth*(1+g),
    capped below 1).
    """

    erd_depth: float = 0.30
    noise_floor_uv: float = 2.0
    sway_gain: float = 0.0
    mu_amp_uv: float = 6.0
    beta_amp_uv: float = 4.0
    erd_cap: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.erd_depth < 1.0:
            raise ValueError("erd_depth must be in [0,1)")
        if not 0.0 <= self.sway_gain <= 2.0:
            raise ValueError("sway_gain must be in [0,2]")
        if self.noise_floor_uv < 0:
            raise ValueError("noise floor must be >= 0")

    def effective_depth(self, congruent: bool) -> float:
        d = self.erd_depth * (1.0 + self.sway_gain) if congruent else self.erd_depth
        return min(d, self.erd_cap)


@dataclass(frozen=True)
class EegFrame:
    timestamp: float
    samples: np.ndarray  # (14,) microvolts

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (N_CHANNELS,):
            raise ValueError(f"frame needs {N_CHANNELS} channels")
        object.__setattr__(self, "samples", s)


@dataclass
class EegTrial:
    """One trial as dense arrays: t (n,), samples (n, 14) uV, phase (n,)."""

    t: np.ndarray
    samples: np.ndarray
    phase: np.ndarray
    command: Command
    fs: int = FS_HZ

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def phase_slice(self, phase: Phase) -> np.ndarray:
        return self.samples[self.phase == int(phase)]

    def frames(self):
        for i in range(self.n_samples):
            yield EegFrame(float(self.t[i]), self.samples[i])


# --- pink noise ---------------------------------------------------------
# Three-pole pinking filter (parallel first-order sections plus a direct
# term); poles chosen to give ~1/f slope across 0.05-12 Hz at fs=128.
_PINK_POLES = np.array([0.99765, 0.96300, 0.57000])
_PINK_GAINS = np.array([0.0990460, 0.2965164, 1.0526913])
_PINK_DIRECT = 0.1848


def _pink_ba() -> tuple[np.ndarray, np.ndarray]:
    a = np.poly(_PINK_POLES)  # (1 - p z^-1) products
    b = _PINK_DIRECT * a
    for i in range(3):
        others = np.poly(np.delete(_PINK_POLES, i))
        b[:3] += _PINK_GAINS[i] * others
    return b, a


_PINK_B, _PINK_A = _pink_ba()


def _pink_stationary_std() -> float:
    # exact stationary variance for unit-variance white input:
    # sum_ij qi qj /(1-pi pj) + 2 d sum_i qi + d^2
    p, q, d = _PINK_POLES, _PINK_GAINS, _PINK_DIRECT
    var = float(sum(q[i] * q[j] / (1 - p[i] * p[j]) for i in range(3) for j in range(3)))
    var += 2 * d * float(q.sum()) + d * d
    return float(np.sqrt(var))


_PINK_STD = _pink_stationary_std()


class EegStream:
    """Stateful block generator; block partitioning never changes samples."""

    def __init__(self, profile: SubjectProfile, seed: int, fs: int = FS_HZ):
        self.profile = profile
        self.fs = fs
        self.rng = np.random.default_rng(seed)
        self.rhythm_phases = self.rng.uniform(0.0, 2 * np.pi, size=(2, N_CHANNELS))
        self._zi = np.zeros((len(_PINK_A) - 1, N_CHANNELS))
        self._idx = 0  # absolute sample index

    def generate(self, n_samples: int, command: Command = Command.NEUTRAL,
                 congruent: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Return (t, samples) for the next n_samples under one held command."""
        n = int(n_samples)
        white = self.rng.standard_normal((n, N_CHANNELS))
        pink, self._zi = sps.lfilter(_PINK_B, _PINK_A, white, axis=0, zi=self._zi)
        pink *= self.profile.noise_floor_uv / _PINK_STD

        t = (self._idx + np.arange(n)) / self.fs
        self._idx += n

        amp = np.ones(N_CHANNELS)
        if command is not Command.NEUTRAL:
            depth = self.profile.effective_depth(congruent)
            amp[GROUP_INDICES[command]] = np.sqrt(1.0 - depth)
        mu = self.profile.mu_amp_uv * np.sin(
            2 * np.pi * MU_HZ * t[:, None] + self.rhythm_phases[0]
        )
        beta = self.profile.beta_amp_uv * np.sin(
            2 * np.pi * BETA_HZ * t[:, None] + self.rhythm_phases[1]
        )
        return t, pink + (mu + beta) * amp


def gen_trial(
    command: Command,
    profile: SubjectProfile,
    seed: int,
    timeline: TrialTimeline | None = None,
    congruent: bool = False,
) -> EegTrial:
    """One fixed-timeline trial; rhythm attenuation only inside the MI phase."""
    tl = timeline or TrialTimeline()
    stream = EegStream(profile, seed)
    n_base = round(tl.baseline_s * FS_HZ)
    n_mi = round(tl.mi_s * FS_HZ)
    n_neu = round(tl.neutral_s * FS_HZ)

    t0, s0 = stream.generate(n_base, Command.NEUTRAL)
    t1, s1 = stream.generate(n_mi, command, congruent)
    t2, s2 = stream.generate(n_neu, Command.NEUTRAL)

    t = np.concatenate([t0, t1, t2])
    samples = np.vstack([s0, s1, s2])
    phase = np.concatenate(
        [
            np.full(n_base, int(Phase.BASELINE), dtype=np.int8),
            np.full(n_mi, int(Phase.MI), dtype=np.int8),
            np.full(n_neu, int(Phase.NEUTRAL), dtype=np.int8),
        ]
    )
    return EegTrial(t, samples, phase, command)


@dataclass(frozen=True)
class PlannedTrial:
    index: int
    command: Command
    seed: int


@dataclass
class SessionPlan:
    trials: list[PlannedTrial]
    reps_per_command: int
    rounds: int

    @property
    def mi_trials(self) -> list[PlannedTrial]:
        return [tr for tr in self.trials if tr.command is not Command.NEUTRAL]


def schedule_session(
    commands: list[Command],
    reps_per_command: int = 12,
    rounds: int = 3,
    seed: int = 0,
    neutral_every: int = 3,
) -> SessionPlan:
    """Interleaved training plan: shuffled command repetitions per round with
    a neutral trial inserted after every `neutral_every` command trials."""
    if not 12 <= reps_per_command <= 16:
        raise RepsOutOfRange(f"reps_per_command must be in [12,16], got {reps_per_command}")
    if rounds < 1 or not commands:
        raise ValueError("need at least one round and one command")

    rng = np.random.default_rng(seed)
    per_round = [reps_per_command // rounds] * rounds
    for i in range(reps_per_command % rounds):
        per_round[i] += 1

    ordered: list[Command] = []
    for r in range(rounds):
        block = [cmd for cmd in commands for _ in range(per_round[r])]
        order = rng.permutation(len(block))
        chunk = [block[i] for i in order]
        out: list[Command] = []
        for k, cmd in enumerate(chunk, start=1):
            out.append(cmd)
            if neutral_every and k % neutral_every == 0:
                out.append(Command.NEUTRAL)
        ordered.extend(out)

    seeds = np.random.SeedSequence(seed).spawn(len(ordered))
    trials = [
        PlannedTrial(i, cmd, int(ss.generate_state(1)[0]))
        for i, (cmd, ss) in enumerate(zip(ordered, seeds))
    ]
    return SessionPlan(trials, reps_per_command, rounds)


def export_trial_csv(trial: EegTrial, path) -> None:
    header = "t," + ",".join(f"ch{i + 1}" for i in range(N_CHANNELS)) + ",phase"
    with open(path, "w", newline="") as f:
        f.write(header + "\n")
        for i in range(trial.n_samples):
            vals = ",".join(repr(float(v)) for v in trial.samples[i])
            name = PHASE_NAMES[Phase(int(trial.phase[i]))]
            f.write(f"{repr(float(trial.t[i]))},{vals},{name}\n")


def mirror_permutation() -> list[int]:
    """Channel index permutation that swaps hemispheres."""
    perm = list(range(N_CHANNELS))
    for a, b in MIRROR_PAIRS:
        ia, ib = CHANNELS.index(a), CHANNELS.index(b)
        perm[ia], perm[ib] = ib, ia
    return perm


def mirror_channels(samples: np.ndarray) -> np.ndarray:
    """Swap hemispheres: returns samples with mirrored channel order."""
    return samples[..., mirror_permutation()]
