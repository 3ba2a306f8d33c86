// Geometry for the target lane and the lift-dwell progress ring.

export interface Block {
  x: number; // center, canvas px
  y: number;
  size: number;
  highlighted: boolean;
  swayOffset: number; // px, applied to the highlighted block
}

/**
 * Lay out n target blocks across the lane. The highlighted (cursor) block
 * is shifted by sway_x, expressed as a fraction of inter-target spacing,
 * matching the simulator's convention.
 */
export function targetLane(
  n: number,
  cursor: number,
  swayX: number,
  width: number,
  y: number,
  blockSize = 56,
): Block[] {
  const spacing = width / (n + 1);
  const blocks: Block[] = [];
  for (let i = 0; i < n; i++) {
    const highlighted = i === cursor;
    blocks.push({
      x: spacing * (i + 1) + (highlighted ? swayX * spacing : 0),
      y,
      size: blockSize,
      highlighted,
      swayOffset: highlighted ? swayX * spacing : 0,
    });
  }
  return blocks;
}

/**
 * Lift-confirm progress in [0,1], derived from snapshot times: the ring
 * fills over the confirm dwell once the phase enters confirm.
 */
export function dwellProgress(
  confirmEnteredAt: number | null,
  now: number,
  dwellSeconds = 3.0,
  entryCredit = 0.4,
): number {
  if (confirmEnteredAt === null) return 0;
  const held = now - confirmEnteredAt + entryCredit;
  return Math.max(0, Math.min(1, held / dwellSeconds));
}

export interface RingArc {
  startAngle: number;
  endAngle: number;
}

/** Arc for a progress ring that starts at 12 o'clock and fills clockwise. */
export function ringArc(progress: number): RingArc {
  const start = -Math.PI / 2;
  return { startAngle: start, endAngle: start + 2 * Math.PI * progress };
}
