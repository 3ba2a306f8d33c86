// Minimal forward kinematics for the 2-D arm view. The link table arrives
// in the session echo, so this stays in lockstep with the simulator
// (pinned by the shared golden fixture in tests).

export type DhRow = [number, number, number, number]; // a, alpha, d, theta_offset

type Mat4 = number[]; // row-major 16

function matMul(a: Mat4, b: Mat4): Mat4 {
  const out = new Array(16).fill(0);
  for (let i = 0; i < 4; i++)
    for (let j = 0; j < 4; j++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[i * 4 + k] * b[k * 4 + j];
      out[i * 4 + j] = s;
    }
  return out;
}

function dhMatrix(theta: number, [a, alpha, d]: DhRow): Mat4 {
  const ct = Math.cos(theta), st = Math.sin(theta);
  const ca = Math.cos(alpha), sa = Math.sin(alpha);
  return [
    ct, -st * ca, st * sa, a * ct,
    st, ct * ca, -ct * sa, a * st,
    0, sa, ca, d,
    0, 0, 0, 1,
  ];
}

const IDENTITY: Mat4 = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];

/** Positions of the base and every link origin, millimeters, base frame. */
export function linkPositions(joints: number[], dh: DhRow[]): [number, number, number][] {
  let m = IDENTITY;
  const pts: [number, number, number][] = [[0, 0, 0]];
  for (let i = 0; i < dh.length; i++) {
    m = matMul(m, dhMatrix(joints[i] + dh[i][3], dh[i]));
    pts.push([m[3], m[7], m[11]]);
  }
  return pts;
}

export interface SideViewPoint {
  x: number; // canvas px
  y: number;
}

/**
 * Project link positions onto a side view (radial distance vs height):
 * x = horizontal distance from the base axis (signed by base yaw so the
 * arm swings visibly), y = height. Scaled into a canvas box.
 */
export function sideView(
  points: [number, number, number][],
  width: number,
  height: number,
  reachMm = 700,
): SideViewPoint[] {
  const scale = Math.min(width, height) / (2 * reachMm) * 1.8;
  const originX = width / 2;
  const originY = height - 16;
  return points.map(([x, y, z]) => {
    const radial = Math.hypot(x, y) * Math.sign(x || 1);
    return { x: originX + radial * scale, y: originY - z * scale };
  });
}
