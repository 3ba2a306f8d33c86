#!/usr/bin/env python3
"""Regenerate the frontend's forward-kinematics golden fixture.

The console re-implements the DH chain in TypeScript for its 2-D arm
view; this fixture pins both implementations to the same numbers."""

import json
from pathlib import Path

import numpy as np

from bcigrasp.arm import DEFAULT_DH, OBSERVE_JOINTS, ArmModel, link_positions

CASES = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [float(q) for q in OBSERVE_JOINTS],
    [0.3, -0.8, 1.2, 0.4, -1.1, 0.7],
    [-1.0, 1.5, -0.5, 2.0, 1.0, -2.0],
]


def main():
    model = ArmModel()
    fixture = {
        "dh": [[r.a_mm, r.alpha_rad, r.d_mm, r.theta_offset_rad] for r in DEFAULT_DH],
        "cases": [
            {
                "joints": joints,
                "link_positions": np.round(link_positions(joints, model), 9).tolist(),
            }
            for joints in CASES
        ],
    }
    out = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "arm_fk.json"
    path.write_text(json.dumps(fixture, indent=2) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
