#!/usr/bin/env python3
"""Regenerate the shared client/server replay fixtures.

Writes a proposal mask, a set of edit logs with varied tools/radii/paths
(including float coordinates), and the server-side replay result for each,
into frontend/tests/fixtures/. The frontend parity suite asserts zero pixel
differences against these.
"""
import json
import os

import numpy as np

from chorovessel.hitl import EditEvent, apply_events
from chorovessel.raster import Mask, write_mask
from chorovessel.synth import TreeSpec, generate

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "frontend", "tests",
                        "fixtures")


def main():
    os.makedirs(FIXTURES, exist_ok=True)
    spec = TreeSpec(width=96, height=96, root=(12.0, 48.0), generations=2,
                    length_range=(32.0, 36.0), branch_angles_deg=(33.0, -33.0),
                    root_width=7.0, taper=0.8, seed=12)
    proposal, _, _ = generate(spec)
    write_mask(proposal, os.path.join(FIXTURES, "proposal.png"))

    rng = np.random.default_rng(2024)
    n_logs = 12
    for k in range(n_logs):
        events = []
        for seq in range(int(rng.integers(1, 7))):
            n_pts = int(rng.integers(1, 6))
            path = [[round(float(rng.uniform(0, 95)), 3),
                     round(float(rng.uniform(0, 95)), 3)] for _ in range(n_pts)]
            events.append(EditEvent(
                seq=seq, t_ms=seq * 140,
                tool="add" if rng.random() < 0.55 else "erase",
                radius_px=float(rng.choice([1.0, 2.0, 3.0, 5.0, 8.0])),
                path=tuple((x, y) for x, y in path)))
        result = apply_events(proposal, events)
        with open(os.path.join(FIXTURES, f"log_{k:02d}.json"), "w") as f:
            json.dump({"schema": "hitl/1", "events": [e.to_dict() for e in events]},
                      f, indent=1)
        write_mask(result, os.path.join(FIXTURES, f"expected_{k:02d}.png"))
    print(f"wrote proposal + {n_logs} golden logs to {FIXTURES}")


if __name__ == "__main__":
    main()
