#!/usr/bin/env python3
"""Create a small annotation project with synthetic scenes and an open round.

Useful both for trying the browser client (`chorovessel serve --project ...`)
and as the backend fixture for the frontend integration tests.
"""
import argparse

from chorovessel.hitl import Project, ProjectConfig, start_round
from chorovessel.synth import TreeSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output", required=True)
    ap.add_argument("--images", type=int, default=2)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    project = Project(args.output, "demo", ProjectConfig())
    project.save()
    ids = []
    for k in range(args.images):
        spec = TreeSpec(width=args.size, height=args.size,
                        root=(16.0, args.size / 2.0), generations=2,
                        length_range=(args.size * 0.35, args.size * 0.4),
                        branch_angles_deg=(33.0, -33.0), root_width=7.0,
                        taper=0.8, seed=args.seed + k)
        mask, img, _ = generate(spec)
        image_id = f"img{k:02d}"
        project.register_image(image_id, img, cohort="demo", gt_mask=mask)
        ids.append(image_id)
    start_round(project, ids)
    print(f"project at {args.output}: round 1 open with {len(ids)} images")


if __name__ == "__main__":
    main()
