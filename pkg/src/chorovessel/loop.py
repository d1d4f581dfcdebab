"""End-to-end simulated HITL runs (the `loop-sim` driver).

Each run builds a throwaway project of synthetic scenes, then plays the
paper-style loop: propose, correct (simulated annotator), finalize, refit.
Round composition mirrors the study design: early rounds see only standard
narrow-vessel fields, later rounds mix in wide-caliber ultrawide-style
scenes, so every refit has genuinely new morphology to learn and proposal
quality improves round over round.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .hitl import Project, ProjectConfig, finalize_round, simulate_annotator, start_round
from .presegment import FitGrid
from .synth import TreeSpec, generate


@dataclass(frozen=True)
class LoopSpec:
    rounds: int = 3
    fidelity: float = 1.0
    canvas: int = 256
    narrow_width: float = 5.0
    wide_width: float = 14.0
    per_round: int = 4


def _scene_spec(seed: int, canvas: int, width: float, kind_seed: int) -> TreeSpec:
    return TreeSpec(
        width=canvas, height=canvas,
        root=(24.0, canvas / 2.0), heading_deg=0.0,
        generations=2, length_range=(canvas * 0.28, canvas * 0.34),
        branch_angles_deg=(33.0, -33.0),
        root_width=width, taper=0.8,
        wiggle_amp=1.5, wiggle_period=90.0,
        seed=seed * 1000 + kind_seed,
    )


def _round_plan(spec: LoopSpec, round_n: int) -> list[tuple[str, float]]:
    """(view, width) recipe per image; round 1 narrow-only, later mixed."""
    half = spec.per_round // 2
    if round_n == 1:
        return [("standard", spec.narrow_width)] * spec.per_round
    return ([("standard", spec.narrow_width)] * half
            + [("ultrawide", spec.wide_width)] * (spec.per_round - half))


def run_loop_sim(output_dir, seed: int, spec: LoopSpec = LoopSpec(),
                 fit_grid: FitGrid | None = None) -> list[dict]:
    """Run the full multi-round loop; returns the per-round finalize reports."""
    project = Project(output_dir, f"loop-sim-{seed}", ProjectConfig())
    project.save()
    reports = []
    counter = 0
    for round_n in range(1, spec.rounds + 1):
        ids = []
        for view, width in _round_plan(spec, round_n):
            scene_seed = seed * 10_000 + counter
            mask, img, _ = generate(_scene_spec(scene_seed, spec.canvas, width,
                                                counter))
            image_id = f"r{round_n}_{counter:03d}"
            project.register_image(image_id, img, cohort="sim", view=view,
                                   gt_mask=mask)
            ids.append(image_id)
            counter += 1
        start_round(project, ids)
        simulate_annotator(project, spec.fidelity, seed=seed)
        reports.append(finalize_round(project, round_n, fit_grid))
    with open(os.path.join(output_dir, "loop_report.json"), "w") as f:
        json.dump({"seed": seed, "rounds": reports}, f, indent=1)
    return reports
