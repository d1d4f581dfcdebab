"""Round-based human-in-the-loop orchestration.

A project is a directory: ``project.json`` plus ``images/`` and per-round
``rounds/<n>/{proposals,corrections,events,report.json}``. Every mutating
operation persists synchronously (atomic rename), so reloading from disk at
any point reproduces the in-memory state.

Edit logs are the source of truth for corrections: the stored final mask is
derived by replaying the log over the proposal and is verified on submit.
Brush semantics (shared verbatim with any client): a pixel is painted iff
its center lies strictly within ``radius_px`` of the stroke polyline;
``add`` sets 1, ``erase`` sets 0, events apply in ``seq`` order.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, asdict

import numpy as np

from .evaluation import dice
from .presegment import (
    BuiltinBackend,
    ExternalBackend,
    FitGrid,
    VesselnessParams,
    fit_on_corrections,
    propose,
)
from .raster import (
    GrayImage,
    Mask,
    read_image,
    read_mask,
    write_image,
    write_mask,
    write_probability,
)

HITL_SCHEMA = "hitl/1"
IDLE_CAP_MS = 30_000


class ReplayMismatch(ValueError):
    """Submitted final mask does not equal the replay of its event log."""


class RevisionConflict(ValueError):
    """Stale revision: another writer touched the image first."""


class RoundError(ValueError):
    """Round lifecycle violation (unfinalized predecessor, wrong status...)."""


@dataclass(frozen=True)
class EditEvent:
    seq: int
    t_ms: int
    tool: str                    # "add" | "erase"
    radius_px: float             # >= 1
    path: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {"seq": self.seq, "t_ms": self.t_ms, "tool": self.tool,
                "radius_px": self.radius_px,
                "path": [[float(x), float(y)] for x, y in self.path]}

    @staticmethod
    def from_dict(d: dict) -> "EditEvent":
        return EditEvent(seq=int(d["seq"]), t_ms=int(d["t_ms"]), tool=d["tool"],
                         radius_px=float(d["radius_px"]),
                         path=tuple((float(x), float(y)) for x, y in d["path"]))


@dataclass
class ImageRecord:
    id: str
    path: str
    cohort: str = ""
    view: str = "standard"       # "standard" | "ultrawide"
    gt_path: str | None = None


@dataclass
class RoundState:
    number: int
    image_ids: list[str]
    status: dict[str, str]                 # proposed | in_progress | corrected
    fitted_params: dict | None = None
    report: dict | None = None
    finalized: bool = False


@dataclass
class ProjectConfig:
    stop_dice: float = 0.95
    initial_threshold: float = 0.10
    initial_scales: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)


def _backend_to_dict(b) -> dict:
    if isinstance(b, BuiltinBackend):
        return {"kind": b.kind, "params": {"scales": list(b.params.scales),
                                           "beta": b.params.beta,
                                           "threshold": b.params.threshold}}
    return {"kind": b.kind, "url": b.url, "auth_header": b.auth_header,
            "timeout_s": b.timeout_s, "threshold": b.threshold}


def _backend_from_dict(d: dict):
    if d["kind"] == "builtin-vesselness":
        p = d["params"]
        return BuiltinBackend(params=VesselnessParams(
            scales=tuple(p["scales"]), beta=p["beta"], threshold=p["threshold"]))
    return ExternalBackend(url=d["url"], auth_header=d.get("auth_header"),
                           timeout_s=d.get("timeout_s", 30.0),
                           threshold=d.get("threshold", 0.5))


class Project:
    """On-disk HITL project; all mutations persist before returning."""

    def __init__(self, dirpath, project_id: str, config: ProjectConfig | None = None,
                 backend=None):
        self.dir = os.path.abspath(dirpath)
        self.id = project_id
        self.config = config or ProjectConfig()
        self.backend = backend or BuiltinBackend(params=VesselnessParams(
            scales=self.config.initial_scales,
            threshold=self.config.initial_threshold))
        self.images: dict[str, ImageRecord] = {}
        self.rounds: list[RoundState] = []
        self.revisions: dict[str, int] = {}

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": HITL_SCHEMA,
            "id": self.id,
            "config": asdict(self.config) | {
                "initial_scales": list(self.config.initial_scales)},
            "backend": _backend_to_dict(self.backend),
            "images": [asdict(r) for r in self.images.values()],
            "rounds": [asdict(r) for r in self.rounds],
            "revisions": dict(self.revisions),
        }

    def save(self) -> None:
        os.makedirs(self.dir, exist_ok=True)
        payload = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.dir, suffix=".tmp")
        with os.fdopen(fd, "w") as f:
            f.write(payload)
        os.replace(tmp, os.path.join(self.dir, "project.json"))

    @staticmethod
    def load(dirpath) -> "Project":
        with open(os.path.join(dirpath, "project.json")) as f:
            doc = json.load(f)
        if doc.get("schema") != HITL_SCHEMA:
            raise ValueError(f"unsupported project schema {doc.get('schema')!r}")
        cfg = ProjectConfig(stop_dice=doc["config"]["stop_dice"],
                            initial_threshold=doc["config"]["initial_threshold"],
                            initial_scales=tuple(doc["config"]["initial_scales"]))
        p = Project(dirpath, doc["id"], cfg, _backend_from_dict(doc["backend"]))
        for r in doc["images"]:
            p.images[r["id"]] = ImageRecord(**r)
        for r in doc["rounds"]:
            p.rounds.append(RoundState(
                number=r["number"], image_ids=list(r["image_ids"]),
                status=dict(r["status"]), fitted_params=r["fitted_params"],
                report=r["report"], finalized=r["finalized"]))
        p.revisions = {k: int(v) for k, v in doc["revisions"].items()}
        return p

    # -- registry ---------------------------------------------------------

    def register_image(self, image_id: str, image: GrayImage, cohort: str = "",
                       view: str = "standard", gt_mask: Mask | None = None) -> None:
        if image_id in self.images:
            raise ValueError(f"image {image_id!r} already registered")
        os.makedirs(os.path.join(self.dir, "images"), exist_ok=True)
        rel = os.path.join("images", f"{image_id}.png")
        write_image(image, os.path.join(self.dir, rel))
        gt_rel = None
        if gt_mask is not None:
            gt_rel = os.path.join("images", f"{image_id}.gt.png")
            write_mask(gt_mask, os.path.join(self.dir, gt_rel))
        self.images[image_id] = ImageRecord(id=image_id, path=rel, cohort=cohort,
                                            view=view, gt_path=gt_rel)
        self.revisions[image_id] = 0
        self.save()

    def image(self, image_id: str) -> GrayImage:
        return read_image(os.path.join(self.dir, self.images[image_id].path))

    def ground_truth(self, image_id: str) -> Mask:
        rec = self.images[image_id]
        if not rec.gt_path:
            raise ValueError(f"image {image_id!r} has no registered ground truth")
        return read_mask(os.path.join(self.dir, rec.gt_path))

    # -- round helpers ----------------------------------------------------

    def _round(self, number: int) -> RoundState:
        for r in self.rounds:
            if r.number == number:
                return r
        raise RoundError(f"no round {number}")

    def current_round(self) -> RoundState:
        if not self.rounds:
            raise RoundError("no rounds started")
        return self.rounds[-1]

    def round_dir(self, number: int) -> str:
        return os.path.join(self.dir, "rounds", str(number))

    def round_of_image(self, image_id: str) -> RoundState:
        for r in self.rounds:
            if image_id in r.image_ids:
                return r
        raise RoundError(f"image {image_id!r} is not assigned to any round")

    def proposal(self, image_id: str) -> Mask:
        r = self.round_of_image(image_id)
        return read_mask(os.path.join(self.round_dir(r.number), "proposals",
                                      f"{image_id}.png"))

    def correction(self, image_id: str) -> Mask:
        r = self.round_of_image(image_id)
        return read_mask(os.path.join(self.round_dir(r.number), "corrections",
                                      f"{image_id}.png"))

    def events_path(self, image_id: str) -> str:
        r = self.round_of_image(image_id)
        return os.path.join(self.round_dir(r.number), "events", f"{image_id}.json")

    def event_log(self, image_id: str) -> dict:
        path = self.events_path(image_id)
        if not os.path.exists(path):
            return {"schema": HITL_SCHEMA, "image_id": image_id, "events": [],
                    "client_active_ms": None, "server_active_ms": None}
        with open(path) as f:
            return json.load(f)

    def _write_event_log(self, image_id: str, doc: dict) -> None:
        path = self.events_path(image_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        with os.fdopen(fd, "w") as f:
            json.dump(doc, f, indent=1)
        os.replace(tmp, path)

    def append_events(self, image_id: str, events: list[EditEvent],
                      revision: int) -> int:
        """Append validated events to the image's log; returns new revision."""
        if self.revisions.get(image_id) != revision:
            raise RevisionConflict(
                f"stale revision {revision} for {image_id!r} "
                f"(current {self.revisions.get(image_id)})")
        r = self.round_of_image(image_id)
        if r.finalized:
            raise RoundError(f"round {r.number} is finalized")
        doc = self.event_log(image_id)
        prev_seq = doc["events"][-1]["seq"] if doc["events"] else -1
        img_rec = self.images[image_id]
        img = self.image(image_id)
        _validate_events(events, img.width, img.height, prev_seq)
        doc["events"].extend(e.to_dict() for e in events)
        self._write_event_log(image_id, doc)
        if r.status[image_id] == "proposed":
            r.status[image_id] = "in_progress"
        self.revisions[image_id] = revision + 1
        self.save()
        return self.revisions[image_id]


def _validate_events(events, width, height, prev_seq=-1):
    last = prev_seq
    for e in events:
        if e.tool not in ("add", "erase"):
            raise ValueError(f"unknown tool {e.tool!r}")
        if e.radius_px < 1:
            raise ValueError("radius must be >= 1 px")
        if not e.path:
            raise ValueError("empty stroke path")
        if e.seq <= last:
            raise ValueError(f"non-monotone seq {e.seq} after {last}")
        last = e.seq
        for x, y in e.path:
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise ValueError(f"out-of-bounds stroke point ({x}, {y})")


def _stamp(bits: np.ndarray, path, radius: float, value: int) -> None:
    h, w = bits.shape
    r2 = radius * radius
    pts = [(float(x), float(y)) for x, y in path]
    segs = list(zip(pts, pts[1:])) if len(pts) > 1 else [(pts[0], pts[0])]
    for (ax, ay), (bx, by) in segs:
        x0 = max(0, int(math.floor(min(ax, bx) - radius)))
        x1 = min(w - 1, int(math.ceil(max(ax, bx) + radius)))
        y0 = max(0, int(math.floor(min(ay, by) - radius)))
        y1 = min(h - 1, int(math.ceil(max(ay, by) + radius)))
        if x1 < x0 or y1 < y0:
            continue
        xx, yy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))
        abx, aby = bx - ax, by - ay
        denom = abx * abx + aby * aby
        if denom > 0:
            t = np.clip(((xx - ax) * abx + (yy - ay) * aby) / denom, 0.0, 1.0)
        else:
            t = 0.0
        cx = ax + t * abx
        cy = ay + t * aby
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 < r2
        region = bits[y0:y1 + 1, x0:x1 + 1]
        region[inside] = value


def apply_events(proposal: Mask, events: list[EditEvent]) -> Mask:
    """Deterministic replay of an edit log over a proposal mask."""
    _validate_events(events, proposal.width, proposal.height)
    bits = proposal.bits.copy()
    for e in events:
        _stamp(bits, e.path, e.radius_px, 1 if e.tool == "add" else 0)
    return Mask(bits)


def server_active_ms(events: list[EditEvent], idle_cap_ms: int = IDLE_CAP_MS) -> int:
    """Sum of inter-event gaps, each capped at the idle cutoff."""
    total = 0
    for a, b in zip(events, events[1:]):
        total += min(max(b.t_ms - a.t_ms, 0), idle_cap_ms)
    return total


def start_round(project: Project, image_ids: list[str]) -> RoundState:
    """Propose on every image with the current backend and open a new round."""
    if not image_ids:
        raise RoundError("empty image id list")
    if project.rounds and not project.rounds[-1].finalized:
        raise RoundError(f"round {project.rounds[-1].number} is not finalized")
    assigned = {i for r in project.rounds for i in r.image_ids}
    for i in image_ids:
        if i not in project.images:
            raise RoundError(f"unknown image id {i!r}")
        if i in assigned:
            raise RoundError(f"image {i!r} already assigned to a round")
    if len(set(image_ids)) != len(image_ids):
        raise RoundError("duplicate image ids")

    number = len(project.rounds) + 1
    rdir = project.round_dir(number)
    os.makedirs(os.path.join(rdir, "proposals"), exist_ok=True)
    os.makedirs(os.path.join(rdir, "corrections"), exist_ok=True)
    os.makedirs(os.path.join(rdir, "events"), exist_ok=True)
    for i in image_ids:
        grid, mask = propose(project.image(i), project.backend)
        write_mask(mask, os.path.join(rdir, "proposals", f"{i}.png"))
        write_probability(grid, os.path.join(rdir, "proposals", f"{i}.vprb"))
    state = RoundState(number=number, image_ids=list(image_ids),
                       status={i: "proposed" for i in image_ids})
    project.rounds.append(state)
    project.save()
    return state


def submit_correction(project: Project, image_id: str, events: list[EditEvent],
                      final_mask: Mask, active_ms: int,
                      revision: int | None = None) -> dict:
    """Store a correction after verifying the event-log replay matches it."""
    r = project.round_of_image(image_id)
    if r.finalized:
        raise RoundError(f"round {r.number} is finalized")
    if r is not project.current_round():
        raise RoundError(f"image {image_id!r} is not in the current round")
    if revision is not None and project.revisions.get(image_id) != revision:
        raise RevisionConflict(
            f"stale revision {revision} for {image_id!r} "
            f"(current {project.revisions.get(image_id)})")
    proposal = project.proposal(image_id)
    replayed = apply_events(proposal, events)
    if not np.array_equal(replayed.bits, final_mask.bits):
        raise ReplayMismatch(
            f"replay mismatch for {image_id!r}: event log does not reproduce "
            f"the submitted mask")
    doc = {
        "schema": HITL_SCHEMA,
        "image_id": image_id,
        "events": [e.to_dict() for e in events],
        "client_active_ms": int(active_ms),
        "server_active_ms": server_active_ms(events),
    }
    project._write_event_log(image_id, doc)
    write_mask(final_mask, os.path.join(project.round_dir(r.number), "corrections",
                                        f"{image_id}.png"))
    r.status[image_id] = "corrected"
    project.revisions[image_id] = project.revisions.get(image_id, 0) + 1
    project.save()
    return doc


def finalize_round(project: Project, round_n: int,
                   fit_grid: FitGrid | None = None) -> dict:
    """Close a round: report, cumulative refit, convergence flag."""
    r = project._round(round_n)
    if r.finalized:
        raise RoundError(f"round {round_n} already finalized")
    pending = [i for i in r.image_ids if r.status[i] != "corrected"]
    if pending:
        raise RoundError(f"round {round_n} incomplete: {pending} not corrected")

    dices, pixels, actives = [], [], []
    for i in r.image_ids:
        prop = project.proposal(i)
        corr = project.correction(i)
        dices.append(dice(prop, corr))
        pixels.append(int((prop.bits != corr.bits).sum()))
        actives.append(project.event_log(i).get("server_active_ms") or 0)
    report = {
        "round": round_n,
        "n_images": len(r.image_ids),
        "mean_dice_proposal_vs_corrected": float(np.mean(dices)),
        "mean_active_seconds": float(np.mean(actives)) / 1000.0,
        "mean_pixels_changed": float(np.mean(pixels)),
        "converged": bool(np.mean(dices) >= project.config.stop_dice),
    }

    if isinstance(project.backend, BuiltinBackend):
        pairs = []
        for past in project.rounds:
            if past.number > round_n:
                continue
            for i in past.image_ids:
                if past.status[i] == "corrected":
                    pairs.append((project.image(i), project.correction(i)))
        fit = fit_on_corrections(pairs, fit_grid or FitGrid())
        r.fitted_params = {"scales": list(fit.params.scales),
                           "beta": fit.params.beta,
                           "threshold": fit.params.threshold,
                           "training_mean_dice": fit.mean_dice,
                           "n_pairs": fit.n_pairs}
        project.backend = BuiltinBackend(params=fit.params)
    r.report = report
    r.finalized = True
    rdir = project.round_dir(round_n)
    with open(os.path.join(rdir, "report.json"), "w") as f:
        json.dump(report, f, indent=1)
    project.save()
    return report


def _runs_from_diff(diff: np.ndarray):
    """Horizontal runs of set pixels as (y, x0, x1) triples."""
    runs = []
    for y in np.nonzero(diff.any(axis=1))[0]:
        row = diff[y].astype(np.int8)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], row, [0]])))
        for x0, x1 in zip(edges[::2], edges[1::2]):
            runs.append((int(y), int(x0), int(x1 - 1)))
    return runs


def simulate_annotator(project: Project, fidelity: float, seed: int) -> dict:
    """Machine stand-in for the human: blend ground truth into proposals.

    fidelity 1 corrects every disagreeing pixel to ground truth; fidelity 0
    accepts the proposal untouched. The edit log is synthesized as one
    radius-1 stroke per horizontal run of changed pixels, so the replayed
    correction matches the blend exactly.
    """
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("fidelity must lie in [0, 1]")
    r = project.current_round()
    stats = {"round": r.number, "images": {}}
    for idx, image_id in enumerate(r.image_ids):
        if r.status[image_id] == "corrected":
            continue
        gt = project.ground_truth(image_id)
        proposal = project.proposal(image_id)
        rng = np.random.default_rng([seed, r.number, idx])
        diff = gt.bits != proposal.bits
        adopt = diff & (rng.random(diff.shape) < fidelity)
        target = proposal.bits.copy()
        target[adopt] = gt.bits[adopt]

        events = []
        seq = 0
        t_ms = 0
        for value, tool in ((1, "add"), (0, "erase")):
            changed = adopt & (target == value)
            for y, x0, x1 in _runs_from_diff(changed):
                events.append(EditEvent(seq=seq, t_ms=t_ms, tool=tool,
                                        radius_px=1.0,
                                        path=((float(x0), float(y)),
                                              (float(x1), float(y)))))
                seq += 1
                t_ms += 150
        final = Mask(target)
        submit_correction(project, image_id, events, final,
                          active_ms=t_ms)
        stats["images"][image_id] = {"pixels_changed": int(adopt.sum()),
                                     "events": len(events)}
    return stats
