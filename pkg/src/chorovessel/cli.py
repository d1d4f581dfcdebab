"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 input/usage error, 2 internal error. All stochastic
paths honor --seed, and identical inputs plus seed produce byte-identical
outputs (CSV/JSON/SVG).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

CONFIG_ENV = "CHOROVESSEL_CONFIG"


class _CliError(Exception):
    """Input error: message to stderr, exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _CliError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chorovessel",
                description="Choroidal vessel segmentation workbench")
    p.add_argument("--seed", type=int, default=42, help="global RNG seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-image stages")
    p.add_argument("--config", help="JSON file with parameter overrides "
                                    f"(or set ${CONFIG_ENV})")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    sp = sub.add_parser("preseg", help="image -> probability grid + proposal mask")
    sp.add_argument("--input", required=True, help="input image PNG")
    sp.add_argument("--output-dir", required=True)
    sp.add_argument("--endpoint", help="external segmentation service URL")

    sp = sub.add_parser("graph", help="mask -> vessel graph JSON")
    sp.add_argument("--input", required=True, help="binary mask PNG")
    sp.add_argument("--output", required=True, help="graph JSON path")

    sp = sub.add_parser("metrics", help="mask directory -> per-image metrics CSV")
    sp.add_argument("--input", required=True, help="directory of mask PNGs")
    sp.add_argument("--output", required=True, help="metrics CSV path")

    sp = sub.add_parser("eval", help="prediction/truth directories -> report")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--prob", help="optional directory of .vprb grids")
    sp.add_argument("--output", required=True, help="report JSON path")
    sp.add_argument("--svg", help="optional bar-plot SVG path")
    sp.add_argument("--n-boot", type=int, default=1000)

    sp = sub.add_parser("assoc", help="analysis CSV -> association results")
    sp.add_argument("--input", required=True, help="analysis CSV")
    sp.add_argument("--output", required=True, help="results CSV")
    sp.add_argument("--svg", help="optional forest-plot SVG path")

    sp = sub.add_parser("synth", help="tree spec JSON -> scene bundle")
    sp.add_argument("--spec", required=True, help="TreeSpec JSON file")
    sp.add_argument("--output", required=True, help="bundle directory")

    sp = sub.add_parser("serve", help="project directory -> HTTP API")
    sp.add_argument("--project", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)

    sp = sub.add_parser("loop-sim", help="simulated multi-round HITL run")
    sp.add_argument("--output", required=True, help="project output directory")
    sp.add_argument("--rounds", type=int, default=3)
    sp.add_argument("--fidelity", type=float, default=1.0)
    return p


def _load_config(args) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise _CliError(f"bad config file: {e}")
    if not isinstance(cfg, dict):
        raise _CliError("config must be a JSON object")
    return cfg


def _vesselness_params(cfg: dict):
    from .presegment import VesselnessParams

    kw = {}
    if "scales" in cfg:
        kw["scales"] = tuple(cfg["scales"])
    if "beta" in cfg:
        kw["beta"] = cfg["beta"]
    if "threshold" in cfg:
        kw["threshold"] = cfg["threshold"]
    return VesselnessParams(**kw)


def _png_ids(dirpath) -> list[str]:
    try:
        names = sorted(f[:-4] for f in os.listdir(dirpath) if f.endswith(".png"))
    except OSError as e:
        raise _CliError(str(e))
    if not names:
        raise _CliError(f"no PNG files in {dirpath}")
    return names


def cmd_preseg(args, cfg) -> int:
    from .presegment import BuiltinBackend, ExternalBackend, propose
    from .raster import read_image, write_mask, write_probability

    img = read_image(args.input)
    if args.endpoint:
        backend = ExternalBackend(url=args.endpoint,
                                  auth_header=cfg.get("auth_header"),
                                  threshold=cfg.get("threshold", 0.5))
    else:
        backend = BuiltinBackend(params=_vesselness_params(cfg))
    grid, mask = propose(img, backend)
    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    write_probability(grid, os.path.join(args.output_dir, f"{stem}.vprb"))
    write_mask(mask, os.path.join(args.output_dir, f"{stem}.mask.png"))
    print(f"wrote {stem}.vprb and {stem}.mask.png to {args.output_dir}")
    return 0


def cmd_graph(args, cfg) -> int:
    from .raster import read_mask
    from .vesselgraph import build_graph, graph_to_json, skeletonize

    graph = build_graph(skeletonize(read_mask(args.input)),
                        prune_len=cfg.get("prune_len", 3.0))
    with open(args.output, "w") as f:
        f.write(graph_to_json(graph))
    print(f"wrote {args.output}: {len(graph.nodes)} nodes, "
          f"{len(graph.edges)} edges")
    return 0


def cmd_metrics(args, cfg) -> int:
    from .morphometry import image_metrics, write_metrics_csv
    from .raster import read_mask
    from .vesselgraph import build_graph, skeletonize

    ids = _png_ids(args.input)
    step = cfg.get("resample_step", 5.0)

    def one(image_id):
        mask = read_mask(os.path.join(args.input, image_id + ".png"))
        sk = skeletonize(mask)
        graph = build_graph(sk, prune_len=cfg.get("prune_len", 3.0))
        return image_id, image_metrics(mask, graph, sk, resample_step=step)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = dict(pool.map(one, ids))
    else:
        rows = dict(one(i) for i in ids)
    write_metrics_csv([(i, rows[i]) for i in ids], args.output)
    print(f"wrote {args.output}: {len(ids)} rows")
    return 0


def cmd_eval(args, cfg) -> int:
    from .evaluation import bootstrap_report
    from .raster import read_mask, read_probability
    from .svgfig import eval_bar_plot

    ids = _png_ids(args.pred)
    truth_ids = _png_ids(args.truth)
    if ids != truth_ids:
        raise _CliError("prediction and truth directories list different ids")

    def one(image_id):
        pred = read_mask(os.path.join(args.pred, image_id + ".png"))
        truth = read_mask(os.path.join(args.truth, image_id + ".png"))
        grid = None
        if args.prob:
            grid = read_probability(os.path.join(args.prob, image_id + ".vprb"))
        return (pred, truth, grid)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            pairs = list(pool.map(one, ids))
    else:
        pairs = [one(i) for i in ids]
    report = bootstrap_report(pairs, n_boot=args.n_boot, seed=args.seed)
    with open(args.output, "w") as f:
        f.write(report.to_json())
    if args.svg:
        with open(args.svg, "w") as f:
            f.write(eval_bar_plot(report))
    print(f"wrote {args.output} ({report.n_images} images, "
          f"{report.n_bootstrap} bootstrap replicates)")
    return 0


def cmd_assoc(args, cfg) -> int:
    from .stats import read_analysis_csv, run_association, write_results_csv
    from .svgfig import forest_plot

    table = read_analysis_csv(args.input)
    results = run_association(table)
    write_results_csv(results, args.output)
    if args.svg:
        with open(args.svg, "w") as f:
            f.write(forest_plot(results))
    n_sig = sum(r.significant for r in results)
    print(f"wrote {args.output}: {len(results)} metrics, {n_sig} significant "
          f"at FDR 0.05")
    return 0


def cmd_synth(args, cfg) -> int:
    from .synth import TreeSpec, generate, write_scene_bundle

    try:
        with open(args.spec) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise _CliError(f"bad spec file: {e}")
    doc.setdefault("seed", args.seed)
    for key in ("root", "length_range", "branch_angles_deg"):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        spec = TreeSpec(**doc)
    except (TypeError, ValueError) as e:
        raise _CliError(f"bad tree spec: {e}")
    mask, img, gt = generate(spec)
    write_scene_bundle(args.output, mask, img, gt)
    print(f"wrote scene bundle to {args.output}: "
          f"{gt.junction_count} junctions, {gt.terminal_count} terminals")
    return 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.project)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_loop_sim(args, cfg) -> int:
    from .loop import LoopSpec, run_loop_sim

    spec = LoopSpec(rounds=args.rounds, fidelity=args.fidelity)
    os.makedirs(args.output, exist_ok=True)
    reports = run_loop_sim(args.output, seed=args.seed, spec=spec)
    for rep in reports:
        print(f"round {rep['round']}: dice={rep['mean_dice_proposal_vs_corrected']:.4f} "
              f"pixels_changed={rep['mean_pixels_changed']:.1f} "
              f"active_s={rep['mean_active_seconds']:.1f}")
    return 0


_COMMANDS = {
    "preseg": cmd_preseg,
    "graph": cmd_graph,
    "metrics": cmd_metrics,
    "eval": cmd_eval,
    "assoc": cmd_assoc,
    "synth": cmd_synth,
    "serve": cmd_serve,
    "loop-sim": cmd_loop_sim,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        cfg = _load_config(args)
        return _COMMANDS[args.command](args, cfg)
    except _CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:  # internal fault, distinct exit code
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
