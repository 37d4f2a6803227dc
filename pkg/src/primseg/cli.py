"""Command-line front end: segment / synth / eval / dk / tune.

Exit codes: 0 success, 1 argument or input-file problems, 2 pipeline
failures (stage-tagged on stderr).  All outputs are written atomically and
are byte-identical across runs with the same inputs and seed.  Heavy
imports happen inside the subcommands so the optional ``PRIMSEG_THREADS``
override is applied before the numeric libraries initialize their pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

__version__ = "0.1.0"


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors (default is 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fail(prog: str, message: str, code: int) -> int:
    print(f"{prog}: error: {message}", file=sys.stderr)
    return code


def build_parser() -> _Parser:
    p = _Parser(prog="primseg", description="Typed primitive segmentation of 3D point clouds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--version", action="version", version=f"primseg {__version__}")
        return sp

    s = add("segment", "Segment a point cloud into typed primitive patches.")
    s.add_argument("--input", required=True, help="point cloud (.xyz or ascii .ply)")
    s.add_argument("--attrs", help="precomputed per-point attribute file")
    s.add_argument("--config", required=True, help="pipeline configuration JSON")
    s.add_argument("--output", required=True, help="segmentation JSON to write")
    s.add_argument("--labels-out", help="optional per-point label file")
    s.set_defaults(func=cmd_segment)

    s = add("synth", "Generate a synthetic scene from a scene-spec JSON.")
    s.add_argument("--spec", required=True, help="scene spec JSON file")
    s.add_argument("--out-prefix", required=True,
                   help="writes <prefix>.xyz, .labels, .attrs and .gt.json")
    s.set_defaults(func=cmd_synth)

    s = add("eval", "Score a predicted segmentation against ground truth.")
    s.add_argument("--pred", required=True, help="predicted segmentation JSON")
    s.add_argument("--gt", required=True, help="ground-truth segmentation JSON")
    s.add_argument("--cloud", required=True, help="the segmented point cloud")
    s.add_argument("--report", required=True, help="metrics report JSON to write")
    s.set_defaults(func=cmd_eval)

    s = add("dk", "Run the eigenvector perturbation experiment.")
    s.add_argument("--n", type=int, required=True, help="points per instance")
    s.add_argument("--k", type=int, required=True, help="number of blocks (must divide n)")
    s.add_argument("--rho", type=float, required=True, help="corrupted fraction in [0, 1)")
    s.add_argument("--trials", type=int, required=True, help="number of instances")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--csv", required=True, help="per-trial results CSV to write")
    s.set_defaults(func=cmd_dk)

    s = add("tune", "Tune kernel widths on a directory of ground-truth scenes.")
    s.add_argument("--scenes", required=True,
                   help="directory of synth outputs (<name>.xyz/.labels/.attrs)")
    s.add_argument("--config", required=True, help="starting configuration JSON")
    s.add_argument("--out", required=True,
                   help="tuned configuration JSON; trace goes to <out stem>.trace.csv")
    s.add_argument("--max-iter", type=int, default=30, help="iteration cap (default 30)")
    s.set_defaults(func=cmd_tune)
    return p


def cmd_segment(args) -> int:
    prog = "primseg segment"
    from .attributes import load_attributes
    from .config import load_config
    from .io import read_cloud, write_labels, write_segmentation

    try:
        cfg = load_config(args.config)
        cloud = read_cloud(args.input)
        attrs = load_attributes(args.attrs, expected_n=cloud.n) if args.attrs else None
    except (OSError, ValueError) as exc:
        return _fail(prog, str(exc), 1)

    from .pipeline import PipelineError, segment

    try:
        seg, info = segment(cloud, attrs, cfg)
    except PipelineError as exc:
        return _fail(prog, str(exc), 2)
    try:
        write_segmentation(args.output, seg, rms=info.get("rms"))
        if args.labels_out:
            write_labels(args.labels_out, seg.labels)
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    print(f"n={seg.n} segments={seg.K} runtime={info['runtime_seconds']:.2f}s")
    return 0


def cmd_synth(args) -> int:
    prog = "primseg synth"
    from .attributes import save_attributes
    from .io import write_labels, write_segmentation, write_xyz
    from .synth import SceneSpec, generate_scene

    try:
        with open(args.spec) as fh:
            spec = SceneSpec.from_json(fh.read())
        cloud, gt, attrs = generate_scene(spec)
    except (OSError, ValueError) as exc:
        return _fail(prog, str(exc), 1)
    prefix = args.out_prefix
    try:
        write_xyz(prefix + ".xyz", cloud)
        write_labels(prefix + ".labels", gt.labels)
        save_attributes(prefix + ".attrs", attrs)
        write_segmentation(
            prefix + ".gt.json", gt, extra={"scene_spec": json.loads(spec.to_json())}
        )
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    print(f"n={cloud.n} primitives={gt.K} prefix={prefix}")
    return 0


def cmd_eval(args) -> int:
    prog = "primseg eval"
    from .io import atomic_write_text, read_cloud, read_segmentation
    from .metrics import compute_metrics_report, format_metrics_table

    try:
        pred, _, _ = read_segmentation(args.pred)
        gt, _, gt_doc = read_segmentation(args.gt)
        cloud = read_cloud(args.cloud)
    except (OSError, ValueError) as exc:
        return _fail(prog, str(exc), 1)
    if pred.n != cloud.n or gt.n != cloud.n:
        return _fail(
            prog,
            f"point counts disagree: cloud {cloud.n}, pred {pred.n}, gt {gt.n}",
            1,
        )

    gt_surfaces = None
    if "scene_spec" in gt_doc:
        from .synth import SceneSpec, sample_primitive_surface

        try:
            spec = SceneSpec.from_json(json.dumps(gt_doc["scene_spec"]))
        except ValueError as exc:
            return _fail(prog, str(exc), 1)
        if len(spec.primitives) != gt.K:
            return _fail(prog, "scene spec does not match ground-truth segments", 1)
        gt_surfaces = [
            (lambda m, rng, p=prim: sample_primitive_surface(p, m, rng))
            for prim in spec.primitives
        ]

    try:
        report = compute_metrics_report(pred, gt, cloud.positions, gt_surfaces=gt_surfaces)
    except ValueError as exc:
        return _fail(prog, str(exc), 1)
    try:
        atomic_write_text(
            args.report, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    print(format_metrics_table(report))
    return 0


def cmd_dk(args) -> int:
    prog = "primseg dk"
    from .io import write_csv
    from .spectral import dk_experiment

    try:
        reports = dk_experiment(args.n, args.k, args.rho, args.trials, seed=args.seed)
    except ValueError as exc:
        return _fail(prog, str(exc), 1)
    rows = [
        [i, r.n, r.K, r.rho, r.procrustes_error, r.relative_error, r.bound, r.eigengap,
         r.frobenius_E]
        for i, r in enumerate(reports)
    ]
    header = ["trial", "n", "K", "rho", "procrustes_error", "relative_error", "bound",
              "eigengap", "frobenius_E"]
    try:
        write_csv(args.csv, header, rows)
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    worst = max((r.procrustes_error / r.bound for r in reports if r.bound > 0), default=0.0)
    print(f"trials={len(reports)} worst_error_to_bound={worst:.4f}")
    return 0


def cmd_tune(args) -> int:
    prog = "primseg tune"
    from .attributes import load_attributes
    from .config import load_config, save_config
    from .io import read_cloud, read_labels, write_csv
    from .tuning import (
        PARAM_NAMES,
        HyperParams,
        make_validation_objective,
        tune_hyperparams,
    )

    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        return _fail(prog, str(exc), 1)
    if args.max_iter < 0:
        return _fail(prog, "--max-iter must be nonnegative", 1)
    try:
        names = sorted(f for f in os.listdir(args.scenes) if f.endswith(".xyz"))
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    scenes = []
    try:
        for name in names:
            stem = os.path.join(args.scenes, name[: -len(".xyz")])
            cloud = read_cloud(stem + ".xyz")
            labels = read_labels(stem + ".labels")
            attrs = load_attributes(stem + ".attrs", expected_n=cloud.n)
            if labels.shape[0] != cloud.n:
                raise ValueError(f"{stem}.labels does not match the cloud size")
            scenes.append((cloud, attrs, labels))
    except (OSError, ValueError) as exc:
        return _fail(prog, str(exc), 1)
    if not scenes:
        return _fail(prog, f"no scenes found in {args.scenes!r}", 1)

    try:
        objective = make_validation_objective(scenes, base=cfg)
    except ValueError as exc:
        return _fail(prog, str(exc), 1)
    trace: list = []
    hp = tune_hyperparams(
        objective, HyperParams.from_config(cfg), max_iter=args.max_iter, trace=trace
    )
    trace_path = os.path.splitext(args.out)[0] + ".trace.csv"
    header = ["iteration", "objective", "step_size", *PARAM_NAMES]
    try:
        save_config(args.out, hp.apply(cfg))
        write_csv(trace_path, header, [[row[h] for h in header] for row in trace])
    except OSError as exc:
        return _fail(prog, str(exc), 1)
    if trace:
        first, last = trace[0], trace[-1]
        reason = (
            "step-size" if 0 < last["step_size"] < 1e-3 or last["step_size"] == 0.0
            else "max-iter"
        )
        print(
            f"iterations={last['iteration']} objective={first['objective']:.6g}"
            f"->{last['objective']:.6g} final_step={last['step_size']:.3g}"
            f" stopped_by={reason}"
        )
    else:
        print("iterations=0 (objective evaluation failed; config copied unchanged)")
    return 0


def main(argv=None) -> int:
    threads = os.environ.get("PRIMSEG_THREADS")
    if threads is not None:
        try:
            count = int(threads)
            if count < 1:
                raise ValueError
        except ValueError:
            return _fail("primseg", "PRIMSEG_THREADS must be a positive integer", 1)
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = str(count)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
