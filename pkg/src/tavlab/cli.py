"""tavlab command line.

    tavlab all --config configs/reference.json --outdir runs/ref
    tavlab gap-scan --config configs/reference.json --eta 0.5
    tavlab validate runs/ref

Exit codes: 0 success, 1 validation failure, 2 config error,
3 numerical divergence.
"""
import argparse
import logging
import os
import sys

from tavlab import __version__, config, io, kernels
from tavlab.experiments import RUNNERS
from tavlab.trainer import TrainingDivergence
from tavlab.validate import validate_dir

log = logging.getLogger("tavlab")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
ORDER = list(RUNNERS)
DEFAULT_OUTDIR = "runs"
HELP = {
    "gen-tasks": "generate the synthetic task family",
    "finetune": "one-epoch and k-epoch fine-tuning trajectories per task",
    "merge": "merged vs multitask models: epoch-1 equality and accuracy",
    "gap-scan": "gap order over the step-size grid and curvature-corrected fits",
    "bounds": "measured gradient/Hessian/gap norms against the parameter bounds",
    "dominance": "per-epoch gradient norms and cosine alignment",
    "horizon": "one-epoch vs converged task vectors over an alpha sweep",
    "pca": "2-D projection of iterative merging and multitask trajectories",
    "all": "run every subcommand in order",
}


def write_artifacts(outdir, art, cfg):
    d = os.path.join(outdir, art.subcommand)
    os.makedirs(d, exist_ok=True)
    files = []
    for stem, payload in sorted(art.json.items()):
        io.write_json(os.path.join(d, stem + ".json"), payload)
        files.append(stem + ".json")
    for stem, (cols, rows) in sorted(art.csv.items()):
        io.write_csv(os.path.join(d, stem + ".csv"), cols, rows)
        files.append(stem + ".csv")
    io.write_manifest(d, art.subcommand, config.config_hash(cfg), files,
                      extra={"config": config.canonical(cfg), "backend": kernels.BACKEND})
    return d


def _report(checks, stream):
    for c in checks:
        print(c.line(), file=stream)
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=stream)
    return failed == 0


def run(subcommands, cfg, stream=sys.stdout):
    outdir = cfg.get("outdir") or DEFAULT_OUTDIR
    dirs = []
    for name in subcommands:
        log.info("running %s", name)
        try:
            art = RUNNERS[name](cfg)
        except TrainingDivergence as exc:
            print(f"error: {name}: {exc} (eta={cfg['train']['eta']}, alpha={cfg['train']['alpha']})",
                  file=sys.stderr)
            return EXIT_DIVERGED
        dirs.append(write_artifacts(outdir, art, cfg))
    ok = True
    for d in dirs:
        ok = _report(validate_dir(d), stream) and ok
    return EXIT_OK if ok else EXIT_INVALID


def build_parser():
    p = argparse.ArgumentParser(prog="tavlab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"tavlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ORDER + ["all"]:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--eta", type=float, help="override train.eta")
        sp.add_argument("--alpha", type=float, help="override train.alpha")
        sp.add_argument("--seed", type=int, help="override seed")
        sp.add_argument("--outdir", help="override outdir")
        sp.add_argument("--backend", choices=kernels.available_backends(),
                        help="kernel backend (default: compiled if built)")
    vp = sub.add_parser("validate", help="re-check stored artifacts")
    vp.add_argument("artifact_dir")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "validate":
        ok = _report(validate_dir(args.artifact_dir), sys.stdout)
        return EXIT_OK if ok else EXIT_INVALID

    overrides = {}
    for flag, path in (("eta", "train.eta"), ("alpha", "train.alpha"), ("seed", "seed"),
                       ("outdir", "outdir")):
        value = getattr(args, flag)
        if value is not None:
            overrides[path] = value
    try:
        cfg = config.load(args.config, overrides)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.backend:
        kernels.set_backend(args.backend)
    names = ORDER if args.command == "all" else [args.command]
    return run(names, cfg)


if __name__ == "__main__":
    sys.exit(main())
