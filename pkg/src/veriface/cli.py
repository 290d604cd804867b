"""Command-line entry point.

Subcommands: synth, train, calibrate, verify, evaluate, inspect.

Exit codes are a stable contract:
  0  success (verify: claim accepted)
  1  verify: claim rejected
  2  usage or configuration error
  3  unknown client id
  4  i/o error (unreadable image, model, or file)
  5  bad manifest
  6  degenerate client
  7  singular scatter
"""

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .decision import verify
from .errors import (AlignmentError, ConfigError, DegenerateClientError,
                     ImageFormatError, ManifestError, ModelFormatError,
                     SingularScatterError, UnknownClientError, VerifaceError)
from .evaluation import METHODS, run_comparison
from .imaging import align_and_crop, load_image
from .manifest import load_manifest
from .model import load_model, save_model
from .synth import synth_generate
from .training import calibrate_model, train_model

log = logging.getLogger(__name__)

CONFIG_ENV = "VERIFACE_CONFIG"

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_CLIENT = 3
EXIT_IO = 4
EXIT_BAD_MANIFEST = 5
EXIT_DEGENERATE_CLIENT = 6
EXIT_SINGULAR_SCATTER = 7

_ERROR_CODES = (
    (UnknownClientError, EXIT_UNKNOWN_CLIENT),
    (ManifestError, EXIT_BAD_MANIFEST),
    (DegenerateClientError, EXIT_DEGENERATE_CLIENT),
    (SingularScatterError, EXIT_SINGULAR_SCATTER),
    (ImageFormatError, EXIT_IO),
    (AlignmentError, EXIT_IO),
    (ModelFormatError, EXIT_IO),
    (ConfigError, EXIT_USAGE),
)

_CONFIG_OVERRIDES = ("rows", "cols", "g", "h", "energy", "q", "d", "ridge",
                     "bins", "fusion_mode", "threshold_mode", "weight_step",
                     "seed")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veriface",
        description="Face verification via per-client 2D discriminant "
                    "templates with skin-chroma score fusion.")
    parser.add_argument("--config", default=None,
                        help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-client training")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--clients", type=int, default=20)
    p.add_argument("--train-per-client", type=int, default=8)
    p.add_argument("--eval-per-client", type=int, default=4)
    p.add_argument("--test-per-client", type=int, default=4)
    p.add_argument("--impostors-eval", type=int, default=5)
    p.add_argument("--impostors-test", type=int, default=5)
    p.add_argument("--samples-per-impostor", type=int, default=4)
    p.add_argument("--grey-separation", type=float, default=1.0)
    p.add_argument("--chroma-separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)

    p = sub.add_parser("train", help="build client models from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--timestamp", default=None,
                   help="provenance timestamp (default: $SOURCE_DATE_EPOCH "
                        "if set, else unset for reproducible bytes)")
    _add_config_overrides(p)

    p = sub.add_parser("calibrate",
                       help="set thresholds and fusion weight from the "
                            "evaluation roles")
    p.add_argument("model")
    p.add_argument("manifest")
    _add_config_overrides(p)

    p = sub.add_parser("verify", help="verify one identity claim")
    p.add_argument("model")
    p.add_argument("claim_id")
    p.add_argument("image")
    p.add_argument("lx", type=float, help="left eye x (column) in pixels")
    p.add_argument("ly", type=float, help="left eye y (row) in pixels")
    p.add_argument("rx", type=float, help="right eye x (column) in pixels")
    p.add_argument("ry", type=float, help="right eye y (row) in pixels")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the calibrated threshold (inf/-inf allowed)")

    p = sub.add_parser("evaluate", help="run the method comparison")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.add_argument("--protocol-config", choices=("I", "II"), default="I")
    p.add_argument("--methods", default=",".join(METHODS),
                   help="comma-separated subset of CSF,2D2G,2D2GC")
    p.add_argument("--no-timing", action="store_true",
                   help="skip latency measurement for byte-reproducible reports")
    _add_config_overrides(p)

    p = sub.add_parser("inspect", help="dump model metadata and diagnostics")
    p.add_argument("model")
    p.add_argument("--client", default=None, help="limit output to one client")
    p.add_argument("--histograms", default=None,
                   help="write color reference histograms to this CSV")
    p.add_argument("--export-client", default=None,
                   help="write a single-client model")
    p.add_argument("--out", default=None, help="path for --export-client")
    return parser


def _add_config_overrides(p):
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--g", type=int, default=None)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--energy", type=float, default=None)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--fusion-mode", default=None,
                   choices=("grey_only", "color_only", "fused"))
    p.add_argument("--threshold-mode", default=None,
                   choices=("global", "per_client"))
    p.add_argument("--weight-step", type=float, default=None)


def _effective_config(args) -> RunConfig:
    """Flag > config file > built-in default."""
    path = args.config or os.environ.get(CONFIG_ENV)
    config = RunConfig.from_file(path) if path else RunConfig()
    overrides = {}
    for name in _CONFIG_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = replace(config, **overrides)
    log.info("effective config: %s", json.dumps(config.to_dict(), sort_keys=True))
    return config


def _cmd_synth(args, config: RunConfig) -> int:
    manifest = synth_generate(
        args.out_dir, seed=config.seed, n_clients=args.clients,
        train_per_client=args.train_per_client,
        eval_per_client=args.eval_per_client,
        test_per_client=args.test_per_client,
        n_impostors_eval=args.impostors_eval,
        n_impostors_test=args.impostors_test,
        samples_per_impostor=args.samples_per_impostor,
        grey_separation=args.grey_separation,
        chroma_separation=args.chroma_separation, noise=args.noise,
        geometry=config.geometry())
    print(manifest)
    return EXIT_OK


def _default_timestamp(args):
    if args.timestamp is not None:
        return args.timestamp
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.datetime.fromtimestamp(
            int(epoch), tz=datetime.timezone.utc).isoformat()
    return None


def _cmd_train(args, config: RunConfig) -> int:
    records = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    model = train_model(records, base_dir, config, threads=args.threads,
                        timestamp=_default_timestamp(args))
    save_model(model, args.out)
    print(f"model written to {args.out}: {len(model.client_templates)} clients, "
          f"g={model.pca_stage.g}, h={model.pca_stage.h}")
    return EXIT_OK


def _cmd_calibrate(args, config: RunConfig) -> int:
    model = load_model(args.model)
    records = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    summary = calibrate_model(model, records, base_dir, config)
    save_model(model, args.model)
    print(f"calibrated {len(model.policies)} clients: mode={config.fusion_mode} "
          f"weight={summary.fusion_weight:.2f} threshold={summary.threshold:.6f} "
          f"eval FAR={summary.far * 100:.2f}% FRR={summary.frr * 100:.2f}% "
          f"({summary.n_genuine} genuine / {summary.n_impostor} impostor trials)")
    return EXIT_OK


def _cmd_verify(args, config: RunConfig) -> int:
    model = load_model(args.model)
    if args.claim_id not in model.client_templates:
        raise UnknownClientError(f"client {args.claim_id!r} is not enrolled")
    img = load_image(args.image)
    probe = align_and_crop(img, (args.ly, args.lx), (args.ry, args.rx),
                           model.geometry)
    policy = model.policy_for(args.claim_id)
    if args.threshold is not None:
        policy = replace(policy, threshold=args.threshold)
    record = verify(args.claim_id, probe, model, policy)
    out = record.to_dict()
    out["probe"] = args.image
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK if record.accept else EXIT_REJECT


def _cmd_evaluate(args, config: RunConfig) -> int:
    records = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    methods = tuple(m for m in args.methods.split(",") if m)
    report = run_comparison(records, args.protocol_config, methods=methods,
                            runconfig=config, base_dir=base_dir,
                            measure_timing=not args.no_timing)
    out = Path(args.out)
    out.write_text(report.to_csv())
    text = report.to_text()
    out.with_suffix(".txt").write_text(text)
    print(text, end="")
    return EXIT_OK if not report.failures else EXIT_USAGE


def _cmd_inspect(args, config: RunConfig) -> int:
    model = load_model(args.model)
    if args.export_client is not None:
        if not args.out:
            raise ConfigError("--export-client requires --out")
        save_model(model.single_client(args.export_client), args.out)
        print(f"exported {args.export_client} to {args.out}")
        return EXIT_OK
    clients = [args.client] if args.client else model.client_ids()
    for cid in clients:
        if cid not in model.client_templates:
            raise UnknownClientError(f"client {cid!r} is not enrolled")
    info = {
        "format_version": model.format_version,
        "geometry": {"rows": model.geometry.rows, "cols": model.geometry.cols},
        "stage": {"m": model.pca_stage.m, "n": model.pca_stage.n,
                  "g": model.pca_stage.g, "h": model.pca_stage.h},
        "clients": len(model.client_templates),
        "provenance": model.provenance,
        "diagnostics": {cid: model.diagnostics.get(cid, {}) for cid in clients},
        "policies": {cid: model.policies[cid].threshold
                     for cid in clients if cid in model.policies},
    }
    print(json.dumps(info, sort_keys=True, indent=2))
    if args.histograms:
        with open(args.histograms, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["client_id", "reference", "bin_center", "weight"])
            for cid in clients:
                refs = model.color_references.get(cid)
                if refs is None:
                    continue
                for name, hist in (("client", refs[0]), ("imposter", refs[1])):
                    for center, weight in zip(hist.bin_centers(), hist.weights):
                        writer.writerow([cid, name, repr(float(center)),
                                         repr(float(weight))])
        print(f"histograms written to {args.histograms}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "verify": _cmd_verify,
    "evaluate": _cmd_evaluate,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _effective_config(args)
        return _COMMANDS[args.command](args, config)
    except VerifaceError as exc:
        for klass, code in _ERROR_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
