"""Command-line entry point.

Subcommands: train, infer, eval, gen-synth, report-scores. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .backbone import MlpConfig, MsAffConfig, MsAffModel, cosine_map
from .fileio import (ParseError, load_model, read_config, read_pfm, read_pgm,
                     save_model, write_pfm, write_pgm)
from .matcher import PyramidConfig, SgmParams, run_pyramid
from .metrics import (ScorePairs, disparity_errors, intersection_area,
                      joint_probability, roc_auc)
from .sampling import DisparityGT, SampleSpec, build_sample_set
from .synthetic import gen_synthetic, spec_from_dict
from .training import config_from_dict, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_image(path):
    if str(path).endswith(".pfm"):
        return read_pfm(path)
    img, _ = read_pgm(path)
    return img


def _load_gt(path, occ_path=None):
    d = read_pfm(path)
    valid = np.isfinite(d)
    occ = None
    if occ_path:
        m, _ = read_pgm(occ_path)
        occ = (m > 0.5) & valid
    return DisparityGT(d=np.where(valid, d, 0.0), valid=valid, occluded=occ)


def _cmd_train(args):
    cfg = read_config(args.config)
    if "train" not in cfg:
        raise UsageError("config needs a [train] section")
    tcfg = config_from_dict(cfg["train"])
    msec = cfg.get("model", {})
    model = MsAffModel(
        MsAffConfig(features=int(msec.get("features", 8))),
        MlpConfig(hidden=tuple(int(h) for h in msec.get("mlp_hidden", "64,64").split(","))),
        seed=tcfg.seed)
    dsec = dict(cfg.get("data", {}))
    n_pairs = int(dsec.pop("n_pairs", 8))
    n_holdout = int(dsec.pop("n_holdout", 0))
    base_seed = int(dsec.pop("seed", tcfg.seed))
    data = []
    for i in range(n_pairs + n_holdout):
        spec = spec_from_dict(dict(dsec, seed=str(base_seed + i)))
        data.append(gen_synthetic(spec))
    holdout = data[n_pairs:] or None
    out = cfg["train"].get("out", "model.dsim")
    log = cfg["train"].get("log")
    train(tcfg, model, data[:n_pairs], holdout=holdout, log_path=log)
    save_model(out, model)
    print(out)
    return 0


_MODES = {"cos": "cosine", "mlp": "mlp", "ncc": "ncc"}


def _cmd_infer(args):
    left = _read_image(args.left)
    right = _read_image(args.right)
    model = load_model(args.model) if args.model else None
    mode = _MODES[args.mode] if args.mode else ("mlp" if model else "ncc")
    if model is None:
        mode = "ncc"
    cfg = PyramidConfig(global_range=(args.dmin, args.dmax), cost_mode=mode,
                        tau=args.tau)
    disp, sim, occ = run_pyramid(left, right, model, cfg, SgmParams())
    write_pfm(args.out, disp)
    if args.sim_out:
        write_pfm(args.sim_out, sim)
    if args.occ_out:
        write_pgm(args.occ_out, occ.astype(np.float64), bits=8)
    return 0


def _cmd_eval(args):
    pred = read_pfm(args.pred)
    gt = _load_gt(args.gt, args.occ)
    report = disparity_errors(pred, gt, exclude_occluded=args.occ is not None)
    print(report.to_json())
    return 0


def _cmd_gen_synth(args):
    cfg = read_config(args.spec)
    if "synthetic" not in cfg:
        raise UsageError("spec needs a [synthetic] section")
    spec = spec_from_dict(cfg["synthetic"])
    left, right, gt = gen_synthetic(spec)
    os.makedirs(args.outdir, exist_ok=True)
    lo = min(left.min(), right.min())
    hi = max(left.max(), right.max())
    span = (hi - lo) or 1.0
    write_pgm(os.path.join(args.outdir, "left.pgm"), (left - lo) / span, bits=16)
    write_pgm(os.path.join(args.outdir, "right.pgm"), (right - lo) / span, bits=16)
    write_pfm(os.path.join(args.outdir, "gt.pfm"), gt.d)
    write_pgm(os.path.join(args.outdir, "occ.pgm"), gt.occluded.astype(np.float64))
    print(args.outdir)
    return 0


def _cmd_report_scores(args):
    model = load_model(args.model)
    left = _read_image(os.path.join(args.pair, "left.pgm"))
    right = _read_image(os.path.join(args.pair, "right.pgm"))
    gt = _load_gt(args.gt, os.path.join(args.pair, "occ.pgm")
                  if os.path.exists(os.path.join(args.pair, "occ.pgm")) else None)
    fl = model.extract_features(left)
    fr = model.extract_features(right)
    spec = SampleSpec(args.alpha, args.beta1, args.beta2, seed=args.seed)
    s = build_sample_set(fl, fr, gt, spec)
    pos = cosine_map(s.x_ref, s.x_pos).data[s.y_pos]
    neg = cosine_map(s.x_ref, s.x_neg).data[s.y_pos]
    sp = ScorePairs(pos=pos, neg=neg, value_range=(-1.0, 1.0))
    auc, fpr, tpr = roc_auc(pos, neg)
    print(f"# jp={joint_probability(sp):.4f} inter_a={intersection_area(sp):.4f} "
          f"auc={auc:.4f} n={pos.size}")
    print("fpr,tpr")
    for f, t in zip(fpr, tpr):
        print(f"{f},{t}")
    return 0


def build_parser():
    p = _Parser(prog="deepsim", description="Hybrid stereo matching toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("train", help="train a model from a config file")
    q.add_argument("config")
    q.set_defaults(fn=_cmd_train)

    q = sub.add_parser("infer", help="dense disparity for a rectified pair")
    q.add_argument("left")
    q.add_argument("right")
    q.add_argument("--model", default=None)
    q.add_argument("--out", required=True)
    q.add_argument("--mode", choices=sorted(_MODES), default=None)
    q.add_argument("--dmin", type=int, default=0)
    q.add_argument("--dmax", type=int, default=16)
    q.add_argument("--tau", type=float, default=0.5)
    q.add_argument("--sim-out", default=None)
    q.add_argument("--occ-out", default=None)
    q.set_defaults(fn=_cmd_infer)

    q = sub.add_parser("eval", help="disparity error report as JSON")
    q.add_argument("pred")
    q.add_argument("gt")
    q.add_argument("--occ", default=None)
    q.set_defaults(fn=_cmd_eval)

    q = sub.add_parser("gen-synth", help="generate a synthetic stereo pair")
    q.add_argument("spec")
    q.add_argument("outdir")
    q.set_defaults(fn=_cmd_gen_synth)

    q = sub.add_parser("report-scores", help="score separability CSV for a pair")
    q.add_argument("model")
    q.add_argument("pair", help="directory holding left.pgm/right.pgm")
    q.add_argument("gt")
    q.add_argument("--alpha", type=float, default=0.0)
    q.add_argument("--beta1", type=float, required=True)
    q.add_argument("--beta2", type=float, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=_cmd_report_scores)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
