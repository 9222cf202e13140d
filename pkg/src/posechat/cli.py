"""Command-line surface: gen-data, train, eval, chat.

Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 non-finite
loss during training.  Diagnostics go to stderr; stdout carries data
(record counts, hashes, metric tables).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from .body import default_tree, load_tree
from .corpus import default_vocab
from .data.benchmarks import build_benchmark
from .data.observe import ObservationSeq
from .data.records import generate_records, read_records, write_poses, write_records
from .errors import ConfigError, NanLoss, PoseChatError, VocabMismatch
from .evaluate import eval_pose_estimation, eval_pose_generation, eval_rpe, predict_pose
from .metrics import MetricReport
from .model import load_checkpoint, generate
from .rotmath import matrix_to_rot6d
from .tok import ASSISTANT, BOS, USER, decode, encode
from .train import build_configs, parse_config_file, train_loop

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NAN = 4

GEN_KINDS = ("text2pose", "obs2pose", "rpe", "spg", "vqa")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    tree = load_tree(args.tree) if args.tree else default_tree()
    if args.kind in ("spg", "rpe"):
        records = build_benchmark(args.kind, args.n, args.seed, args.out, tree=tree)
    else:
        records = generate_records(args.kind, args.n, args.seed, tree=tree)
        write_records(records, args.out)
    print(f"kind={args.kind} records={len(records)} out={args.out} sha256={sha256_file(args.out)}")
    return 0


def cmd_train(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    overrides = _parse_overrides(args.set)
    vocab = default_vocab()
    model_cfg, loss_cfg, optim_cfg = build_configs(raw, vocab_size=len(vocab),
                                                   overrides=overrides)
    log_path = args.log
    if args.stage == "base":
        if not args.data:
            raise ConfigError("stage base needs --data with vqa records")
        datasets = {"vqa": read_records(args.data)}
        weights = train_loop("base", datasets, vocab, model_cfg, loss_cfg, optim_cfg,
                             args.out_ckpt, log_path=log_path,
                             ckpt_every=args.ckpt_every, init_seed=args.init_seed)
    else:
        if not args.base_ckpt:
            raise ConfigError("stage finetune needs --base-ckpt")
        try:
            base_weights, base_vocab = load_checkpoint(args.base_ckpt)
        except FileNotFoundError:
            raise ConfigError(f"base checkpoint not found: {args.base_ckpt}") from None
        if base_vocab.sha256() != vocab.sha256():
            raise VocabMismatch("base checkpoint vocabulary differs from the shipped corpus")
        if not (args.data_obs2pose and args.data_text2pose and args.data_vqa):
            raise ConfigError("stage finetune needs --data-obs2pose, --data-text2pose, --data-vqa")
        datasets = {
            "obs2pose": _read_many(args.data_obs2pose),
            "text2pose": _read_many(args.data_text2pose),
            "vqa": _read_many(args.data_vqa),
        }
        weights = train_loop("finetune", datasets, vocab, base_weights.config, loss_cfg,
                             optim_cfg, args.out_ckpt, base_weights=base_weights,
                             log_path=log_path, ckpt_every=args.ckpt_every,
                             init_seed=args.init_seed)
    del weights
    line = f"stage={args.stage} ckpt={args.out_ckpt} sha256={sha256_file(args.out_ckpt)}"
    if log_path:
        line += f" log={log_path}"
    print(line)
    return 0


def _read_many(paths) -> list:
    records = []
    for path in paths:
        records.extend(read_records(path))
    return records


def cmd_eval(args) -> int:
    weights, vocab = load_checkpoint(args.ckpt)
    if vocab.sha256() != default_vocab().sha256():
        raise VocabMismatch("checkpoint vocabulary differs from the shipped corpus")
    records = read_records(args.data)
    tree = load_tree(args.tree) if args.tree else default_tree()
    if args.task == "pose-est":
        report = eval_pose_estimation(weights, vocab, records, tree=tree,
                                      occlusion=args.occlusion,
                                      occlusion_seed=args.occlusion_seed)
    elif args.task == "pose-gen":
        report = eval_pose_generation(weights, vocab, records, tree=tree)
    elif args.task == "spg":
        report = eval_pose_generation(weights, vocab, records, tree=tree,
                                      with_consistency=False)
    else:
        report = eval_rpe(weights, vocab, records, tree=tree,
                          occlusion=args.occlusion, occlusion_seed=args.occlusion_seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
    print(report.format_table())
    return 0


def cmd_chat(args) -> int:
    weights, vocab = load_checkpoint(args.ckpt)
    obs = None
    if args.obs:
        try:
            with open(args.obs, "r", encoding="utf-8") as f:
                blob = json.load(f)
            import numpy as np

            vectors = np.asarray(blob["vectors"], dtype=np.float64)
            obs = ObservationSeq(vectors, blob["person_count"])
        except (OSError, KeyError, ValueError, TypeError) as exc:
            print(f"could not load observation file: {exc}", file=sys.stderr)
            obs = None
    print("posechat ready; :quit exits", file=sys.stderr)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        prompt = [BOS, USER] + encode(line, vocab) + [ASSISTANT]
        try:
            new_tokens, pose = generate(weights, obs, prompt, max_new=32)
        except PoseChatError as exc:
            print(f"error: {exc}", file=sys.stderr)
            continue
        print(decode([t for t in new_tokens], vocab))
        if pose is not None:
            flat = matrix_to_rot6d(pose).reshape(-1)
            print("pose (24 x 6d):")
            for j in range(24):
                row = " ".join(f"{v: .4f}" for v in flat[6 * j: 6 * j + 6])
                print(f"  joint {j:2d}: {row}")
            if args.pose_out:
                write_poses([pose], args.pose_out)
                print(f"pose written to {args.pose_out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posechat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset or benchmark file")
    p.add_argument("--kind", required=True, choices=GEN_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tree", help="skeleton file (default: shipped skeleton)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True, choices=("base", "finetune"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("--data", help="vqa records (stage base)")
    p.add_argument("--data-obs2pose", nargs="+", help="observation-conditioned records")
    p.add_argument("--data-text2pose", nargs="+")
    p.add_argument("--data-vqa", nargs="+")
    p.add_argument("--base-ckpt", help="base checkpoint (stage finetune)")
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--log", help="metrics log path (jsonl)")
    p.add_argument("--ckpt-every", type=int)
    p.add_argument("--init-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a record file")
    p.add_argument("--task", required=True, choices=("pose-est", "pose-gen", "rpe", "spg"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report file (jsonl)")
    p.add_argument("--tree")
    p.add_argument("--occlusion", type=float, default=0.0,
                   help="fraction of observation positions to mask")
    p.add_argument("--occlusion-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="interactive REPL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--obs", help="observation file (json)")
    p.add_argument("--pose-out", help="write emitted poses to this pose file")
    p.set_defaults(func=cmd_chat)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NanLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, VocabMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PoseChatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
