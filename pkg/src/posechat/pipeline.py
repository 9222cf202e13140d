"""The end-to-end reference pipeline: data generation, two-stage
training, and evaluation of every task.

This is the recipe behind the committed reference numbers; the
acceptance suite re-runs it and checks the same quantities.  2048
training records total: 1024 observation-conditioned (a quarter of them
multi-person scene queries), 512 text-to-pose, 512 plain QA.
"""

from __future__ import annotations

import pathlib
import time

from .corpus import default_vocab
from .data.benchmarks import build_benchmark
from .data.records import generate_records, write_records
from .evaluate import eval_pose_estimation, eval_pose_generation, eval_rpe
from .model import ModelConfig, load_checkpoint
from .train import LossConfig, OptimConfig, train_loop

REFERENCE_RECIPE = {
    "n_obs2pose": 768,
    "n_rpe_train": 256,
    "n_text2pose": 512,
    "n_vqa": 512,
    "base_lr": 1e-3,
    "base_steps": 300,
    "finetune_lr": 1e-3,
    "finetune_steps": 3000,
    "batch_size": 16,
    "grad_accum_steps": 2,
    "seed": 7,
}


def run_reference_pipeline(out_dir, recipe: dict | None = None, quick: bool = False) -> dict:
    """Train and evaluate the full pipeline; returns the results dict."""
    recipe = dict(REFERENCE_RECIPE, **(recipe or {}))
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = default_vocab()
    model_cfg = ModelConfig(vocab_size=len(vocab))
    loss_cfg = LossConfig()
    seed = recipe["seed"]

    t_start = time.time()
    datasets = {
        "obs2pose": generate_records("obs2pose", recipe["n_obs2pose"], seed + 1)
        + generate_records("rpe", recipe["n_rpe_train"], seed + 2),
        "text2pose": generate_records("text2pose", recipe["n_text2pose"], seed + 3),
        "vqa": generate_records("vqa", recipe["n_vqa"], seed + 4),
    }
    for name, records in datasets.items():
        write_records(records, out_dir / f"train_{name}.jsonl")

    base_ckpt = out_dir / "base.ckpt"
    train_loop(
        "base", {"vqa": datasets["vqa"]}, vocab, model_cfg, loss_cfg,
        OptimConfig(learning_rate=recipe["base_lr"], max_steps=recipe["base_steps"],
                    batch_size=recipe["batch_size"], grad_accum_steps=recipe["grad_accum_steps"],
                    rng_seed=seed + 5),
        base_ckpt, log_path=out_dir / "base_log.jsonl", init_seed=seed,
    )
    t_base = time.time()

    base_weights, _ = load_checkpoint(base_ckpt)
    ft_ckpt = out_dir / "finetune.ckpt"
    train_loop(
        "finetune", datasets, vocab, model_cfg, loss_cfg,
        OptimConfig(learning_rate=recipe["finetune_lr"], max_steps=recipe["finetune_steps"],
                    batch_size=recipe["batch_size"], grad_accum_steps=recipe["grad_accum_steps"],
                    rng_seed=seed + 6),
        ft_ckpt, base_weights=base_weights, log_path=out_dir / "finetune_log.jsonl",
        init_seed=seed,
    )
    t_train = time.time()

    weights, vocab = load_checkpoint(ft_ckpt)
    n_eval = 32 if quick else 256
    n_rpe = 32 if quick else 250
    n_spg = 32 if quick else 780

    heldout_t2p = generate_records("text2pose", n_eval, seed + 101)
    write_records(heldout_t2p, out_dir / "heldout_text2pose.jsonl")
    gen_report = eval_pose_generation(weights, vocab, heldout_t2p)

    heldout_obs = generate_records("obs2pose", n_eval, seed + 102)
    write_records(heldout_obs, out_dir / "heldout_obs2pose.jsonl")
    est_report = eval_pose_estimation(weights, vocab, heldout_obs)
    occl_report = eval_pose_estimation(weights, vocab, heldout_obs, occlusion=0.5,
                                       occlusion_seed=seed + 103)

    rpe_records = build_benchmark("rpe", n_rpe, seed + 104, out_dir / "benchmark_rpe.jsonl")
    rpe_report = eval_rpe(weights, vocab, rpe_records)

    spg_records = build_benchmark("spg", n_spg, seed + 105, out_dir / "benchmark_spg.jsonl")
    spg_report = eval_pose_generation(weights, vocab, spg_records, with_consistency=False)
    t_end = time.time()

    return {
        "recipe": recipe,
        "train_seconds": round(t_train - t_start, 1),
        "base_seconds": round(t_base - t_start, 1),
        "eval_seconds": round(t_end - t_train, 1),
        "text2pose": {
            "caption_consistency": gen_report.caption_consistency,
            "mpjre_x100": gen_report.mpjre_x100,
            "mpjpe": gen_report.mpjpe,
            "pose_emission_rate": gen_report.extras["pose_emission_rate"],
            "recall": gen_report.recall,
        },
        "obs2pose": {
            "mpjpe": est_report.mpjpe,
            "pa_mpjpe": est_report.pa_mpjpe,
            "mpjre_x100": est_report.mpjre_x100,
            "baseline_mean_pose_mpjpe": est_report.extras["baseline_mean_pose_mpjpe"],
            "mpjpe_ratio_vs_baseline": est_report.mpjpe / est_report.extras["baseline_mean_pose_mpjpe"],
            "pose_emission_rate": est_report.extras["pose_emission_rate"],
        },
        "occlusion_50": {
            "mpjpe": occl_report.mpjpe,
            "degradation_factor": occl_report.mpjpe / est_report.mpjpe,
        },
        "rpe": {
            "resolution_rate": rpe_report.extras["resolution_rate"],
            "mpjre_x100": rpe_report.mpjre_x100,
            "mpjpe": rpe_report.mpjpe,
        },
        "spg": {
            "mpjre_x100": spg_report.mpjre_x100,
            "recall": spg_report.recall,
        },
    }
