"""Command-line interface: dataset generation, training, evaluation, sweeps."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import jsonio, selftest
from .config import BenchConfig, config_to_dict, load_config
from .data import (
    Observation,
    ToyBackbone,
    derive_seed,
    generate_dataset,
    split_identities,
)
from .errors import InvalidConfigError
from .experiment import (
    evaluate_split,
    parse_arm,
    run_experiment,
    train_config_from,
    verification_scores,
)
from .gating import PoseAngles
from .metrics import score_curve
from .optim import OptimizerConfig, minimize, wahba_objective
from .residual import TrainedModel, train_end_to_end, train_subnet
from .so3 import exp_map, geodesic_distance
from .experiment import _feature_pairs  # reused by the train subcommand

DATASET_FILE = "observations.jsonl"
META_FILE = "meta.json"


def _fmt(x: float) -> str:
    return jsonio.format_float(float(x))


def save_dataset(dataset, out_dir: Path, train_fraction: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for obs in dataset.observations:
        record = {
            "id": obs.identity_id,
            "pose": [obs.pose.pitch, obs.pose.yaw, obs.pose.roll],
            "points": [float(x) for x in obs.points.reshape(-1)],
        }
        lines.append(jsonio.dumps_compact(record))
    (out_dir / DATASET_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    train_ids, test_ids = split_identities(dataset, train_fraction)
    meta = {
        "format_version": 1,
        "seed": dataset.seed,
        "params": dataset.params,
        "train_ids": train_ids,
        "test_ids": test_ids,
    }
    jsonio.dump(meta, out_dir / META_FILE)


def load_observations(data_dir: Path):
    import json

    meta = jsonio.load(data_dir / META_FILE)
    sigma = float(meta["params"]["noise_sigma"])
    observations = []
    for line in (data_dir / DATASET_FILE).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pose = PoseAngles(*[float(a) for a in rec["pose"]])
        points = np.asarray(rec["points"], dtype=float).reshape(-1, 3)
        from .gating import pose_to_rotation

        observations.append(
            Observation(
                identity_id=int(rec["id"]),
                pose=pose,
                rotation=pose_to_rotation(pose),
                points=points,
                noise_sigma=sigma,
            )
        )
    return observations, meta


def _backbone_from_config(cfg: BenchConfig) -> ToyBackbone:
    return ToyBackbone.create(
        dim=cfg.backbone.dim,
        n_landmarks=cfg.data.n_landmarks,
        seed=derive_seed(cfg.seed, "backbone"),
        gain=cfg.backbone.gain,
    )


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    dataset = generate_dataset(
        n_identities=cfg.data.n_identities,
        obs_per_identity=cfg.data.obs_per_identity,
        pose_range=cfg.data.pose_range,
        noise_sigma=cfg.data.noise_sigma,
        seed=derive_seed(cfg.seed, "data"),
        pitch_range=cfg.data.pitch_range,
        roll_range=cfg.data.roll_range,
        flip_augment=cfg.data.flip_augment,
        n_landmarks=cfg.data.n_landmarks,
        identity_scale=cfg.data.identity_scale,
        anisotropy=cfg.data.anisotropy,
    )
    save_dataset(dataset, Path(args.out), cfg.data.train_fraction)
    print(f"wrote {len(dataset.observations)} observations to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import SynthDataset

    cfg = load_config(args.config)
    observations, meta = load_observations(Path(args.data))
    train_ids = [int(i) for i in meta["train_ids"]]
    backbone = _backbone_from_config(cfg)
    gate_kind = cfg.gating.gate_kind()
    train_cfg = train_config_from(cfg, derive_seed(cfg.seed, "train"))
    dataset = SynthDataset(
        identities=(), observations=tuple(observations), seed=int(meta["seed"])
    )

    if args.end_to_end:
        _, model = train_end_to_end(
            dataset,
            backbone,
            train_cfg,
            gate_kind,
            train_ids=train_ids,
            backbone_lr_factor=cfg.experiment.backbone_lr_factor,
        )
    else:
        pairs = _feature_pairs(dataset, backbone, train_ids)
        model = train_subnet(pairs, train_cfg, gate_kind)
        model.backbone = backbone
    model.save(args.out)
    print(
        f"trained {'end-to-end' if args.end_to_end else 'subnet'} model, "
        f"final loss {model.loss_history[-1]:.6g}, saved to {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    observations, meta = load_observations(Path(args.data))
    test_ids = [int(i) for i in meta["test_ids"]]
    model = TrainedModel.load(args.model)
    backbone = model.backbone if model.backbone is not None else _backbone_from_config(cfg)

    report = evaluate_split(
        observations,
        test_ids,
        backbone,
        model,
        far_targets=cfg.eval.far_targets,
        rank_ks=cfg.eval.rank_ks,
        config={"model": str(args.model), "data": str(args.data)},
    )
    jsonio.dump(report.to_json_dict(), args.out)

    if args.csv:
        genuine, impostor, _, _ = verification_scores(observations, test_ids, backbone, model)
        thresholds, far, frr, tar = score_curve(genuine, impostor)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "far", "frr", "tar"])
            for i in range(len(thresholds)):
                label = _fmt(thresholds[i]) if np.isfinite(thresholds[i]) else "inf"
                writer.writerow([label, _fmt(far[i]), _fmt(frr[i]), _fmt(tar[i])])
    print(f"EER {report.eer:.4f}, rank-1 {report.rank_k.get(1, float('nan')):.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, seeds=range(args.seeds))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["arm", "gate", "seed", "eer", "tar@1e-2", "tar@1e-3", "rank1", "rank5"]
        )
        for row in result.rows:
            rep = row.report
            writer.writerow(
                [
                    row.arm,
                    row.gate_name,
                    row.seed,
                    _fmt(rep.eer),
                    _fmt(rep.tar_at_far.get(0.01, float("nan"))),
                    _fmt(rep.tar_at_far.get(0.001, float("nan"))),
                    _fmt(rep.rank_k.get(1, float("nan"))),
                    _fmt(rep.rank_k.get(5, float("nan"))),
                ]
            )
    print(f"{'arm':>12} {'gate':>9} {'seeds':>5} {'mean EER':>9} {'mean acc':>9}")
    for entry in result.summary():
        print(
            f"{entry['arm']:>12} {entry['gate']:>9} {entry['n_seeds']:>5} "
            f"{entry['mean_eer']:>9.4f} {entry['mean_accuracy']:>9.4f}"
        )
    return 0


def cmd_opt_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    failures = 0
    for trial in range(args.trials):
        points = rng.standard_normal((20, 3))
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        r_true = exp_map(axis * rng.uniform(0.0, np.pi))
        noisy = points @ r_true.T + args.noise * rng.standard_normal(points.shape)
        obj = wahba_objective(points, noisy)
        start_axis = rng.standard_normal(3)
        start_axis /= np.linalg.norm(start_axis)
        r0 = exp_map(start_axis * rng.uniform(0.0, np.pi / 3.0)) @ r_true
        trace = minimize(obj, r0, OptimizerConfig(alpha=0.5, max_iters=200))
        for it, (r, value, grad_norm) in enumerate(trace.iterates):
            rows.append(
                (trial, it, value, grad_norm, geodesic_distance(r, r_true))
            )
        if not trace.converged:
            failures += 1
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "iter", "u", "grad_norm", "geodesic_error"])
        for trial, it, value, grad_norm, err in rows:
            writer.writerow([trial, it, _fmt(value), _fmt(grad_norm), _fmt(err)])
    final_errors = {trial: err for trial, _, _, _, err in rows}
    worst = max(final_errors.values())
    print(
        f"{args.trials} trials, noise {args.noise}, worst final geodesic error "
        f"{worst:.3e}, {failures} non-converged"
    )
    return 0


def cmd_selftest(args) -> int:
    ok = selftest.run_selftest()
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotgate",
        description="Rotation-group numerics and the rotation-gated residual benchmark.",
    )
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="print the full default configuration as JSON and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the correction subnet")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--end-to-end", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--config", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the arm/gate ablation sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("opt-demo", help="rotation-alignment optimizer demonstration")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_opt_demo)

    p = sub.add_parser("selftest", help="run all property suites")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(jsonio.dumps(config_to_dict(BenchConfig())))
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (InvalidConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
