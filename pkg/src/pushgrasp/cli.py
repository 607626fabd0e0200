"""Command line entry point: train, eval, replay, gradcheck.

Every command is reproducible from (config, seed): one seeded generator
per run drives all randomness. SYNERGY_THREADS caps BLAS worker threads
when set before startup.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_GRADCHECK_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CHECKPOINT = 4
EXIT_MISMATCH = 5


def _cap_threads() -> None:
    cap = os.environ.get("SYNERGY_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _load_run_config(args):
    from .config import ConfigError, RunConfig, load_config, with_overrides

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {k: getattr(args, k, None) for k in
                     ("seed", "out_dir", "updates", "arms", "curriculum")}
        return with_overrides(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _make_nets(rng):
    from .agent import PolicyNet, ValueNet

    return PolicyNet(rng), ValueNet(rng)


def cmd_train(args) -> int:
    import numpy as np

    from .agent import train_loop
    from .bench import TrainEnv, make_featurizer
    from .codec import default_orientation_set
    from .config import dump_config

    cfg = _load_run_config(args)
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "config.resolved"), "w") as fh:
            fh.write(dump_config(cfg))
    except OSError as e:
        print(f"output directory not writable: {e}", file=sys.stderr)
        return EXIT_IO
    oset = default_orientation_set()
    featurize = make_featurizer(oset)

    def env_factory(index, seed_seq):
        return TrainEnv(seed_seq, curriculum=cfg.curriculum,
                        arms=cfg.arms, step_limit=cfg.ppo.step_limit, oset=oset,
                        smooth_reward=cfg.reward_smooth_fuzzy,
                        success_dominates=cfg.reward_success_dominates,
                        single_arm=cfg.single_arm)

    with open(os.path.join(cfg.out_dir, "train.csv"), "w", newline="") as log:
        train_loop(cfg.ppo, env_factory, featurize, cfg.seed,
                   out_dir=cfg.out_dir, two_stage=cfg.two_stage, log_stream=log)
    return EXIT_OK


def _load_policy(path):
    import numpy as np

    from .agent import PolicyNet, ValueNet, load_networks
    from .nn import checkpoint as ckpt

    policy, value = _make_nets(np.random.default_rng(0))
    try:
        load_networks(path, policy, value)
    except (ckpt.BadMagicError, ckpt.BadChecksumError) as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        raise SystemExit(EXIT_CHECKPOINT)
    except ckpt.CheckpointError as e:
        print(f"checkpoint mismatch: {e}", file=sys.stderr)
        raise SystemExit(EXIT_MISMATCH)
    except OSError as e:
        print(f"cannot read checkpoint: {e}", file=sys.stderr)
        raise SystemExit(EXIT_CHECKPOINT)
    return policy, value


def cmd_eval(args) -> int:
    from .bench import (ScenarioSpec, aggregate, episode_seed, format_result_row,
                        format_summary, generate_scenario, net_policy,
                        run_episode, PlacementFailureError, RESULTS_HEADER)

    policy, _ = _load_policy(args.checkpoint)
    act = net_policy(policy)
    results = []
    rows = []
    for ep in range(args.episodes):
        scene = None
        for retry in range(20):
            seed = episode_seed(args.seed, args.case, ep * 100 + retry)
            try:
                scene = generate_scenario(ScenarioSpec(case=args.case, seed=seed))
                break
            except PlacementFailureError:
                continue
        if scene is None:
            print(f"episode {ep}: placement failed repeatedly", file=sys.stderr)
            return EXIT_IO
        r = run_episode(act, scene, arms=args.arms, single_arm=args.single_arm)
        results.append(r)
        rows.append(format_result_row(args.case, seed, args.arms, r))
    summary = aggregate(results)
    out = args.out or f"results_case{args.case}_{args.arms}.csv"
    try:
        with open(out, "w") as fh:
            fh.write(RESULTS_HEADER + "\n")
            fh.write("\n".join(rows) + "\n")
            fh.write("\n".join(format_summary(summary)) + "\n")
    except OSError as e:
        print(f"cannot write results: {e}", file=sys.stderr)
        return EXIT_IO
    for line in format_summary(summary):
        print(line.lstrip("# "))
    return EXIT_OK


def cmd_replay(args) -> int:
    from .bench import ScenarioSpec, generate_scenario, net_policy, run_episode
    from .replay import motion_record, render_frame, write_ppm
    from .world import load_scene

    policy, _ = _load_policy(args.checkpoint)
    act = net_policy(policy)
    if args.scene:
        try:
            scene = load_scene(args.scene)
        except (OSError, ValueError) as e:
            print(f"cannot load scene: {e}", file=sys.stderr)
            return EXIT_MISMATCH
    else:
        scene = generate_scenario(ScenarioSpec(case=args.case, seed=args.seed))
    os.makedirs(args.out_dir, exist_ok=True)
    records = []

    def recorder(step, scn, obs, motion):
        img = render_frame(scn, obs, motion)
        write_ppm(os.path.join(args.out_dir, f"step_{step:03d}.ppm"), img)
        records.append(motion_record(step, motion))

    result = run_episode(act, scene, arms=args.arms, single_arm=args.single_arm,
                         recorder=recorder)
    with open(os.path.join(args.out_dir, "motions.txt"), "w") as fh:
        fh.write("\n".join(records) + "\n")
        fh.write(f"result completed={int(result.completed)} "
                 f"fail_reason={result.fail_reason} motions={result.motions}\n")
    print(f"replayed {result.steps} steps -> {args.out_dir} "
          f"({result.fail_reason if not result.completed else 'completed'})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .agent import PolicyNet, ValueNet
    from .nn import gradcheck as gc
    from .nn import layers

    rng = np.random.default_rng(args.seed)
    checks = []
    checks.append(("conv2d", layers.Sequential([layers.Conv2d(3, 4, 3, pad=1, rng=rng)]),
                   rng.standard_normal((2, 3, 6, 6))))
    checks.append(("depthwise", layers.Sequential([layers.DepthwiseConv(4, 3, 1, rng=rng)]),
                   rng.standard_normal((2, 4, 6, 6))))
    checks.append(("pointwise", layers.Sequential([layers.PointwiseConv(4, 3, rng=rng)]),
                   rng.standard_normal((2, 4, 5, 5))))
    checks.append(("linear", layers.Sequential([layers.Linear(10, 6, rng=rng)]),
                   rng.standard_normal((3, 10))))
    checks.append(("relu", layers.Sequential([layers.Linear(8, 8, rng=rng), layers.ReLU(),
                                              layers.Linear(8, 4, rng=rng)]),
                   rng.standard_normal((3, 8))))
    checks.append(("adaptive_pool", layers.Sequential([layers.AdaptiveAvgPool((2, 2)),
                                                       layers.Flatten(),
                                                       layers.Linear(16, 3, rng=rng)]),
                   rng.standard_normal((2, 4, 9, 9))))
    policy = PolicyNet(rng, in_channels=10, grid=8, trunk_ch=6, restore_ch=10,
                       fc=(12, 10), orientations=12)
    checks.append(("policy_net", policy, rng.standard_normal((1, 10, 8, 8))))
    value = ValueNet(rng, in_channels=10, grid=8, trunk_ch=6, restore_ch=10, fc=(12, 8))
    checks.append(("value_net", value, rng.standard_normal((1, 10, 8, 8))))

    ok = True
    for name, net, x in checks:
        rep = gc.gradcheck(net, x, rng, tolerance=args.tolerance)
        status = "pass" if rep["passed"] else "FAIL"
        print(f"{name:14s} max_rel_err {rep['max_rel_err']:.3e}  {status}")
        ok &= rep["passed"]
    return EXIT_OK if ok else EXIT_GRADCHECK_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushgrasp",
                                description="dual-arm push-grasp synergy workbench")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run PPO training")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--updates", type=int)
    t.add_argument("--arms", choices=["dual", "single"])
    t.add_argument("--curriculum", choices=["packed", "clutter", "grasp"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a benchmark case")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--case", type=int, default=2, choices=[1, 2, 3, 4, 5])
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--arms", choices=["dual", "single"], default="dual")
    e.add_argument("--single-arm", dest="single_arm", default="right",
                   choices=["left", "right"])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="re-run one episode, writing PPM frames")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--scene", help="scene snapshot file")
    r.add_argument("--case", type=int, default=2, choices=[1, 2, 3, 4, 5])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--arms", choices=["dual", "single"], default="dual")
    r.add_argument("--single-arm", dest="single_arm", default="right",
                   choices=["left", "right"])
    r.add_argument("--out-dir", dest="out_dir", default="replay_out")
    r.set_defaults(func=cmd_replay)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
