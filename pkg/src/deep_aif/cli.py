"""Command-line pipeline: bootstrap, train, demo, plan, run, report.

Every command reads one flat JSON config (keys below, dotted names), applies
``--set key=value`` overrides, and writes its artifacts plus a
``<command>.manifest.json`` holding the resolved config, its hash, the master
seed and a timestamp. Data files carry no timestamps, so repeating a command
with the same config reproduces them byte for byte.

Exit codes: 0 ok, 2 config or contract error, 3 numeric divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .agent import (
    collect_random,
    expert_demonstration,
    initial_particles,
    preferred_state,
    run_active_inference,
)
from .env import Action, EnvConfig, MountainCar, Variant
from .errors import ConfigError, ContractError, DivergenceError
from .gaussian import DiagGaussian
from .genmodel import (
    Episode,
    GenerativeModel,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_stages,
)
from .planner import PlanConfig, branch_paths, policy_prior, select_policy, selected_path, walk_nodes

log = logging.getLogger("deep_aif")

DEFAULTS: dict = {
    "seed": 0,
    "variant": "zero",
    "obs_noise_std": 0.05,
    "start_position": -0.5,
    "max_steps": 200,
    "bootstrap.episodes": 200,
    "bootstrap.steps": 100,
    "bootstrap.max_hold": 30,
    "bootstrap.random_start": True,
    "model.state_dim": 4,
    "model.hidden": 20,
    "model.residual": False,
    "model.initial_prior": "transition",
    "train.schedule": [[0.01, 50], [0.002, 50], [0.0005, 50]],
    "train.minibatch": 10,
    "train.optimizer": "adam",
    "plan.K": 30,
    "plan.D": 3,
    "plan.N": 100,
    "plan.gamma": 1.0,
    "plan.rho": 0.1,
    "plan.stochastic": False,
    "plan.workers": 1,
    "preferred.std": 1.0,
    "preferred.sample_final": False,
}

NULLABLE = {"start_position"}


# -- config -------------------------------------------------------------------


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _check_type(key: str, value, default) -> None:
    if value is None and key in NULLABLE:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")


def resolve_config(path: str | None = None, overrides: list[str] | tuple = (),
                   seed: int | None = None) -> dict:
    cfg = dict(DEFAULTS)
    layers = []
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        layers.append(doc)
    over = {}
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        over[key.strip()] = parse_value(text)
    layers.append(over)
    if seed is not None:
        layers.append({"seed": seed})
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            _check_type(key, value, DEFAULTS[key])
            cfg[key] = value
    if cfg["variant"] not in [v.value for v in Variant]:
        raise ConfigError(f"variant must be one of {[v.value for v in Variant]}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def env_config(cfg: dict, **kw) -> EnvConfig:
    base = dict(variant=Variant(cfg["variant"]), obs_noise_std=float(cfg["obs_noise_std"]),
                start_position=cfg["start_position"], max_steps=int(cfg["max_steps"]),
                seed=int(cfg["seed"]))
    base.update(kw)
    return EnvConfig(**base)


def plan_config(cfg: dict, preferred: DiagGaussian) -> PlanConfig:
    return PlanConfig(preferred=preferred, K=cfg["plan.K"], D=cfg["plan.D"], N=cfg["plan.N"],
                      gamma=float(cfg["plan.gamma"]), rho=float(cfg["plan.rho"]),
                      stochastic=cfg["plan.stochastic"], workers=cfg["plan.workers"])


# -- file helpers ---------------------------------------------------------------


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(out: Path, command: str, cfg: dict, files: list[str], **extra) -> None:
    doc = {"command": command, "seed": cfg["seed"], "config_hash": config_hash(cfg), "config": cfg,
           "files": sorted(files), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **extra}
    (out / f"{command}.manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def episode_rows(ep: Episode):
    for t, o in enumerate(ep.observations):
        a = Action(int(ep.actions[t])).letter if t < len(ep.actions) else ""
        yield t, float(o), a


def read_episode(path: Path) -> Episode:
    rows = read_csv(path)
    if not rows or list(rows[0]) != ["t", "obs", "action"]:
        raise ConfigError(f"{path}: expected header t,obs,action")
    obs = [float(r["obs"]) for r in rows]
    try:
        acts = [int(Action.from_letter(r["action"])) for r in rows[:-1]]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad action letter ({exc})") from exc
    return Episode(np.array(obs), np.array(acts, dtype=np.int64))


def load_dataset(data_dir: Path) -> list[Episode]:
    files = sorted((data_dir / "episodes").glob("episode_*.csv"))
    if not files:
        raise FileNotFoundError(f"no episodes found under {data_dir / 'episodes'}")
    return [read_episode(f) for f in files]


def load_model(path) -> GenerativeModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not a model checkpoint ({exc})") from exc


# -- pipeline steps usable from Python ------------------------------------------


def bootstrap_dataset(cfg: dict) -> list[Episode]:
    start = None if cfg["bootstrap.random_start"] else cfg["start_position"]
    env_cfg = env_config(cfg, start_position=start, max_steps=int(cfg["bootstrap.steps"]))
    return collect_random(env_cfg, int(cfg["bootstrap.episodes"]), np.random.default_rng([cfg["seed"], 0]),
                          max_hold=int(cfg["bootstrap.max_hold"]))


def train_model(cfg: dict, dataset: list[Episode], progress=None) -> tuple[GenerativeModel, list[float]]:
    m = GenerativeModel.create(seed=int(cfg["seed"]), state_dim=int(cfg["model.state_dim"]),
                               hidden=int(cfg["model.hidden"]), residual=cfg["model.residual"],
                               initial_prior=cfg["model.initial_prior"])
    stages = [(float(lr), int(ep)) for lr, ep in cfg["train.schedule"]]
    tcfg = TrainConfig(seed=int(cfg["seed"]), minibatch_episodes=int(cfg["train.minibatch"]),
                       optimizer=cfg["train.optimizer"])
    curve = train_stages(m, dataset, stages, tcfg, progress)
    m.meta.update(variant=cfg["variant"], config_hash=config_hash(cfg))
    return m, curve


def demo_preferred(cfg: dict, m: GenerativeModel) -> tuple[Episode, DiagGaussian]:
    """Expert episode from the configured start and its encoded end state."""
    demo = expert_demonstration(env_config(cfg, variant=Variant.ZERO_VELOCITY),
                                np.random.default_rng([cfg["seed"], 3]))
    pref = preferred_state(m, demo, np.random.default_rng([cfg["seed"], 4]), std=float(cfg["preferred.std"]),
                           sample_final=cfg["preferred.sample_final"])
    return demo, pref


def read_preferred(path) -> DiagGaussian:
    doc = json.loads(Path(path).read_text())
    return DiagGaussian(np.array(doc["mean"], dtype=np.float64), np.array(doc["std"], dtype=np.float64))


def plan_from_start(cfg: dict, m: GenerativeModel, pref: DiagGaussian):
    """First replan of a run with this master seed: same env, belief and plan streams."""
    seed = int(cfg["seed"])
    env = MountainCar(env_config(cfg), np.random.default_rng([seed, 0]))
    obs = env.reset()
    pcfg = plan_config(cfg, pref)
    particles = initial_particles(m, obs, pcfg.N, np.random.default_rng([seed, 1]))
    action, roots = select_policy(m, particles, pcfg, np.random.default_rng([seed, 2]))
    return action, roots, pcfg


def run_rows(rec, K: int):
    replan_ts = {e.t for e in rec.replans}
    for t in range(len(rec.observations)):
        a = rec.actions[t]
        yield (t, rec.true_positions[t], rec.true_velocities[t], rec.observations[t],
               "" if a is None else Action(a).letter, t in replan_ts)


def _run_one(args):
    checkpoint, cfg, pref_mean, pref_std, seed = args
    m = load_model(checkpoint)
    pref = DiagGaussian(np.asarray(pref_mean), np.asarray(pref_std))
    return seed, run_active_inference(m, env_config(cfg, seed=seed), plan_config(cfg, pref), seed)


# -- commands ---------------------------------------------------------------------


def cmd_bootstrap(cfg: dict, out: Path) -> list[Path]:
    data = bootstrap_dataset(cfg)
    ep_dir = out / "episodes"
    ep_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, ep in enumerate(data):
        name = ep_dir / f"episode_{i:04d}.csv"
        write_csv(name, ["t", "obs", "action"], episode_rows(ep))
        files.append(name)
    write_manifest(out, "bootstrap", cfg, [str(f.relative_to(out)) for f in files])
    return files


def cmd_train(cfg: dict, data_dir: Path, out: Path) -> Path:
    dataset = load_dataset(data_dir)
    out.mkdir(parents=True, exist_ok=True)
    m, curve = train_model(cfg, dataset, lambda e, v: log.info("epoch %d loss %.5f", e, v))
    ckpt = out / "checkpoint.json"
    save_checkpoint(m, ckpt)
    lrs = [float(lr) for lr, ep in cfg["train.schedule"] for _ in range(int(ep))]
    write_csv(out / "loss.csv", ["epoch", "loss", "learning_rate"],
              ((i + 1, v, lrs[i]) for i, v in enumerate(curve)))
    data_manifest = data_dir / "bootstrap.manifest.json"
    extra = {}
    if data_manifest.is_file():
        extra["data_config_hash"] = json.loads(data_manifest.read_text()).get("config_hash")
    write_manifest(out, "train", cfg, ["checkpoint.json", "loss.csv"], episodes=len(dataset), **extra)
    return ckpt


def cmd_demo(cfg: dict, checkpoint: Path, out: Path) -> Path:
    m = load_model(checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    demo, pref = demo_preferred(cfg, m)
    write_csv(out / "demo.csv", ["t", "obs", "action"], episode_rows(demo))
    write_json(out / "preferred.json", {"mean": pref.mean.tolist(), "std": pref.std.tolist(),
                                        "seed": cfg["seed"], "config_hash": config_hash(cfg),
                                        "demo_steps": len(demo.actions)})
    write_manifest(out, "demo", cfg, ["demo.csv", "preferred.json"])
    return out / "preferred.json"


def _preferred(cfg, m, path):
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"preferred state not found: {path}")
        return read_preferred(path)
    return demo_preferred(cfg, m)[1]


def cmd_plan(cfg: dict, checkpoint: Path, out: Path, preferred_path=None, plot: bool = False) -> Path:
    m = load_model(checkpoint)
    pref = _preferred(cfg, m, preferred_path)
    action, roots, pcfg = plan_from_start(cfg, m, pref)
    out.mkdir(parents=True, exist_ok=True)
    paths = branch_paths(roots, pcfg.rho)
    chosen = selected_path(roots, pcfg.gamma)
    write_csv(out / "branches.csv",
              ["branch_id", "policy_sequence", "kl_total", "entropy_total", "g_value", "selected_flag"],
              ((p.branch_id, p.label, p.kl_total, p.entropy_total, p.g_value, p.policy_sequence == chosen)
               for p in paths))

    def traj_rows():
        for p in paths:
            pos = p.sampled_positions
            for n in range(pos.shape[0]):
                for t in range(pos.shape[1]):
                    yield p.branch_id, p.label, n, t + 1, pos[n, t]

    write_csv(out / "trajectories.csv", ["branch_id", "policy_sequence", "rollout", "t", "obs_mean"],
              traj_rows())
    weights = dict(zip([r.label for r in roots], policy_prior([r.g_value for r in roots], pcfg.gamma)))
    for node in walk_nodes(roots):
        if node.children:
            w = policy_prior([c.g_value for c in node.children], pcfg.gamma)
            weights.update(zip([c.label for c in node.children], w))
    write_csv(out / "tree.csv", ["node", "depth", "kl_total", "entropy_total", "g_value", "prior_weight"],
              ((n.label, len(n.policy_sequence), n.kl_total, n.entropy_total, n.g_value, weights[n.label])
               for n in walk_nodes(roots)))
    files = ["branches.csv", "trajectories.csv", "tree.csv"]
    if plot:
        from .report import plot_branches
        plot_branches(out / "branches.csv", out / "trajectories.csv", out / "branches.svg",
                      goal=env_config(cfg).goal_position)
        files.append("branches.svg")
    write_manifest(out, "plan", cfg, files, root_action=action.letter, selected="".join(a.letter for a in chosen))
    return out / "branches.csv"


def cmd_run(cfg: dict, checkpoint: Path, out: Path, seeds=None, jobs: int = 1, preferred_path=None) -> list[dict]:
    m = load_model(checkpoint)
    pref = _preferred(cfg, m, preferred_path)
    seeds = [int(cfg["seed"])] if not seeds else [int(s) for s in seeds]
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(str(checkpoint), cfg, pref.mean.tolist(), pref.std.tolist(), s) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        pcfg = plan_config(cfg, pref)
        results = [(s, run_active_inference(m, env_config(cfg, seed=s), pcfg, s)) for s in seeds]
    summaries, files = [], []
    for seed, rec in results:
        write_csv(out / f"run_{seed}.csv", ["t", "true_pos", "true_vel", "obs", "action", "replan_flag"],
                  run_rows(rec, cfg["plan.K"]))
        summary = {"goal_reached": rec.goal_reached, "steps": rec.steps_taken, "seed": seed,
                   "first_action": rec.first_action.letter,
                   "replan_actions": "".join(e.action.letter for e in rec.replans),
                   "config_hash": config_hash(cfg)}
        write_json(out / f"run_{seed}.json", summary)
        files += [f"run_{seed}.csv", f"run_{seed}.json"]
        summaries.append(summary)
    if len(seeds) > 1:
        rate = float(np.mean([s["goal_reached"] for s in summaries]))
        left = float(np.mean([s["first_action"] == "L" for s in summaries]))
        write_json(out / "runs_summary.json", {"seeds": seeds, "goal_rate": rate, "left_first_rate": left,
                                               "config_hash": config_hash(cfg)})
        files.append("runs_summary.json")
    write_manifest(out, "run", cfg, files)
    return summaries


def cmd_report(cfg: dict, src: Path, out: Path) -> list[Path]:
    from .report import render_directory
    if not src.is_dir():
        raise FileNotFoundError(f"report input directory not found: {src}")
    out.mkdir(parents=True, exist_ok=True)
    made = render_directory(src, out, goal=env_config(cfg).goal_position)
    write_manifest(out, "report", cfg, [p.name for p in made], source=str(src))
    return made


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with flat dotted keys")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; VALUE is parsed as JSON when possible")
    common.add_argument("--out", required=True, type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deep-aif", description="Deep active inference on Mountain Car.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bootstrap", parents=[common], help="collect random-agent episodes")
    t = sub.add_parser("train", parents=[common], help="train the generative model")
    t.add_argument("--data", required=True, type=Path, help="bootstrap output directory")
    for name, help_ in (("demo", "encode the expert demonstration"), ("plan", "evaluate the policy tree"),
                        ("run", "closed-loop active inference")):
        c = sub.add_parser(name, parents=[common], help=help_)
        c.add_argument("--checkpoint", required=True, type=Path)
        if name != "demo":
            c.add_argument("--preferred", type=Path, help="preferred.json from the demo command")
    sub.choices["plan"].add_argument("--plot", action="store_true", help="also write branches.svg")
    sub.choices["run"].add_argument("--seeds", type=int, nargs="+", help="run several seeds")
    sub.choices["run"].add_argument("--jobs", type=int, default=1, help="worker processes for --seeds")
    r = sub.add_parser("report", parents=[common], help="render SVG figures from command outputs")
    r.add_argument("--input", required=True, type=Path, help="directory with loss/branch/run CSVs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.overrides, args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "bootstrap":
            files = cmd_bootstrap(cfg, out)
            print(f"wrote {len(files)} episodes to {out / 'episodes'}")
        elif args.command == "train":
            print(f"wrote {cmd_train(cfg, args.data, out)}")
        elif args.command == "demo":
            print(f"wrote {cmd_demo(cfg, args.checkpoint, out)}")
        elif args.command == "plan":
            print(f"wrote {cmd_plan(cfg, args.checkpoint, out, args.preferred, args.plot)}")
        elif args.command == "run":
            for s in cmd_run(cfg, args.checkpoint, out, args.seeds, args.jobs, args.preferred):
                print(f"seed {s['seed']}: goal_reached={s['goal_reached']} steps={s['steps']} "
                      f"actions={s['replan_actions']}")
        elif args.command == "report":
            for path in cmd_report(cfg, args.input, out):
                print(f"wrote {path}")
    except DivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
