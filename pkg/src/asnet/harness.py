"""Experiment harness: JSON configs in, metrics CSVs, checkpoints,
summary tables, and SVG plots out.

Every output is byte-identical across reruns of the same config: floats
are written with repr-faithful %.17g, files use UTF-8 and LF newlines,
plots are generated with fixed geometry and no timestamps, and all
randomness descends from the experiment seeds.

A checkpoint is a pair of files: <stem>.json (manifest: configs plus
tensor names and shapes in order) and <stem>.bin (the tensors' float64
values, little-endian, concatenated in manifest order).
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import environments as E
from .agents import AgentConfig, parse_architecture
from .errors import CheckpointError, ConfigError
from .training import (
    SALT_EVAL_IID,
    SALT_EVAL_OOD,
    PpoConfig,
    Team,
    Trainer,
    evaluate_policy,
)

CHECKPOINT_FORMAT = "asnet-checkpoint-v1"
TASKS = ("ghostrun", "mazecleaners")
PHASES = ("train", "iid_test", "ood_test")

METRICS_COLUMNS = ("seed", "hypothesis", "task", "phase", "episode", "episode_reward",
                   "policy_loss", "value_loss", "entropy", "contrastive_loss", "n_ghosts")


def fmt_float(x: float | None) -> str:
    """%.17g renders float64 exactly; None renders as an empty field."""
    return "" if x is None else format(float(x), ".17g")


def _build_dataclass(cls, overrides: dict, what: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{what} section must be an object, got {type(overrides).__name__}")
    valid = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown {what} option(s): {', '.join(sorted(unknown))}")
    return cls(**overrides)


def env_config_for_task(task: str, overrides: dict | None = None):
    if task == "ghostrun":
        cfg = _build_dataclass(E.GhostRunConfig, overrides or {}, "env")
    elif task == "mazecleaners":
        cfg = _build_dataclass(E.MazeConfig, overrides or {}, "env")
    else:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    cfg.validate()
    return cfg


@dataclass
class ExperimentConfig:
    task: str
    hypothesis: str
    episodes: int = 1000
    eval_episodes: int = 100
    seeds: tuple = (0,)
    continual: bool = False
    out_dir: str | None = None
    env: object = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        parse_architecture(self.hypothesis)
        if self.env is None:
            self.env = env_config_for_task(self.task)
        if self.episodes < 1:
            raise ConfigError(f"episodes must be at least 1, got {self.episodes}")
        if self.eval_episodes < 0:
            raise ConfigError(f"eval_episodes cannot be negative, got {self.eval_episodes}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds cannot be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds contain duplicates: {list(self.seeds)}")
        if self.continual and self.task != "ghostrun":
            raise ConfigError("continual mode only applies to the ghostrun task")
        self.ppo.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {"task", "hypothesis", "episodes", "eval_episodes", "seeds",
                 "continual", "out_dir", "env", "agent", "ppo"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment option(s): {', '.join(sorted(unknown))}")
        for key in ("task", "hypothesis"):
            if key not in d:
                raise ConfigError(f"experiment config is missing {key!r}")
        task = d["task"]
        try:
            return cls(
                task=task,
                hypothesis=d["hypothesis"],
                episodes=d.get("episodes", 1000),
                eval_episodes=d.get("eval_episodes", 100),
                seeds=d.get("seeds", [0]),
                continual=d.get("continual", False),
                out_dir=d.get("out_dir"),
                env=env_config_for_task(task, d.get("env", {})),
                agent=_build_dataclass(AgentConfig, d.get("agent", {}), "agent"),
                ppo=_build_dataclass(PpoConfig, d.get("ppo", {}), "ppo"),
            )
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# metrics rows and CSV


@dataclass
class MetricsRow:
    seed: int
    hypothesis: str
    task: str
    phase: str
    episode: int
    episode_reward: float
    policy_loss: float | None = None
    value_loss: float | None = None
    entropy: float | None = None
    contrastive_loss: float | None = None
    n_ghosts: int | None = None


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in rows:
            writer.writerow([
                str(r.seed), r.hypothesis, r.task, r.phase, str(r.episode),
                fmt_float(r.episode_reward), fmt_float(r.policy_loss),
                fmt_float(r.value_loss), fmt_float(r.entropy),
                fmt_float(r.contrastive_loss),
                "" if r.n_ghosts is None else str(r.n_ghosts),
            ])


def read_metrics_csv(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRICS_COLUMNS):
            raise ConfigError(f"{path}: unexpected metrics header {header}")
        for line in reader:
            if len(line) != len(METRICS_COLUMNS):
                raise ConfigError(f"{path}: row has {len(line)} fields, "
                                  f"expected {len(METRICS_COLUMNS)}")
            (seed, hyp, task, phase, episode, reward,
             ploss, vloss, ent, closs, ghosts) = line
            rows.append(MetricsRow(
                seed=int(seed), hypothesis=hyp, task=task, phase=phase,
                episode=int(episode), episode_reward=float(reward),
                policy_loss=float(ploss) if ploss else None,
                value_loss=float(vloss) if vloss else None,
                entropy=float(ent) if ent else None,
                contrastive_loss=float(closs) if closs else None,
                n_ghosts=int(ghosts) if ghosts else None,
            ))
    return rows


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(stem, team: Team, task: str, env_config) -> None:
    """Write <stem>.json and <stem>.bin for a trained team."""
    stem = Path(stem)
    names, shapes, blobs = [], [], []
    for name, tensor in team.parameters():
        names.append(name)
        shapes.append(list(tensor.data.shape))
        blobs.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    net = team.net_for(0)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "task": task,
        "hypothesis": team.arch.value,
        "n_agents": team.n_agents,
        "view_shape": list(net.view_shape),
        "env": asdict(env_config),
        "agent": asdict(net.config),
        "dtype": "<f8",
        "tensors": [{"name": n, "shape": s} for n, s in zip(names, shapes)],
    }
    with open(stem.with_suffix(".json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(stem.with_suffix(".bin"), "wb") as fh:
        fh.write(b"".join(blobs))


@dataclass
class LoadedCheckpoint:
    team: Team
    task: str
    env_config: object
    manifest: dict


def load_checkpoint(stem) -> LoadedCheckpoint:
    """Rebuild the team a checkpoint describes; values load bit-exactly."""
    stem = Path(stem)
    with open(stem.with_suffix(".json"), encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{stem}: manifest is not valid JSON ({exc})") from exc
    for key in ("format", "task", "hypothesis", "n_agents", "view_shape",
                "env", "agent", "dtype", "tensors"):
        if key not in manifest:
            raise CheckpointError(f"{stem}: manifest is missing {key!r}")
    if manifest["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{stem}: format {manifest['format']!r} is not "
                              f"{CHECKPOINT_FORMAT!r}")
    if manifest["dtype"] != "<f8":
        raise CheckpointError(f"{stem}: unsupported dtype {manifest['dtype']!r}")

    try:
        env_config = env_config_for_task(manifest["task"], manifest["env"])
        agent_config = _build_dataclass(AgentConfig, manifest["agent"], "agent")
    except ConfigError as exc:
        raise CheckpointError(f"{stem}: {exc}") from exc
    view_shape = tuple(manifest["view_shape"])
    team = Team(manifest["hypothesis"], view_shape, agent_config,
                seed=0, n_agents=int(manifest["n_agents"]))

    names = [t["name"] for t in manifest["tensors"]]
    shapes = [tuple(t["shape"]) for t in manifest["tensors"]]
    actual = [n for n, _ in team.parameters()]
    if names != actual:
        raise CheckpointError(f"{stem}: tensor names do not match the architecture "
                              f"(first mismatch around "
                              f"{next((a for a, b in zip(names, actual) if a != b), '?')})")
    blob = stem.with_suffix(".bin").read_bytes()
    expected_bytes = sum(int(np.prod(s)) * 8 for s in shapes)
    if len(blob) != expected_bytes:
        raise CheckpointError(f"{stem}: blob holds {len(blob)} bytes, "
                              f"manifest implies {expected_bytes}")
    offset = 0
    for (_, tensor), shape in zip(team.parameters(), shapes):
        if tensor.data.shape != shape:
            raise CheckpointError(f"{stem}: shape {shape} does not match "
                                  f"{tensor.data.shape}")
        size = int(np.prod(shape)) * 8
        tensor.data[...] = np.frombuffer(blob[offset:offset + size],
                                         dtype="<f8").reshape(shape)
        offset += size
    return LoadedCheckpoint(team, manifest["task"], env_config, manifest)


# ---------------------------------------------------------------------------
# per-seed training job


def train_single_seed(config: ExperimentConfig, seed: int):
    """Train one seed, run both evaluations, and return (rows, team)."""
    trainer = Trainer(config.env, config.hypothesis, config.agent, config.ppo,
                      seed=seed, continual=config.continual)
    rows = []
    for _ in range(config.episodes):
        res = trainer.run_episode()
        rows.append(MetricsRow(
            seed=seed, hypothesis=config.hypothesis, task=config.task,
            phase="train", episode=res.episode, episode_reward=res.reward,
            policy_loss=res.stats.policy_loss, value_loss=res.stats.value_loss,
            entropy=res.stats.entropy, contrastive_loss=res.stats.contrastive_loss,
            n_ghosts=res.n_ghosts))

    ood_config = E.ood_variant(config.env)
    for phase, env_config, salt in (("iid_test", config.env, SALT_EVAL_IID),
                                    ("ood_test", ood_config, SALT_EVAL_OOD)):
        rewards = evaluate_policy(trainer.team, env_config, config.eval_episodes,
                                  seed, salt=salt)
        ghosts = getattr(env_config, "n_ghosts", None)
        for i, r in enumerate(rewards):
            rows.append(MetricsRow(
                seed=seed, hypothesis=config.hypothesis, task=config.task,
                phase=phase, episode=i, episode_reward=float(r), n_ghosts=ghosts))
    return rows, trainer.team


def _seed_job(args):
    config, seed, out_dir = args
    rows, team = train_single_seed(config, seed)
    out = Path(out_dir)
    write_metrics_csv(out / f"metrics_seed{seed}.csv", rows)
    save_checkpoint(out / f"checkpoint_seed{seed}", team, config.task, config.env)
    return seed, rows


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class PhaseSummary:
    task: str
    hypothesis: str
    phase: str
    n_seeds: int
    mean_reward: float
    std_reward: float


def summarize(rows) -> list:
    """Per (task, hypothesis, phase): cross-seed mean of per-seed mean
    rewards, with the population standard deviation across seed means."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.task, r.hypothesis, r.phase), {}).setdefault(
            r.seed, []).append(r.episode_reward)
    out = []
    for (task, hyp, phase) in sorted(groups):
        seed_means = [float(np.mean(v)) for _, v in sorted(groups[(task, hyp, phase)].items())]
        out.append(PhaseSummary(task, hyp, phase, len(seed_means),
                                float(np.mean(seed_means)),
                                float(np.std(seed_means))))
    return out


def write_comparison_csv(path, summaries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task", "hypothesis", "phase", "n_seeds",
                         "mean_reward", "std_reward"])
        for s in summaries:
            writer.writerow([s.task, s.hypothesis, s.phase, str(s.n_seeds),
                             fmt_float(s.mean_reward), fmt_float(s.std_reward)])


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#e377c2", "#7f7f7f")

_SVG_W, _SVG_H = 760, 420
_ML, _MR, _MT, _MB = 64, 150, 24, 48  # margins; right edge holds the legend


def _scaler(lo, hi, out_lo, out_hi):
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def _axis_ticks(lo, hi, n=5):
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _svg_open(title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
            f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">',
            f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
            f'<text x="{_ML}" y="16" font-family="sans-serif" font-size="13" '
            f'fill="#333">{title}</text>']


def _svg_axes(lines, sx, sy, x_ticks, y_ticks, x_label, y_label):
    x0, x1 = _ML, _SVG_W - _MR
    y0, y1 = _SVG_H - _MB, _MT
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/>')
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>')
    for t in x_ticks:
        px = sx(t)
        lines.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" '
                     f'stroke="#333"/>')
        lines.append(f'<text x="{px:.2f}" y="{y0 + 18}" font-family="sans-serif" '
                     f'font-size="11" fill="#333" text-anchor="middle">'
                     f'{format(t, ".6g")}</text>')
    for t in y_ticks:
        py = sy(t)
        lines.append(f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" '
                     f'stroke="#333"/>')
        lines.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" font-family="sans-serif" '
                     f'font-size="11" fill="#333" text-anchor="end">'
                     f'{format(t, ".6g")}</text>')
    lines.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{_SVG_H - 8}" '
                 f'font-family="sans-serif" font-size="12" fill="#333" '
                 f'text-anchor="middle">{x_label}</text>')
    lines.append(f'<text x="14" y="{(y0 + y1) / 2:.2f}" font-family="sans-serif" '
                 f'font-size="12" fill="#333" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.2f})">{y_label}</text>')


def svg_train_curves(rows) -> str:
    """Per-seed training reward curves (thin) and the cross-seed mean
    (bold), one color per hypothesis."""
    train = [r for r in rows if r.phase == "train"]
    if not train:
        raise ConfigError("svg_train_curves: no train-phase rows")
    hyps = sorted({r.hypothesis for r in train})
    by_hyp_seed: dict = {}
    for r in train:
        by_hyp_seed.setdefault((r.hypothesis, r.seed), {})[r.episode] = r.episode_reward
    episodes = sorted({r.episode for r in train})
    all_rewards = [r.episode_reward for r in train]
    sx = _scaler(min(episodes), max(episodes), _ML, _SVG_W - _MR)
    lo, hi = min(all_rewards), max(all_rewards)
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    sy = _scaler(lo - pad, hi + pad, _SVG_H - _MB, _MT)

    lines = _svg_open("training reward per episode")
    _svg_axes(lines, sx, sy, _axis_ticks(min(episodes), max(episodes)),
              _axis_ticks(lo - pad, hi + pad), "episode", "episode reward")
    for hi_idx, hyp in enumerate(hyps):
        color = PALETTE[hi_idx % len(PALETTE)]
        seeds = sorted(s for h, s in by_hyp_seed if h == hyp)
        per_episode: dict = {}
        for seed in seeds:
            series = by_hyp_seed[(hyp, seed)]
            pts = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in sorted(series.items()))
            lines.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1" opacity="0.35"/>')
            for e, v in series.items():
                per_episode.setdefault(e, []).append(v)
        mean_pts = " ".join(f"{sx(e):.2f},{sy(float(np.mean(v))):.2f}"
                            for e, v in sorted(per_episode.items()))
        lines.append(f'<polyline points="{mean_pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        ly = _MT + 16 * hi_idx
        lines.append(f'<rect x="{_SVG_W - _MR + 12}" y="{ly}" width="14" height="4" '
                     f'fill="{color}"/>')
        lines.append(f'<text x="{_SVG_W - _MR + 32}" y="{ly + 6}" '
                     f'font-family="sans-serif" font-size="12" fill="#333">{hyp} '
                     f'({len(seeds)} seeds)</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def svg_test_boxes(rows) -> str:
    """Box plot of evaluation rewards: one box per (hypothesis, phase),
    quartile box, median line, min/max whiskers."""
    tests = [r for r in rows if r.phase in ("iid_test", "ood_test")]
    if not tests:
        raise ConfigError("svg_test_boxes: no test-phase rows")
    groups: dict = {}
    for r in tests:
        groups.setdefault((r.hypothesis, r.phase), []).append(r.episode_reward)
    keys = sorted(groups)
    all_rewards = [v for vals in groups.values() for v in vals]
    lo, hi = min(all_rewards), max(all_rewards)
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    sy = _scaler(lo - pad, hi + pad, _SVG_H - _MB, _MT)
    x0, x1 = _ML, _SVG_W - _MR
    slot = (x1 - x0) / len(keys)
    box_w = min(48.0, slot * 0.5)

    lines = _svg_open("evaluation reward by architecture")
    _svg_axes(lines, lambda v: v, sy, [], _axis_ticks(lo - pad, hi + pad),
              "", "episode reward")
    for i, key in enumerate(keys):
        hyp, phase = key
        vals = np.array(groups[key])
        q1, med, q3 = (float(np.percentile(vals, p)) for p in (25, 50, 75))
        vmin, vmax = float(vals.min()), float(vals.max())
        cx = x0 + slot * (i + 0.5)
        color = PALETTE[sorted({h for h, _ in keys}).index(hyp) % len(PALETTE)]
        fill = color if phase == "iid_test" else "white"
        lines.append(f'<line x1="{cx:.2f}" y1="{sy(vmin):.2f}" x2="{cx:.2f}" '
                     f'y2="{sy(vmax):.2f}" stroke="{color}"/>')
        for w in (vmin, vmax):
            lines.append(f'<line x1="{cx - box_w / 4:.2f}" y1="{sy(w):.2f}" '
                         f'x2="{cx + box_w / 4:.2f}" y2="{sy(w):.2f}" stroke="{color}"/>')
        lines.append(f'<rect x="{cx - box_w / 2:.2f}" y="{sy(q3):.2f}" '
                     f'width="{box_w:.2f}" height="{sy(q1) - sy(q3):.2f}" '
                     f'fill="{fill}" fill-opacity="0.5" stroke="{color}"/>')
        lines.append(f'<line x1="{cx - box_w / 2:.2f}" y1="{sy(med):.2f}" '
                     f'x2="{cx + box_w / 2:.2f}" y2="{sy(med):.2f}" stroke="{color}" '
                     f'stroke-width="2"/>')
        label = f"{hyp} {'iid' if phase == 'iid_test' else 'ood'}"
        lines.append(f'<text x="{cx:.2f}" y="{_SVG_H - _MB + 18}" '
                     f'font-family="sans-serif" font-size="11" fill="#333" '
                     f'text-anchor="middle">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def aggregate_and_emit(out_dir, rows, emit=("csv", "svg")) -> list:
    """comparison.csv plus the two SVG plots; returns the summaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = summarize(rows)
    if "csv" in emit:
        write_comparison_csv(out / "comparison.csv", summaries)
    if "svg" in emit:
        if any(r.phase == "train" for r in rows):
            _write_text(out / "train_rewards.svg", svg_train_curves(rows))
        if any(r.phase in ("iid_test", "ood_test") for r in rows):
            _write_text(out / "test_rewards.svg", svg_test_boxes(rows))
    return summaries


def load_run_rows(run_dir) -> list:
    """All metrics rows written by run_experiment into run_dir."""
    run = Path(run_dir)
    paths = sorted(run.glob("metrics_seed*.csv"))
    if not paths:
        raise ConfigError(f"{run_dir}: no metrics_seed*.csv files found")
    rows = []
    for p in paths:
        rows.extend(read_metrics_csv(p))
    return rows


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class ExperimentResult:
    out_dir: str
    summaries: list
    metrics_paths: list
    checkpoint_stems: list


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get("ASNET_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"ASNET_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError(f"worker count must be at least 1, got {threads}")
    return threads


def run_experiment(config: ExperimentConfig, out_dir=None,
                   threads: int | None = None) -> ExperimentResult:
    """Train every seed, evaluate IID and OOD, and write metrics CSVs,
    checkpoints, comparison.csv, and plots under out_dir.

    Worker processes (ASNET_THREADS or the threads argument) split the
    seeds; outputs are byte-identical regardless of worker count.
    """
    target = out_dir if out_dir is not None else config.out_dir
    if target is None:
        raise ConfigError("no output directory: pass out_dir or set it in the config")
    out = Path(target)
    out.mkdir(parents=True, exist_ok=True)
    threads = resolve_threads(threads)

    jobs = [(config, seed, str(out)) for seed in config.seeds]
    if threads == 1 or len(jobs) == 1:
        results = [_seed_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_seed_job, jobs))

    all_rows = [r for _, seed_rows in results for r in seed_rows]
    summaries = aggregate_and_emit(out, all_rows)
    return ExperimentResult(
        out_dir=str(out), summaries=summaries,
        metrics_paths=[str(out / f"metrics_seed{s}.csv") for s in config.seeds],
        checkpoint_stems=[str(out / f"checkpoint_seed{s}") for s in config.seeds])


# ---------------------------------------------------------------------------
# checkpoint evaluation


@dataclass
class EvalSummary:
    mode: str
    episodes: int
    mean_reward: float
    std_reward: float
    rewards: np.ndarray


def evaluate_checkpoint(stem, mode: str = "iid", episodes: int = 100,
                        seed: int = 0) -> EvalSummary:
    """Reload a checkpoint and evaluate it in-distribution or on the
    shifted variant of its training environment."""
    if mode not in ("iid", "ood"):
        raise ConfigError(f"mode must be 'iid' or 'ood', got {mode!r}")
    loaded = load_checkpoint(stem)
    env_config = loaded.env_config if mode == "iid" else E.ood_variant(loaded.env_config)
    salt = SALT_EVAL_IID if mode == "iid" else SALT_EVAL_OOD
    rewards = evaluate_policy(loaded.team, env_config, episodes, seed, salt=salt)
    mean = float(rewards.mean()) if episodes else 0.0
    std = float(rewards.std()) if episodes else 0.0
    return EvalSummary(mode, episodes, mean, std, rewards)
