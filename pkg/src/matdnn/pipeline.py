"""Iterative runs: tokenizer grid, reinforcement, MDNN, bottleneck feedback."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .evaluation import abx_error, abx_items, read_annotation, track2_report
from .features import concat_tandem, stack_context, utterance_summary
from .formats import fmt_float, read_csv, read_feature_dir, read_matf, write_csv, write_feature_dir
from .granularity import (LABEL_HEADER, LayerGrid, LayerOptions, load_layer_set, read_labels,
                          save_layer_set, train_grid, write_labels, layer_dirname)
from .mdnn import MdnnConfig, extract_bnf, frame_targets, train
from .model_io import read_matm, read_matn, write_matn
from .reinforcement import MrOptions, PeakOptions, reinforce_detailed, write_mr_artifacts

log = logging.getLogger(__name__)

SEED_ENV = "MATDNN_SEED"


@dataclass
class MdnnSettings:
    hidden: tuple = (256, 256)
    bottleneck: int = 39
    post_hidden: tuple = ()
    activation: str = "logistic"
    learn_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 128
    normalize_inputs: bool = True

    def config(self, input_dim, heads, seed) -> MdnnConfig:
        dims = [input_dim, *self.hidden, self.bottleneck, *self.post_hidden]
        return MdnnConfig(dims, heads, 1 + len(self.hidden), self.activation, self.learn_rate,
                          self.epochs, self.batch_size, seed, self.normalize_inputs)


@dataclass
class EvalSettings:
    abx: bool = True
    std: bool = True
    abx_cap: int = 50
    abx_context: bool = True
    boundary_tol: int = 2


@dataclass
class PipelineConfig:
    corpus: str = ""
    output: str = "run"
    seed: int = 0
    iterations: int = 2
    mr_rounds: int = 1
    context: int = 4
    summary: bool = True
    grid: LayerGrid = field(default_factory=LayerGrid)
    tokenizer: LayerOptions = field(default_factory=LayerOptions)
    mr: MrOptions = field(default_factory=MrOptions)
    mdnn: MdnnSettings = field(default_factory=MdnnSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mr_rounds < 0:
            raise ValueError("mr_rounds must be >= 0")

    def to_text(self, include_paths=True) -> str:
        lines = [f"{k} = {_render(v)}" for k, v in _flatten(self)
                 if include_paths or k not in ("corpus", "output")]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text(include_paths=False).encode()).hexdigest()[:16]


def desk_config(**overrides) -> PipelineConfig:
    """Small grid and short schedules for synthetic corpora."""
    cfg = PipelineConfig(grid=LayerGrid((3, 5), (8, 16)), mdnn=MdnnSettings(epochs=40))
    return apply_overrides(cfg, overrides)


# -- config text ------------------------------------------------------------------


def _flatten(obj, prefix=""):
    for f in fields(obj):
        val = getattr(obj, f.name)
        key = prefix + f.name
        if f.name == "peaks" and is_dataclass(val):
            yield from _flatten(val, prefix)
        elif is_dataclass(val):
            yield from _flatten(val, key + ".")
        else:
            yield key, val


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse_value(text: str, current):
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(current, tuple):
        return tuple(int(x) for x in text.replace(",", " ").split())
    if text == "":
        return None
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        try:
            return int(text) if current is None and text.isdigit() else float(text)
        except ValueError:
            return text
    return text


def _locate(cfg, key):
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise KeyError(key)
        obj = getattr(obj, p)
    name = parts[-1]
    if not hasattr(obj, name) and hasattr(obj, "peaks") and hasattr(obj.peaks, name):
        obj = obj.peaks
    if not hasattr(obj, name):
        raise KeyError(key)
    return obj, name


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    grid_t, grid_p = list(cfg.grid.temporal), list(cfg.grid.phonetic)
    for key, val in overrides.items():
        key = key.replace("__", ".")
        if key == "grid.temporal":
            grid_t = _parse_value(val, tuple()) if isinstance(val, str) else list(val)
            continue
        if key == "grid.phonetic":
            grid_p = _parse_value(val, tuple()) if isinstance(val, str) else list(val)
            continue
        obj, name = _locate(cfg, key)
        current = getattr(obj, name)
        setattr(obj, name, _parse_value(val, current) if isinstance(val, str) else val)
    cfg.grid = LayerGrid(tuple(grid_t), tuple(grid_p))
    cfg.__post_init__()
    return cfg


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Line-oriented ``key = value`` with dotted section keys; '#' starts a comment."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        overrides[key] = val
    cfg = base or PipelineConfig()
    try:
        cfg = apply_overrides(cfg, overrides)
    except KeyError as exc:
        raise ValueError(f"unknown config key {exc.args[0]!r}") from None
    if os.environ.get(SEED_ENV):
        cfg.seed = int(os.environ[SEED_ENV])
    return cfg


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


# -- feature recipes ----------------------------------------------------------------


def mdnn_input(initial, bnf, cfg: PipelineConfig):
    """Stacked initial features [+ stacked BNF] [+ utterance summary], per utterance."""
    out = []
    prev = {f.utterance_id: f for f in bnf} if bnf is not None else {}
    for f in initial:
        parts = [stack_context(f, cfg.context)]
        if bnf is not None:
            parts.append(stack_context(prev[f.utterance_id], cfg.context))
        if cfg.summary:
            parts.append(utterance_summary(f))
        out.append(concat_tandem(parts))
    return out


def stage_seed(seed: int, *parts) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0] % (2**31))


# -- run state -------------------------------------------------------------------


@dataclass
class IterationResult:
    k: int
    mat_input: list
    layer_sets: list  # one per MR round, index 0 = before reinforcement
    net: object
    bnf: list
    reinforce_calls: int = 0
    final_loss: float = float("nan")

    @property
    def layer_set(self):
        return self.layer_sets[-1]


@dataclass
class RunArtifacts:
    root: Path
    config: PipelineConfig
    initial: list
    iterations: list = field(default_factory=list)
    track1: list = field(default_factory=list)
    track2: list = field(default_factory=list)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)


class ConfigMismatch(RuntimeError):
    pass


def _done(path: Path, cfg_hash: str) -> bool:
    marker = path / "DONE"
    return marker.exists() and marker.read_text().strip() == cfg_hash


def _mark(path: Path, cfg_hash: str):
    path.mkdir(parents=True, exist_ok=True)
    (path / "DONE").write_text(cfg_hash + "\n")


def _require(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")


def run_iteration(state: RunArtifacts, cfg: PipelineConfig, k: int, resume: bool = False,
                  workers: int = 1) -> RunArtifacts:
    """One feedback iteration; appends an IterationResult to ``state``."""
    h = cfg.hash()
    if k > 1:
        if len(state.iterations) >= k - 1:
            prev_bnf = state.iterations[k - 2].bnf
        else:
            prev_dir = state.path("bnf", f"iter{k - 1}")
            _require(prev_dir / "DONE")
            prev_bnf = read_feature_dir(prev_dir, "bottleneck")
        mat_input = prev_bnf
    else:
        prev_bnf = None
        mat_input = state.initial

    layer_root = state.path("layers", f"iter{k}")
    layer_sets = []
    calls = 0
    for r in range(cfg.mr_rounds + 1):
        d = layer_root / f"round{r}"
        if resume and _done(d, h):
            layer_sets.append(load_layer_set(d))
            continue
        init = None
        if r > 0:
            mr_dir = state.path("mr", f"iter{k}", f"round{r}")
            mr_opts = replace(cfg.mr, seed=stage_seed(cfg.seed, k, r, 1))
            res = reinforce_detailed(layer_sets[-1], mat_input, cfg.grid, mr_opts)
            calls += 1
            write_mr_artifacts(mr_dir, res, layer_sets[-1].psis())
            for psi, lab in res.labels.items():
                write_labels(mr_dir / "labels" / f"{layer_dirname(psi)}.csv", lab)
            init = res.labels
        ls = train_grid(mat_input, cfg.grid, cfg.tokenizer, stage_seed(cfg.seed, k, r), init, workers)
        save_layer_set(d, ls)
        _write_history(d / "history.csv", ls)
        _mark(d, h)
        layer_sets.append(ls)

    inputs = mdnn_input(state.initial, prev_bnf, cfg)
    net_path = state.path("mdnn", f"iter{k}.matn")
    if not (resume and net_path.exists() and _done(state.path("mdnn", f"iter{k}"), h)):
        targets = frame_targets(layer_sets[-1])
        uids = [f.utterance_id for f in inputs]
        X = np.vstack([f.frames for f in inputs])
        mcfg = cfg.mdnn.config(X.shape[1], targets.heads, stage_seed(cfg.seed, k, 99))
        net = train(X, targets.stacked(uids), mcfg)
        net_path.parent.mkdir(parents=True, exist_ok=True)
        write_matn(net_path, net)
        write_csv(state.path("mdnn", f"iter{k}_loss.csv"), ["epoch", "loss"],
                  [(e, fmt_float(v)) for e, v in enumerate(net.loss_trace)])
        _mark(state.path("mdnn", f"iter{k}"), h)
    # parameters as persisted (float32), so resumed runs see identical networks
    net = read_matn(net_path)
    trace = read_csv(state.path("mdnn", f"iter{k}_loss.csv"), ["epoch", "loss"])

    bnf_dir = state.path("bnf", f"iter{k}")
    if resume and _done(bnf_dir, h):
        bnf = read_feature_dir(bnf_dir, "bottleneck")
    else:
        bnf = [extract_bnf(net, f) for f in inputs]
        write_feature_dir(bnf_dir, bnf)
        _mark(bnf_dir, h)
        bnf = read_feature_dir(bnf_dir, "bottleneck")
    state.iterations.append(IterationResult(k, mat_input, layer_sets, net, bnf, calls, float(trace[-1][1])))
    return state


def _write_history(path, ls):
    rows = []
    for psi, hist in ls.histories.items():
        for step, it, val in hist:
            rows.append((psi.m, psi.n, step, it, fmt_float(val)))
    write_csv(path, ["m", "n", "step", "iteration", "joint_loglik"], rows)


def load_corpus(directory):
    directory = Path(directory)
    kind = "synthetic" if (directory / "synth_config.txt").exists() else "mfcc"
    feats = read_feature_dir(directory / "features", kind)
    ann_path = directory / "annotation.csv"
    gold = read_annotation(ann_path) if ann_path.exists() else None
    return feats, gold


def run_pipeline(cfg: PipelineConfig, resume: bool = False, workers: int = 1) -> RunArtifacts:
    """Run every iteration and write reports. Returns the in-memory artifacts."""
    root = Path(cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    stamp = root / "config_hash.txt"
    if stamp.exists() and stamp.read_text().strip() != h:
        raise ConfigMismatch(f"{root} holds artifacts of config {stamp.read_text().strip()}, not {h}")
    stamp.write_text(h + "\n")
    (root / "config.txt").write_text(cfg.to_text())

    initial, gold = load_corpus(cfg.corpus)
    write_feature_dir(root / "features", initial)
    initial = read_feature_dir(root / "features", initial[0].feature_kind)
    state = RunArtifacts(root, cfg, initial)
    for k in range(1, cfg.iterations + 1):
        log.info("iteration %d", k)
        run_iteration(state, cfg, k, resume, workers)
    if gold is not None:
        evaluate_run(state, gold)
    write_reports(state)
    return state


def evaluate_run(state: RunArtifacts, gold):
    cfg = state.config
    ev = cfg.eval
    if ev.abx:
        items = abx_items(gold, ev.abx_context)
        feats = [("input", state.initial)] + [(f"bnf-iter{it.k}", it.bnf) for it in state.iterations]
        for name, fs in feats:
            row = {"features": name}
            for mode in ("across", "within"):
                res = abx_error(fs, items, mode, ev.abx_cap, cfg.seed)
                row[mode] = res.error
                row[f"{mode}_triples"] = res.num_triples
            state.track1.append(row)
    if ev.std:
        for it in state.iterations:
            for psi, (_, lab) in it.layer_set.layers.items():
                row = {"iteration": it.k, "m": psi.m, "n": psi.n}
                row.update(track2_report(lab, gold, ev.boundary_tol))
                state.track2.append(row)


TRACK1_HEADER = ["features", "across", "within", "across_triples", "within_triples"]
TRACK2_HEADER = ["iteration", "m", "n", "NED", "Cov."] + [
    f"{g} {x}" for g in ("Grouping", "Type", "Token", "Boundary") for x in "PRF"
]


def _cell(v):
    return fmt_float(v) if isinstance(v, float) else str(v)


def write_reports(state: RunArtifacts):
    rep = state.path("reports")
    rep.mkdir(parents=True, exist_ok=True)
    if state.track1:
        write_csv(rep / "track1.csv", TRACK1_HEADER, [[_cell(r[c]) for c in TRACK1_HEADER] for r in state.track1])
    if state.track2:
        write_csv(rep / "track2.csv", TRACK2_HEADER, [[_cell(r[c]) for c in TRACK2_HEADER] for r in state.track2])
    lines = [f"config {state.config.hash()}", f"iterations {len(state.iterations)}", ""]
    for it in state.iterations:
        ls = it.layer_set
        lines.append(f"iteration {it.k}: {len(ls)} layers, {len(it.layer_sets) - 1} reinforcement rounds, "
                     f"final MDNN loss {it.final_loss:.4f}")
    if state.track1:
        lines += ["", "Track 1 ABX error (%)", f"{'features':<14}{'across':>10}{'within':>10}"]
        for r in state.track1:
            lines.append(f"{r['features']:<14}{r['across']:>10.2f}{r['within']:>10.2f}")
    if state.track2:
        lines += ["", "Track 2 (%)", f"{'iter':<6}{'psi':<10}{'NED':>8}{'Cov.':>8}{'Token F':>9}{'Bound. F':>10}"]
        for r in state.track2:
            lines.append(f"{r['iteration']:<6}{'(%d,%d)' % (r['m'], r['n']):<10}{r['NED']:>8.1f}{r['Cov.']:>8.1f}"
                         f"{100 * r['Token F']:>9.1f}{100 * r['Boundary F']:>10.1f}")
    (rep / "summary.txt").write_text("\n".join(lines) + "\n")


# -- validation -------------------------------------------------------------------


def validate_run(root) -> list[str]:
    """Re-parse every artifact under a run directory; returns a list of problems."""
    root = Path(root)
    problems = []
    lengths = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        try:
            if p.suffix == ".matf":
                f = read_matf(p)
                if p.parent == root / "features":
                    lengths[f.utterance_id] = f.num_frames
            elif p.suffix == ".matm":
                read_matm(p)
            elif p.suffix == ".matn":
                read_matn(p)
            elif p.suffix == ".csv":
                with open(p) as fh:
                    header = fh.readline().strip().split(",")
                read_csv(p, header)
        except Exception as exc:  # noqa: BLE001 - report every unreadable file
            problems.append(f"{p}: {exc}")
    for p in sorted(root.rglob("labels.csv")) + sorted(root.glob("mr/*/*/labels/*.csv")):
        try:
            with open(p) as fh:
                if fh.readline().strip().split(",") != LABEL_HEADER:
                    continue
            lab = read_labels(p)
            name = p.parent.name if p.name == "labels.csv" else p.stem
            m, n = (int(x[1:]) for x in name.split("_"))
            if lengths:
                lab.validate(lengths, m, n)
        except Exception as exc:  # noqa: BLE001
            problems.append(f"{p}: {exc}")
    if not (root / "config_hash.txt").exists():
        problems.append(f"{root}: missing config_hash.txt")
    return problems
