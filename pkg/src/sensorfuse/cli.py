"""Command line entry point.

One JSON config file drives every subcommand; each command reads its own
section plus the shared `data`, `synth`, and `window` sections. Datasets are
referenced by name and resolved first against `data` (CSV directories with a
schema config) and then against the domains of the `synth` section. All
outputs land under --out with stable names, together with a manifest
(config hash, seeds, artifact paths, tool version) and a timing sidecar.
The manifest is deterministic; wall-clock numbers stay out of it.

Exit codes: 0 success, 1 data or validation errors, 2 usage errors.
Set SENSORFUSE_LOG=debug|info|warning to control verbosity.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    SensorDataset,
    block_split,
    channel_stats,
    load_dataset,
    save_dataset,
    save_schema,
    select_channels,
    validate,
)
from .errors import SensorFuseError
from .imputer import standardize_channels
from .nn import TrainConfig, load_net, save_net
from .pipeline import (
    AccessLog,
    MaskExperimentConfig,
    ScenarioConfig,
    evaluate,
    fit_cascade,
    leakage_violations,
    run_ablation,
    run_noise_baseline_experiment,
    run_scenario,
    train_detector,
)
from .preprocess import WindowConfig, apply_plan
from .report import write_report
from .synth import SynthConfig, generate_multidomain
from .theory import mutual_info_binned, proxy_a_distance, theorem1_direction_check

log = logging.getLogger("sensorfuse")

COMMANDS = ("validate", "preprocess", "split", "impute", "train", "eval",
            "noise-baseline", "ablate", "synth", "diagnose")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    seeds: list[int]
    artifacts: dict[str, str]  # artifact name -> path relative to the out dir
    timings: dict[str, float] = field(default_factory=dict)  # seconds per stage

    def save(self, out_dir: Path) -> Path:
        # timings vary run to run, so they go to a sidecar and the manifest
        # itself stays byte-identical for identical configs
        doc = {
            "command": self.command,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        (out_dir / "timings.json").write_text(
            json.dumps({k: round(v, 6) for k, v in self.timings.items()},
                       indent=2, sort_keys=True) + "\n")
        return path


def config_digest(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@contextmanager
def _stage(timings: dict[str, float], name: str):
    log.info("stage %s", name)
    t0 = time.perf_counter()
    yield
    timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

class Workspace:
    """Datasets named in the config: CSV directories or generated domains."""

    def __init__(self, config: dict, base_dir: Path):
        self.config = config
        self.base_dir = base_dir
        self._synth_domains: dict[str, SensorDataset] | None = None

    def _generate(self) -> dict[str, SensorDataset]:
        if self._synth_domains is None:
            self._synth_domains = {}
            if "synth" in self.config:
                cfg = SynthConfig.from_dict(self.config["synth"])
                target, sources, truth = generate_multidomain(cfg)
                for ds in [target, *sources]:
                    self._synth_domains[ds.domain_id] = ds
                if len(truth.schema):
                    self._synth_domains[truth.domain_id] = truth
        return self._synth_domains

    def dataset(self, name: str) -> SensorDataset:
        entry = self.config.get("data", {}).get(name)
        if entry is not None:
            directory = self.base_dir / entry["dir"]
            schema = self.base_dir / entry.get("schema", Path(entry["dir"]) / "schema.json")
            return load_dataset(directory, schema)
        domains = self._generate()
        if name in domains:
            return domains[name]
        raise KeyError(f"dataset {name!r} is neither in `data` nor a synth domain")


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise KeyError(f"config has no `{name}` section")
    return config[name]


def _train_config(doc: dict | None, seed: int | None = None) -> TrainConfig:
    cfg = TrainConfig(**(doc or {}))
    return cfg if seed is None else replace(cfg, seed=seed)


def _window_config(config: dict) -> WindowConfig:
    return WindowConfig(**config.get("window", {}))


def _scenario(config: dict, section: dict, ws: Workspace, name: str,
              seed_override: int | None) -> ScenarioConfig:
    seeds = (seed_override,) if seed_override is not None else \
        tuple(section.get("seeds", (0, 1, 2, 3, 4)))
    return ScenarioConfig(
        name=section.get("name", name),
        target=ws.dataset(section["target"]),
        sources=[ws.dataset(s) for s in section.get("sources", [])],
        detector_hidden=tuple(section.get("detector_hidden", (32,))),
        imputer_hidden=tuple(section.get("imputer_hidden", (32,))),
        detector_train=_train_config(section.get("detector_train")),
        imputer_train=_train_config(section.get("imputer_train")),
        wcfg=_window_config(config),
        jacobian_coeff=float(section.get("jacobian_coeff", 1e-3)),
        use_batchnorm=bool(section.get("use_batchnorm", False)),
        use_jacobian=bool(section.get("use_jacobian", False)),
        seeds=seeds,
        test_fraction=float(section.get("test_fraction", 0.2)),
        cascade_feeds_forward=bool(section.get("cascade_feeds_forward", False)),
        imputer_batchnorm=bool(section.get("imputer_batchnorm", False)),
    )


def _save_domain(ds: SensorDataset, directory: Path) -> None:
    save_dataset(ds, directory)
    save_schema(ds, directory / "schema.json")


def _relpaths(out: Path, paths: dict[str, Path]) -> dict[str, str]:
    return {k: p.relative_to(out).as_posix() for k, p in paths.items()}


# ---------------------------------------------------------------------------
# subcommands; each returns {artifact name -> path}
# ---------------------------------------------------------------------------

def cmd_synth(config, ws, args, out, timings) -> dict[str, Path]:
    doc = dict(_section(config, "synth"))
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = SynthConfig.from_dict(doc)
    with _stage(timings, "generate"):
        target, sources, truth = generate_multidomain(cfg)
    artifacts = {}
    with _stage(timings, "write"):
        for ds in [target, *sources]:
            _save_domain(ds, out / ds.domain_id)
            artifacts[ds.domain_id] = out / ds.domain_id / "schema.json"
        if len(truth.schema):
            _save_domain(truth, out / truth.domain_id)
            artifacts["truth"] = out / truth.domain_id / "schema.json"
    return artifacts


def cmd_validate(config, ws, args, out, timings) -> dict[str, Path]:
    names = _section(config, "validate")["datasets"]
    lines = []
    clean = True
    with _stage(timings, "validate"):
        for name in names:
            for v in validate(ws.dataset(name)):
                clean = False
                where = "/".join(p for p in (v.block, v.channel) if p)
                lines.append(f"{name}: {v.kind} at {where or 'dataset'}: {v.detail}")
    path = out / "violations.txt"
    path.write_text("".join(line + "\n" for line in lines))
    if not clean:
        raise SensorFuseError(
            f"{len(lines)} dataset invariant violations, first: {lines[0]}")
    return {"violations": path}


def cmd_preprocess(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "preprocess")
    ds = ws.dataset(section["dataset"])
    with _stage(timings, "condition"):
        conditioned, provenance = apply_plan(ds, section["plan"])
    with _stage(timings, "write"):
        _save_domain(conditioned, out / "conditioned")
        sidecar = out / "preprocess_provenance.json"
        sidecar.write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    return {"conditioned": out / "conditioned" / "schema.json", "provenance": sidecar}


def cmd_split(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "split")
    ds = ws.dataset(section["dataset"])
    with _stage(timings, "split"):
        result = block_split(ds, float(section.get("test_fraction", 0.2)))
    with _stage(timings, "write"):
        _save_domain(result.train, out / "train")
        _save_domain(result.test, out / "test")
        manifest = out / "split_manifest.json"
        manifest.write_text(json.dumps(result.manifest_dict(), indent=2,
                                       sort_keys=True) + "\n")
    return {"train": out / "train" / "schema.json",
            "test": out / "test" / "schema.json",
            "split_manifest": manifest}


def cmd_impute(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "impute")
    cfg = _scenario(config, section, ws, "impute", args.seed)
    seed = cfg.seeds[0]
    with _stage(timings, "fit"):
        steps, enhanced = fit_cascade(cfg.target, cfg.sources, cfg, seed=seed)
    with _stage(timings, "write"):
        _save_domain(enhanced, out / "enhanced")
        report = {
            "generated_channels": {
                cfg.sources[s.source_index].domain_id: list(s.imputer.generated_channels)
                for s in steps},
            "holdout_mse": {
                cfg.sources[s.source_index].domain_id: s.imputer.holdout_mse
                for s in steps},
        }
        report_path = out / "imputation_report.json"
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return {"enhanced": out / "enhanced" / "schema.json", "report": report_path}


def cmd_train(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "train")
    ds = ws.dataset(section["dataset"])
    cfg = _scenario(config, {**section, "target": section["dataset"]},
                    ws, "train", args.seed)
    with _stage(timings, "train"):
        net = train_detector(ds, cfg, seed=cfg.seeds[0])
    with _stage(timings, "write"):
        path = out / "model.npz"
        save_net(net, path)
    return {"model": path}


def cmd_eval(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "eval")
    ds = ws.dataset(section["dataset"])
    with _stage(timings, "evaluate"):
        net = load_net(Path(section["model"]))
        acc, ce = evaluate(net, ds, _window_config(config))
    doc = {"accuracy": acc, "cross_entropy": ce,
           "manifest": config_digest(config)}
    path = out / "eval.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"accuracy={acc:.4f} cross_entropy={ce:.4f}")
    return {"metrics": path}


def cmd_noise_baseline(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "noise_baseline")
    seeds = (args.seed,) if args.seed is not None else \
        tuple(section.get("seeds", (0, 1, 2, 3, 4)))
    ds = ws.dataset(section["dataset"])
    cfg = MaskExperimentConfig(
        dataset=ds,
        masked_channel=section["masked_channel"],
        detector_hidden=tuple(section.get("detector_hidden", (32,))),
        imputer_hidden=tuple(section.get("imputer_hidden", (32,))),
        detector_train=_train_config(section.get("detector_train")),
        imputer_train=_train_config(section.get("imputer_train")),
        wcfg=_window_config(config),
        seeds=seeds,
        test_fraction=float(section.get("test_fraction", 0.2)),
    )
    access = AccessLog()
    with _stage(timings, "experiment"):
        report = run_noise_baseline_experiment(cfg, log=access)
    bad = leakage_violations(access, block_split(ds, cfg.test_fraction))
    if bad:
        raise SensorFuseError(f"test-side leakage: {len(bad)} training accesses "
                              f"overlap test ranges, first {bad[0]}")
    with _stage(timings, "write"):
        paths = write_report(report, out, "noise_baseline",
                             manifest_ref=config_digest(config))
    return paths


def cmd_ablate(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "ablate")
    cfg = _scenario(config, section, ws, "ablate", args.seed)
    with _stage(timings, "experiment"):
        if args.jobs and args.jobs > 1:
            report = _run_ablation_parallel(cfg, args.jobs)
        else:
            report = run_ablation(cfg)
    with _stage(timings, "write"):
        paths = write_report(report, out, "ablation",
                             manifest_ref=config_digest(config))
    return paths


def _run_ablation_parallel(cfg: ScenarioConfig, jobs: int):
    # same variant list as run_ablation; map preserves order so records come
    # back in grid order regardless of completion order
    from .pipeline import TOGGLE_GRID, ExperimentReport
    variants = [replace(cfg, name=f"{cfg.name}/{suffix}", use_batchnorm=bn,
                        use_jacobian=jac)
                for suffix, bn, jac in TOGGLE_GRID]
    report = ExperimentReport()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(run_scenario, variants):
            report.records.extend(part.records)
    return report


def cmd_diagnose(config, ws, args, out, timings) -> dict[str, Path]:
    section = _section(config, "diagnose")
    target = ws.dataset(section["target"])
    bins = int(section.get("bins", 16))
    lines = [f"# manifest={config_digest(config)}"]
    with _stage(timings, "mutual-information"):
        x = np.concatenate([b.samples for b in target.blocks])
        y = np.concatenate([b.labels for b in target.blocks])
        lines.append(f"mutual information with labels (nats, {bins} bins)")
        for j, name in enumerate(target.schema.names):
            mi = mutual_info_binned(x[:, j], y, bins=bins)
            lines.append(f"  {name:<12} {mi.value:.4f}")
    with _stage(timings, "proxy-distance"):
        for src_name in section.get("sources", []):
            source = ws.dataset(src_name)
            shared = [n for n in target.schema.names
                      if n in set(source.schema.names)]
            if not shared:
                lines.append(f"proxy A-distance vs {src_name}: no shared channels")
                continue
            ta = select_channels(target, shared)
            sa = select_channels(source, shared)
            raw = _proxy(ta, sa, shared)
            aligned = _proxy(standardize_channels(ta, channel_stats(ta, shared)),
                             standardize_channels(sa, channel_stats(sa, shared)),
                             shared)
            lines.append(f"proxy A-distance vs {src_name} on {','.join(shared)}: "
                         f"raw {raw:.3f}  aligned {aligned:.3f}")
    if "synth" in config:
        with _stage(timings, "theorem1"):
            cfg = SynthConfig.from_dict(config["synth"])
            n = int(section.get("theorem1_configs", 10))
            passed = sum(theorem1_direction_check(cfg, seed=i).passed
                         for i in range(n))
            lines.append(f"theorem1 direction check: {passed}/{n} passed")
    text = "".join(line + "\n" for line in lines)
    path = out / "diagnose.txt"
    path.write_text(text)
    print(text, end="")
    return {"diagnose": path}


def _proxy(a: SensorDataset, b: SensorDataset, shared: list[str]) -> float:
    ia = [a.schema.index(n) for n in shared]
    ib = [b.schema.index(n) for n in shared]
    xa = np.concatenate([blk.samples[:, ia] for blk in a.blocks])
    xb = np.concatenate([blk.samples[:, ib] for blk in b.blocks])
    return proxy_a_distance(xa, xb).value


HANDLERS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "impute": cmd_impute,
    "train": cmd_train,
    "eval": cmd_eval,
    "noise-baseline": cmd_noise_baseline,
    "ablate": cmd_ablate,
    "diagnose": cmd_diagnose,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensorfuse",
        description="Multi-source sensor fusion experiments: impute missing "
                    "modalities, train fatigue detectors, run the reporting "
                    "protocols.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed list with one seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel scenario workers where supported")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SENSORFUSE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config_path = Path(args.config)
        config = json.loads(config_path.read_text())
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ws = Workspace(config, base_dir=config_path.parent)
        timings: dict[str, float] = {}
        artifacts = HANDLERS[args.command](config, ws, args, out, timings)
        seeds = [args.seed] if args.seed is not None else _config_seeds(config, args.command)
        RunManifest(args.command, config_digest(config), __version__,
                    seeds, _relpaths(out, artifacts), timings).save(out)
    except SensorFuseError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def _config_seeds(config: dict, command: str) -> list[int]:
    section = config.get(command.replace("-", "_"), {})
    if "seeds" in section:
        return [int(s) for s in section["seeds"]]
    if command == "synth" and "synth" in config:
        return [int(config["synth"].get("seed", 0))]
    return []


if __name__ == "__main__":
    sys.exit(main())
