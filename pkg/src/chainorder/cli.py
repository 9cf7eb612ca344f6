"""Config-driven runner: ``chainorder {sample,lab,check-representation,compare}``.

A config is one JSON object with exactly the keys ``target``, ``kernels``,
``experiment`` and ``output``. Unknown keys are rejected so a typo never
silently falls back to a default. Exit codes: 0 success, 2 config error,
3 runtime error, 4 verification FAIL.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import diagnostics, lab, representation
from .errors import ConstructionError, DomainError, EfficiencyError, NumericalError
from .kernels import KernelSpec, ProposalSpec, run_chain
from .targets import CATALOG, make_target, sample_pi

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAIL = 0, 2, 3, 4

TOP_KEYS = {"target", "kernels", "experiment", "output"}
TARGET_KEYS = {"name", "parameters", "bbox"}
OUTPUT_KEYS = {"directory", "formats"}
KERNEL_KEYS = {"kind", "proposal", "inner_grid", "attempt_cap"}
PROPOSAL_KEYS = {"kind", "delta"}
EXPERIMENT_KEYS = {
    "sample": {"seed", "n", "x0"},
    "lab": {"seed", "grid_n", "proposal_radius", "boundary", "num_f", "conductance_mode",
            "swap_labels"},
    "check-representation": {"seed", "pair", "grid_n", "proposal_radius", "boundary", "corrupt"},
    "compare": {"seed", "n_pairs", "functions", "mse_n", "mse_replications", "strict"},
}
REQUIRED_EXPERIMENT = {
    "sample": {"n"},
    "lab": {"grid_n"},
    "check-representation": {"pair", "grid_n"},
    "compare": {"n_pairs"},
}


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    target: dict
    kernels: tuple
    experiment: dict
    output: dict

    @property
    def seed(self) -> int:
        return self.experiment["seed"]

    def semantic(self) -> dict:
        """Fields that determine the numbers produced (not where they are written)."""
        return {"command": self.command, "target": self.target,
                "kernels": [k.to_dict() for k in self.kernels], "experiment": self.experiment}

    def digest(self) -> str:
        text = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def build_target(self):
        return make_target(self.target["name"], **self.target.get("parameters", {}))


# ---------------------------------------------------------------------------
# config parsing


def _check_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{where}: missing key {key!r}")


def _kernel_from_dict(obj, where) -> KernelSpec:
    _check_keys(obj, KERNEL_KEYS, where, ("kind",))
    kw = dict(obj)
    if "proposal" in kw:
        _check_keys(kw["proposal"], PROPOSAL_KEYS, f"{where}.proposal", ("kind",))
        kw["proposal"] = ProposalSpec(**kw["proposal"])
    if kw["kind"] == "hit_and_run":
        kw.setdefault("inner_grid", 4096)
    try:
        return KernelSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.kind: {exc}") from None


def parse_config(text: str, command: str, seed=None) -> ExperimentConfig:
    """Validate ``text`` for ``command``; ``seed`` overrides ``experiment.seed``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    _check_keys(raw, TOP_KEYS, "config", sorted(TOP_KEYS))
    target = raw["target"]
    _check_keys(target, TARGET_KEYS, "target", ("name",))
    if target["name"] not in CATALOG:
        raise ConfigError(f"target.name: unknown target {target['name']!r} "
                          f"(catalog: {', '.join(sorted(CATALOG))})")
    if not isinstance(target.get("parameters", {}), dict):
        raise ConfigError("target.parameters: expected an object")
    bbox = target.get("bbox")
    if bbox is not None:
        _check_keys(bbox, {"lo", "hi"}, "target.bbox", ("lo", "hi"))
    if not isinstance(raw["kernels"], list):
        raise ConfigError("kernels: expected a list")
    kernels = tuple(_kernel_from_dict(k, f"kernels[{i}]") for i, k in enumerate(raw["kernels"]))
    exp = dict(raw["experiment"]) if isinstance(raw["experiment"], dict) else raw["experiment"]
    _check_keys(exp, EXPERIMENT_KEYS[command], "experiment", REQUIRED_EXPERIMENT[command])
    if seed is not None:
        exp["seed"] = seed
    if "seed" not in exp:
        raise ConfigError("experiment: missing key 'seed'")
    if not isinstance(exp["seed"], int) or isinstance(exp["seed"], bool) or not 0 <= exp["seed"] < 2**64:
        raise ConfigError("experiment.seed: expected an unsigned 64-bit integer")
    output = raw["output"]
    _check_keys(output, OUTPUT_KEYS, "output")
    formats = output.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"} or not formats:
        raise ConfigError("output.formats: expected a non-empty subset of ['csv', 'json']")
    cfg = ExperimentConfig(command, target, kernels, exp, {**output, "formats": sorted(set(formats))})
    try:
        cfg.build_target()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"target.parameters: {exc}") from None
    _command_checks(cfg)
    return cfg


def _command_checks(cfg: ExperimentConfig):
    exp = cfg.experiment
    labels = [k.label for k in cfg.kernels]
    if cfg.command == "sample":
        if len(cfg.kernels) != 1:
            raise ConfigError("kernels: sample needs exactly one kernel")
        if not isinstance(exp["n"], int) or exp["n"] < 0:
            raise ConfigError("experiment.n: expected a nonnegative integer")
    elif cfg.command == "compare":
        missing = [lab_ for lab_ in ("M", "U", "H", "S") if lab_ not in labels]
        if missing:
            raise ConfigError(f"kernels: compare needs all four samplers; missing {missing}")
        if len(set(labels)) != len(labels):
            raise ConfigError("kernels: each sampler may appear once")
    elif cfg.command == "check-representation":
        if exp["pair"] not in representation.PAIRS:
            raise ConfigError(f"experiment.pair: expected one of {representation.PAIRS}")
    if cfg.command in ("lab", "check-representation"):
        if exp.get("boundary", "periodic") not in ("periodic", "hold"):
            raise ConfigError("experiment.boundary: expected 'periodic' or 'hold'")
        if not isinstance(exp["grid_n"], int) or exp["grid_n"] < 2:
            raise ConfigError("experiment.grid_n: expected an integer >= 2")


# ---------------------------------------------------------------------------
# outputs


def write_atomic(path: Path, text: str):
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"chainorder": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _manifest(cfg: ExperimentConfig, files, verdict) -> str:
    return _dump({"command": cfg.command, "config_sha256": cfg.digest(), "seed": cfg.seed,
                  "versions": _versions(), "files": sorted(files), "verdict": verdict})


def _grid(cfg: ExperimentConfig, target):
    bbox = cfg.target.get("bbox")
    lo = bbox["lo"] if bbox else None
    hi = bbox["hi"] if bbox else None
    return lab.GridSpec.from_target(target, cfg.experiment["grid_n"], lo, hi)


# ---------------------------------------------------------------------------
# commands; each returns ({filename: text}, verdict)


def cmd_sample(cfg: ExperimentConfig):
    target = cfg.build_target()
    rng = np.random.default_rng(cfg.seed)
    x0 = cfg.experiment.get("x0")
    x0 = sample_pi(target, rng) if x0 is None else np.asarray(x0, dtype=float)
    trace = run_chain(target, cfg.kernels[0], x0, cfg.experiment["n"], rng, seed=cfg.seed)
    files = {}
    if "csv" in cfg.output["formats"]:
        files["trace.csv"] = trace.to_csv()
    if "json" in cfg.output["formats"]:
        files["trace.json"] = _dump({
            "target": target.name, "kernel": trace.kernel.to_dict(), "seed": cfg.seed,
            "states": trace.states.tolist(), "accepted": trace.accepted.astype(int).tolist(),
            "rejections": trace.rejections.tolist()})
    return files, "PASS"


def cmd_lab(cfg: ExperimentConfig):
    exp = cfg.experiment
    target = cfg.build_target()
    grid = _grid(cfg, target)
    kernels = lab.build_discrete_kernels(grid, exp.get("proposal_radius", 1),
                                         exp.get("boundary", "periodic"))
    swap = exp.get("swap_labels")
    if swap:
        a, b = swap
        kernels[a], kernels[b] = kernels[b].relabel(a), kernels[a].relabel(b)
    rng = np.random.default_rng(cfg.seed)
    ordering = lab.verify_ordering(kernels, exp.get("num_f", 1000), rng, grid=grid)
    shape = (grid.n,) * grid.dimension
    consequences = lab.ordering_consequences(kernels, exp.get("conductance_mode"), shape)
    verdict = "PASS" if ordering.passed and consequences.passed else "FAIL"
    files = {}
    if "csv" in cfg.output["formats"]:
        files["ordering.csv"] = ordering.to_csv()
    if "json" in cfg.output["formats"]:
        files["ordering.json"] = ordering.to_json()
        files["consequences.json"] = consequences.to_json()
    return files, verdict


def cmd_check_representation(cfg: ExperimentConfig):
    exp = cfg.experiment
    target = cfg.build_target()
    grid = _grid(cfg, target)
    rep1, rep2 = representation.build_representation(
        exp["pair"], grid, exp.get("proposal_radius", 1), exp.get("boundary", "periodic"))
    if exp.get("corrupt", False):
        rep1 = representation.corrupt_representation(rep1)
    reports = representation.check_all(rep1, rep2)
    verdict = "PASS" if all(r.passed for r in reports) else "FAIL"
    files = {"representation.json": _dump({"verdict": verdict,
                                           "reports": [r.to_dict() for r in reports]})}
    if "csv" in cfg.output["formats"]:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["check", "index", "residual", "verdict"])
        for r in reports:
            for k, v in enumerate(r.per_fiber_residuals):
                w.writerow([r.check, k, format(v, ".17g"), r.verdict])
        files["representation.csv"] = buf.getvalue()
    return files, verdict


def cmd_compare(cfg: ExperimentConfig):
    exp = cfg.experiment
    target = cfg.build_target()
    fids = exp.get("functions") or [f"x{i + 1}" for i in range(target.dim)]
    try:
        f_list = [diagnostics.test_function(target, fid) for fid in fids]
    except ValueError as exc:
        raise ConfigError(f"experiment.functions: {exc}") from None
    kernels = {k.label: k for k in cfg.kernels}
    rng = np.random.default_rng(cfg.seed)
    report = diagnostics.compare_kernels(
        target, f_list, exp["n_pairs"], rng, kernels=kernels, mse_n=exp.get("mse_n", 100),
        mse_reps=exp.get("mse_replications", 500), strict=exp.get("strict", False))
    files = {}
    if "csv" in cfg.output["formats"]:
        files["compare.csv"] = report.to_csv()
    if "json" in cfg.output["formats"]:
        files["compare.json"] = report.to_json()
    return files, report.overall


COMMANDS = {"sample": cmd_sample, "lab": cmd_lab,
            "check-representation": cmd_check_representation, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainorder", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
        s.add_argument("--out", type=Path, default=None, help="overrides output.directory")
        s.add_argument("--format", choices=("csv", "json", "both"), default=None)
        if name == "check-representation":
            s.add_argument("--corrupt", action="store_true",
                           help="perturb one fiber kernel as a negative control")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        text = args.config.read_text(encoding="utf-8")
        cfg = parse_config(text, args.command, args.seed)
        if args.format is not None:
            fmts = ["csv", "json"] if args.format == "both" else [args.format]
            cfg = ExperimentConfig(cfg.command, cfg.target, cfg.kernels, cfg.experiment,
                                   {**cfg.output, "formats": fmts})
        if getattr(args, "corrupt", False):
            cfg.experiment["corrupt"] = True
        out_dir = args.out or Path(cfg.output.get("directory", "out"))
        files, verdict = COMMANDS[args.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EfficiencyError, ConstructionError, NumericalError, DomainError, ValueError,
            KeyError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    files["manifest.json"] = _manifest(cfg, list(files) + ["manifest.json"], verdict)
    try:
        for name, body in files.items():
            write_atomic(out_dir / name, body)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - start
    print(f"{args.command}: {verdict} in {elapsed:.2f}s -> {out_dir}", file=sys.stderr)
    if verdict == "FAIL":
        for name in files:
            if name != "manifest.json":
                print(f"  see {out_dir / name}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
