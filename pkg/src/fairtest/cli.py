"""Command-line entry point.

Every command reads a JSON run config (``--config``), lets ``--seed`` and
``--out`` override the matching fields, and writes its outputs plus a
``manifest.json`` embedding the resolved config into the output directory.
Failures leave an ``error.json`` record and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import experiments as ex
from .data import Transform, pair_dataset, read_dataset, read_pairs, write_dataset, write_pairs
from .errors import ConfigurationError, FairTestError
from .generation import STRATEGIES, GenConfig, generate_unfair, run_manifest, successful_pairs
from .metrics import METRICS, check_metric, coverage_all
from .nn import dumps_model, load_model

log = logging.getLogger("fairtest")

COMMANDS = ("select-neurons", "coverage", "generate", "enhance", "mutate", "bench")


@dataclass
class RunConfig:
    model_path: str = "model.json"
    dataset_path: str = "train.dft"
    test_dataset_path: str = "test.dft"
    transform: dict = field(default_factory=lambda: {
        "kind": "patch_flip", "patch_indices": [0, 1, 2, 3], "value_map": {"A": [0.0] * 4, "B": [255.0] * 4}})
    target: str = None
    alpha: float = 0.05
    top_k: int = 10
    z: int = 100
    layers: list = None
    metrics: list = field(default_factory=lambda: list(METRICS))
    suites: list = field(default_factory=list)
    generation: dict = field(default_factory=dict)
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    enhance: dict = field(default_factory=dict)
    mutation: dict = field(default_factory=lambda: {"per_operator": 10})
    benchmark: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def gen_config(self):
        # the run seed always drives generation so --seed reproduces a whole run
        spec = {**self.generation, "seed": self.seed}
        try:
            return GenConfig(**spec)
        except TypeError as exc:
            raise ConfigurationError(f"bad generation config: {exc}") from None

    def analysis(self):
        return ex.AnalysisConfig(self.alpha, self.top_k, self.z, tuple(self.layers) if self.layers else None)


def load_config(path, base_dir=None):
    if path is None:
        return RunConfig(), Path.cwd()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(raw), path.parent


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(obj):
    """JSON-safe copy: nan becomes None, tuples become lists, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


class Output:
    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def text(self, name, content):
        target = self.dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
        self.files.append(name)
        return target

    def json(self, name, obj):
        return self.text(name, dumps_json(_clean(obj)))

    def path(self, name):
        self.files.append(name)
        return self.dir / name


# -- shared loading ----------------------------------------------------------------

def _subject(cfg, base, need_test=True):
    model = load_model(_resolve(base, cfg.model_path))
    train = read_dataset(_resolve(base, cfg.dataset_path))
    test = read_dataset(_resolve(base, cfg.test_dataset_path)) if need_test else train
    spec = dict(cfg.transform)
    if spec.get("pairs_path"):
        spec["pairs_path"] = str(_resolve(base, spec["pairs_path"]))
    t = Transform.from_dict(spec)
    train_pairs = pair_dataset(train, t, cfg.target).pairs
    test_pairs = pair_dataset(test, t, cfg.target).pairs if need_test else train_pairs
    return ex.Subject(model, train, test, t, train_pairs, test_pairs)


# -- commands ----------------------------------------------------------------------

def cmd_select_neurons(cfg, base, out):
    subject = _subject(cfg, base, need_test=False)
    nf, _ = ex.analyse(subject.model, subject.train_pairs, cfg.analysis())
    out.text("neurons.csv", nf.to_csv())
    counts = nf.significant_counts()
    out.json("summary.json", {
        "critical_value": nf.critical_value,
        "alpha": nf.alpha,
        "group_sizes": list(nf.group_sizes),
        "pair_count": len(subject.train_pairs),
        "layers": [{"layer": j, "width": int(len(h)), "significant": counts[j],
                    "top_k": [int(k) for k in nf.top_k(j, cfg.top_k)]}
                   for j, h in enumerate(nf.h)],
        "warnings": nf.warnings,
    })


def cmd_coverage(cfg, base, out, suite_paths=()):
    for m in cfg.metrics:
        check_metric(m)
    subject = _subject(cfg, base, need_test=False)
    nf, profile = ex.analyse(subject.model, subject.train_pairs, cfg.analysis())
    suites = {}
    for p in list(cfg.suites) + list(suite_paths):
        pairs, _ = read_pairs(_resolve(base, p))
        suites[Path(p).stem] = pairs
    if not suites:
        suites["training"] = subject.train_pairs
    table = {}
    for name in sorted(suites):
        reports = coverage_all(suites[name], subject.model, nf, profile, cfg.metrics)
        out.json(f"coverage_{name}.json", {"suite": name, "pair_count": len(suites[name]),
                                            "reports": {m: r.to_dict() for m, r in reports.items()}})
        table[name] = {m: r.ratio for m, r in reports.items()}
    out.json("profile.json", profile.to_dict())
    out.json("comparison.json", table)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["suite", *cfg.metrics])
    for name in sorted(table):
        writer.writerow([name, *(repr(table[name][m]) for m in cfg.metrics)])
    out.text("comparison.csv", buf.getvalue())


def cmd_generate(cfg, base, out):
    gen = cfg.gen_config()
    for s in cfg.strategies:
        replace(gen, strategy=s)  # rejects unknown names before any work is done
    subject = _subject(cfg, base)
    fair, _ = ex.split_by_fairness(subject.model, subject.test_pairs)
    runs = {}
    for s in cfg.strategies:
        results = generate_unfair(subject.model, fair, replace(gen, strategy=s))
        pairs = successful_pairs(results)
        write_pairs(out.path(f"unfair_{s}.dft"), pairs, subject.test.class_count,
                    subject.test.attribute_domain)
        out.files.append(f"unfair_{s}.dft.attrs")
        runs[s] = run_manifest(replace(gen, strategy=s), results)
        runs[s]["written_pairs"] = len(pairs)
    out.json("generation.json", {"seed_pair_count": len(fair), "strategies": runs})


def cmd_enhance(cfg, base, out):
    gen = cfg.gen_config()
    try:
        config = ex.EnhanceConfig(**cfg.enhance)
    except TypeError as exc:
        raise ConfigurationError(f"bad enhance config: {exc}") from None
    unknown = sorted(set(config.strategies) - set(ex.SELECTION_STRATEGIES))
    if unknown:
        raise ConfigurationError(f"unknown selection strategies {unknown}; valid names: "
                                 f"{', '.join(ex.SELECTION_STRATEGIES)}")
    subject = _subject(cfg, base)
    report, models = ex.enhancement_study(subject, cfg.analysis(), config, gen, cfg.seed)
    for strategy, model in models.items():
        out.text(f"model_{ex.SHORT_NAMES[strategy]}.json", dumps_model(model))
    out.json("report.json", report)


def cmd_mutate(cfg, base, out):
    opts = {"per_operator": 10, **cfg.mutation}
    per_operator = int(opts.pop("per_operator"))
    if opts:
        raise ConfigurationError(f"unknown mutation options: {', '.join(sorted(opts))}")
    subject = _subject(cfg, base)
    study = ex.mutation_study(subject, cfg.analysis(), per_operator, cfg.seed, keep_models=True)
    columns = ["mutant", "operator", "intensity", "seed", "accuracy", "fairness_score", *METRICS]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for i, (row, model) in enumerate(zip(study.rows, study.models)):
        name = f"mutant_{i:03d}"
        out.text(f"mutants/{name}.json", dumps_model(model))
        writer.writerow([name] + [repr(row[c]) if isinstance(row[c], float) else row[c]
                                  for c in columns[1:]])
    out.text("registry.csv", buf.getvalue())
    out.json("correlation.json", {"names": ["fairness_score", *METRICS], "matrix": study.correlation,
                                  "mutant_count": len(study.rows)})


def cmd_bench(cfg, base, out):
    """Build the synthetic desk benchmark and a config pointing at it."""
    try:
        bc = ex.BenchmarkConfig(**{"seed": cfg.seed, **cfg.benchmark})
    except TypeError as exc:
        raise ConfigurationError(f"bad benchmark config: {exc}") from None
    subject = ex.build_benchmark(bc)
    out.text("model.json", dumps_model(subject.model))
    write_dataset(out.path("train.dft"), subject.train)
    write_dataset(out.path("test.dft"), subject.test)
    out.files += ["train.dft.attrs", "test.dft.attrs"]
    run = replace(cfg, model_path="model.json", dataset_path="train.dft", test_dataset_path="test.dft",
                  transform=subject.transform.to_dict())
    out.json("config.json", asdict(run))
    out.json("benchmark.json", {"test_accuracy": subject.test_accuracy, "train_size": len(subject.train),
                                "test_size": len(subject.test)})


HANDLERS = {
    "select-neurons": cmd_select_neurons,
    "coverage": cmd_coverage,
    "generate": cmd_generate,
    "enhance": cmd_enhance,
    "mutate": cmd_mutate,
    "bench": cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fairtest", description="Fairness testing for dense classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config; relative paths resolve against its directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        if name == "coverage":
            p.add_argument("suites", nargs="*", help="paired DFT1 containers to measure")
    return parser


def run(argv=None):
    """Execute one command; returns the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.out) if args.out else None
    try:
        cfg, base = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if out_dir is None:
            out_dir = _resolve(base, cfg.output_dir)
        cfg.output_dir = str(out_dir)
        out = Output(out_dir)
        (out.dir / "error.json").unlink(missing_ok=True)
        if args.command == "coverage":
            HANDLERS[args.command](cfg, base, out, args.suites)
        else:
            HANDLERS[args.command](cfg, base, out)
        manifest = {"command": args.command, "config": asdict(cfg), "outputs": sorted(out.files)}
        out.json("manifest.json", manifest)
    except (FairTestError, OSError, ValueError) as exc:
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        target = out_dir or Path.cwd()
        try:
            target.mkdir(parents=True, exist_ok=True)
            (target / "error.json").write_text(dumps_json(record), encoding="utf-8")
        except OSError:
            pass
        print(f"fairtest {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    sys.exit(run(argv))
