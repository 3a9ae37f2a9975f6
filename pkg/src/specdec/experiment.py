"""Config-driven experiments: build models and prompts, decode, write reports.

A config is one YAML (or JSON) mapping; see README.md for the schema. All
randomness is derived from the config seed, so the JSON summary is
byte-for-byte reproducible.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .decoding import DecodeConfig, RunRecords, decode_session
from .dist import Distribution, WeightVector, derive_seed
from .ensemble import Criterion, EnsembleDrafter, WeightPolicy
from .errors import ConfigError, IoError, SpecDecError
from .metrics import LatencyModel, block_efficiency, expected_speedup, weight_csv
from .models import (
    CharTokenizer,
    ConstantModel,
    Context,
    DraftSource,
    KgramModel,
    Segment,
    SyntheticOracle,
    Tag,
    make_transform,
    read_corpus,
    train_kgram,
)
from .tree import tree_session

SCHEMA_VERSION = 1


@dataclass
class MethodSpec:
    name: str
    drafter: str  # "single" or "ensemble"
    sources: list[str]
    policy: WeightPolicy | None = None
    criterion: Criterion = Criterion.SOFT_KL
    window: int | None = None
    tree_width: int | None = None


@dataclass
class ScenarioSpec:
    name: str
    target: str
    prompt_corpus: str | None = None


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    seed: int
    corpora: dict[str, Path]
    models: dict[str, dict]
    sources: dict[str, dict]
    scenarios: list[ScenarioSpec]
    methods: list[MethodSpec]
    decode: dict
    prompts: dict
    latency: LatencyModel
    vocab_size: int | None = None
    separator: str = "\n"
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
        return cls.from_dict(raw, path.parent, seed)

    @classmethod
    def from_dict(cls, raw: Any, base_dir: str | Path = ".", seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = int(seed)
        try:
            return cls._parse(raw, Path(base_dir))
        except ConfigError:
            raise
        except SpecDecError as exc:
            raise ConfigError(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc!r}") from exc

    @classmethod
    def _parse(cls, raw: dict, base_dir: Path) -> "ExperimentConfig":
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        if "seed" not in raw:
            raise ConfigError("config needs a seed")
        seed = int(raw["seed"])
        corpora = {k: base_dir / v for k, v in (raw.get("corpora") or {}).items()}
        models = dict(raw["models"])
        for name, spec in models.items():
            kind = spec.get("kind")
            if kind not in ("kgram", "snapshot", "synthetic", "constant"):
                raise ConfigError(f"model {name}: unknown kind {kind!r}")
            if kind == "kgram" and spec.get("corpus") not in corpora:
                raise ConfigError(f"model {name}: unknown corpus {spec.get('corpus')!r}")
        sources = dict(raw["sources"])
        for name, spec in sources.items():
            if spec.get("model") not in models:
                raise ConfigError(f"source {name}: unknown model {spec.get('model')!r}")
        scenarios = []
        for s in raw["scenarios"]:
            sc = ScenarioSpec(s["name"], s["target"], s.get("prompt_corpus"))
            if sc.target not in models:
                raise ConfigError(f"scenario {sc.name}: unknown target {sc.target!r}")
            if sc.prompt_corpus is not None and sc.prompt_corpus not in corpora:
                raise ConfigError(f"scenario {sc.name}: unknown corpus {sc.prompt_corpus!r}")
            scenarios.append(sc)
        if len({s.name for s in scenarios}) != len(scenarios):
            raise ConfigError("scenario names must be unique")
        methods = [cls._parse_method(m, sources) for m in raw["methods"]]
        if len({m.name for m in methods}) != len(methods):
            raise ConfigError("method names must be unique")
        decode = dict(raw.get("decode") or {})
        DecodeConfig(**decode)  # validate early
        lat = raw.get("latency") or {"preset": ["7B", "68M"]}
        if "ratio" in lat:
            latency = LatencyModel(float(lat["ratio"]))
        else:
            latency = LatencyModel.preset(*lat["preset"])
        vocab_size = raw.get("vocab_size")
        if not corpora and vocab_size is None:
            raise ConfigError("config without corpora needs vocab_size")
        return cls(
            raw=raw,
            base_dir=base_dir,
            seed=seed,
            corpora=corpora,
            models=models,
            sources=sources,
            scenarios=scenarios,
            methods=methods,
            decode=decode,
            prompts=dict(raw.get("prompts") or {}),
            latency=latency,
            vocab_size=vocab_size,
            separator=(raw.get("tokenizer") or {}).get("separator", "\n"),
        )

    @staticmethod
    def _parse_method(m: dict, sources: dict) -> MethodSpec:
        drafter = m.get("drafter", "single")
        if drafter not in ("single", "ensemble"):
            raise ConfigError(f"method {m.get('name')}: unknown drafter {drafter!r}")
        srcs = list(m["sources"])
        for s in srcs:
            if s not in sources:
                raise ConfigError(f"method {m['name']}: unknown source {s!r}")
        if drafter == "single" and len(srcs) != 1:
            raise ConfigError(f"method {m['name']}: single drafter takes one source")
        policy = None
        if drafter == "ensemble":
            p = dict(m.get("policy") or {"kind": "grid"})
            if "weights" in p:
                p["fixed_w"] = WeightVector(tuple(p.pop("weights")))
            policy = WeightPolicy(**p)
        window = m.get("window", "all")
        window = None if window in (None, "all", "ALL") else int(window)
        return MethodSpec(
            name=m["name"],
            drafter=drafter,
            sources=srcs,
            policy=policy,
            criterion=Criterion(m.get("criterion", "soft_kl")),
            window=window,
            tree_width=m.get("tree_width"),
        )


class Workspace:
    """Models, sources and tokenizer built from a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.docs: dict[str, list[str]] = {k: read_corpus(p) for k, p in cfg.corpora.items()}
        if self.docs:
            self.tokenizer = CharTokenizer.from_texts(
                [d for docs in self.docs.values() for d in docs], cfg.separator
            )
            self.vocab_size = self.tokenizer.vocab_size
        else:
            self.tokenizer = None
            self.vocab_size = int(cfg.vocab_size)
        self.encoded = {k: [self.tokenizer.encode(d) for d in docs] for k, docs in self.docs.items()}
        self.models = {name: self._build_model(name, spec) for name, spec in cfg.models.items()}
        self.sources = {name: self._build_source(name, spec) for name, spec in cfg.sources.items()}

    def _build_model(self, name: str, spec: dict):
        kind = spec["kind"]
        if kind == "kgram":
            return train_kgram(self.encoded[spec["corpus"]], int(spec.get("k", 2)),
                               float(spec.get("lambda", 0.01)), self.vocab_size)
        if kind == "snapshot":
            model = KgramModel.load(self.cfg.base_dir / spec["path"])
            if model.vocab_size != self.vocab_size:
                raise ConfigError(f"model {name}: snapshot vocab {model.vocab_size} != {self.vocab_size}")
            return model
        if kind == "synthetic":
            return SyntheticOracle(self.vocab_size, int(spec.get("seed", 0)),
                                   float(spec.get("concentration", 1.0)), spec.get("order"))
        if "probs" in spec:
            return ConstantModel(Distribution(spec["probs"]))
        return ConstantModel.point_mass(self.vocab_size, int(spec["token"]))

    def _build_source(self, name: str, spec: dict) -> DraftSource:
        t = dict(spec.get("transform") or {"kind": "identity"})
        return DraftSource(name, self.models[spec["model"]], make_transform(t.pop("kind"), **t))

    def prompts(self, scenario_index: int) -> list[Context]:
        sc = self.cfg.scenarios[scenario_index]
        opts = self.cfg.prompts
        count = int(opts.get("count", 8))
        visual_len = int(opts.get("visual_len", 12))
        text_len = int(opts.get("text_len", 8))
        system = self.tokenizer.encode(opts["system"]) if opts.get("system") and self.tokenizer else []
        out = []
        for i in range(count):
            gen = np.random.Generator(np.random.PCG64(derive_seed(self.cfg.seed, scenario_index, i)))
            segs = [Segment(Tag.SYSTEM, system)] if system else []
            if sc.prompt_corpus is not None:
                docs = self.encoded[sc.prompt_corpus]
                visual = docs[int(gen.integers(len(docs)))][:visual_len]
                text = docs[int(gen.integers(len(docs)))][:text_len]
            else:
                visual = gen.integers(self.vocab_size, size=visual_len).tolist()
                text = gen.integers(self.vocab_size, size=text_len).tolist()
            segs += [Segment(Tag.VISUAL, visual), Segment(Tag.TEXT, text)]
            out.append(Context(tuple(segs)))
        return out

    def drafter(self, method: MethodSpec):
        srcs = [self.sources[s] for s in method.sources]
        if method.drafter == "single":
            return srcs[0]
        return EnsembleDrafter(srcs, method.policy, method.criterion, method.window)


def run_method(ws: Workspace, scenario_index: int, method: MethodSpec) -> tuple[dict, list[RunRecords]]:
    cfg = ws.cfg
    sc = cfg.scenarios[scenario_index]
    target = ws.models[sc.target]
    prompt_rows = []
    all_records = []
    for i, ctx in enumerate(ws.prompts(scenario_index)):
        seed = derive_seed(cfg.seed, scenario_index, i, 1)
        dcfg = DecodeConfig(**(cfg.decode | {"seed": seed}))
        drafter = ws.drafter(method)  # fresh history per prompt
        if method.tree_width is None:
            out, rec = decode_session(target, drafter, ctx, dcfg)
        else:
            out, rec = tree_session(target, drafter, ctx, dcfg, int(method.tree_width))
        all_records.append(rec)
        row = {
            "prompt_index": i,
            "seed": seed,
            "prompt_tokens": list(ctx.prompt_tokens),
            "output_tokens": out,
            "blocks": [
                {"position": b.position, "accepted_count": b.accepted_count,
                 "tokens_emitted": b.tokens_emitted, "weight_used": list(b.weight_used)}
                for b in rec.blocks
            ],
            "block_efficiency": block_efficiency(rec),
        }
        if ws.tokenizer is not None:
            row["output_text"] = ws.tokenizer.decode(out)
        prompt_rows.append(row)
    gamma = DecodeConfig(**cfg.decode).gamma
    be = block_efficiency(all_records)
    summary = {
        "scenario": sc.name,
        "method": method.name,
        "drafter": method.drafter,
        "sources": method.sources,
        "gamma": gamma,
        "d": method.tree_width,
        "block_efficiency": be,
        "modeled_speedup": expected_speedup(be, gamma, cfg.latency),
        "latency_ratio": cfg.latency.ratio,
        "n_blocks": sum(len(r.blocks) for r in all_records),
        "prompts": prompt_rows,
    }
    return summary, all_records


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, fmt: str = "json") -> dict:
    """Run every (scenario, method) pair; write summary.json and weight CSVs.

    With ``fmt="csv"`` a flat summary.csv is written as well.
    """
    ws = Workspace(cfg)
    runs = []
    trajectories: dict[tuple[str, str, int], str] = {}
    for si, sc in enumerate(cfg.scenarios):
        for method in cfg.methods:
            summary, records = run_method(ws, si, method)
            runs.append(summary)
            if method.drafter == "ensemble":
                for pi, rec in enumerate(records):
                    trajectories[(sc.name, method.name, pi)] = weight_csv(rec)
    report = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "vocab_size": ws.vocab_size,
        "config": cfg.raw,
        "runs": runs,
    }
    if out_dir is not None:
        write_outputs(report, trajectories, Path(out_dir), fmt)
    return report


def summary_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def summary_csv(report: dict) -> str:
    lines = ["scenario,method,drafter,gamma,d,block_efficiency,modeled_speedup,latency_ratio,n_blocks"]
    for r in report["runs"]:
        d = "" if r["d"] is None else r["d"]
        lines.append(f"{r['scenario']},{r['method']},{r['drafter']},{r['gamma']},{d},"
                     f"{r['block_efficiency']!r},{r['modeled_speedup']!r},{r['latency_ratio']!r},{r['n_blocks']}")
    return "\n".join(lines) + "\n"


def write_outputs(report: dict, trajectories: dict, out_dir: Path, fmt: str) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(summary_json(report), encoding="utf-8")
        if fmt == "csv":
            (out_dir / "summary.csv").write_text(summary_csv(report), encoding="utf-8")
        if trajectories:
            wdir = out_dir / "weights"
            wdir.mkdir(exist_ok=True)
            for (scenario, method, pi), text in sorted(trajectories.items()):
                (wdir / f"{scenario}__{method}__p{pi}.csv").write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write outputs under {out_dir}: {exc}") from exc


def fixture_config_path() -> Path:
    """Path of the bundled two-scenario fixture config."""
    return Path(str(resources.files("specdec") / "data" / "fixture.yaml"))


def train_models(cfg: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Fit every k-gram model in ``cfg`` and write JSON snapshots plus the tokenizer alphabet."""
    ws = Workspace(cfg)
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, model in ws.models.items():
            if isinstance(model, KgramModel):
                path = out_dir / f"{name}.json"
                model.save(path)
                written.append(path)
        if ws.tokenizer is not None:
            path = out_dir / "tokenizer.json"
            path.write_text(json.dumps({"separator": ws.tokenizer.separator,
                                        "chars": ws.tokenizer.chars}) + "\n", encoding="utf-8")
            written.append(path)
    except OSError as exc:
        raise IoError(f"cannot write snapshots under {out_dir}: {exc}") from exc
    return written
