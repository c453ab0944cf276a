"""YAML configuration and pipeline assembly.

Sections: ``kg``, ``kge``, ``controller``, ``augment``, ``gateway``,
``pipeline``. Relative paths are resolved against the config file's
directory.
"""

from __future__ import annotations

import copy
import importlib
from dataclasses import asdict
from pathlib import Path
from typing import Any, Mapping

import yaml

from .augment import SimilarityProvider, TrigramSimilarity
from .controller import resolve_theta0
from .gateway import (
    ANSWER,
    BUILTIN_TEMPLATES,
    QUERY_GEN,
    RELEVANCE,
    TRIPLE_EXTRACT,
    FixtureBackend,
    Gateway,
    HttpBackend,
    PromptTemplate,
    RoleBinding,
    Trace,
    knowledge_role,
)
from .kg import KnowledgeGraph, load_kg
from .kge import ComplExModel, TrainConfig, load_checkpoint, train
from .pipeline import Pipeline, PipelineConfig

__all__ = ["ConfigError", "DEFAULTS", "load_config", "set_dotted", "build_pipeline"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "kg": {"triples": None, "aliases": None},
    "kge": {"checkpoint": None, "train": {}},
    "controller": {"theta0": None, "qa_model": None, "dataset": None, "c": 128.0, "max_turns": 2},
    "augment": {"topk_relations": 3, "max_tails_per_entity": 3, "similarity": "lexical",
                "similarity_factory": None, "relation_match_threshold": 0.5},
    "gateway": {"fixture": None, "trace": None, "max_concurrency": 1, "timeout": 60.0,
                "max_attempts": 3, "default": {}, "roles": {}, "knowledge_models": []},
    "pipeline": {"k": 5, "budget_mode": "k_plus_t"},
}

_PATH_KEYS = {("kg", "triples"), ("kg", "aliases"), ("kge", "checkpoint"), ("gateway", "fixture"), ("gateway", "trace")}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> dict:
    """Defaults, then the file, then dotted ``overrides`` (``"controller.theta0": 1``)."""
    cfg = copy.deepcopy(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        cfg = _merge(cfg, raw)
        base = path.resolve().parent
    for sec, key in _PATH_KEYS:
        val = cfg[sec].get(key)
        if val:
            cfg[sec][key] = str((base / val).resolve()) if not Path(val).is_absolute() else val
    tpl_roles = cfg["gateway"]["roles"]
    for role, spec in tpl_roles.items():
        if isinstance(spec, Mapping) and spec.get("template") and not Path(spec["template"]).is_absolute():
            spec["template"] = str((base / spec["template"]).resolve())
    for key, val in (overrides or {}).items():
        if val is not None:
            set_dotted(cfg, key, val)
    return cfg


def set_dotted(cfg: dict, key: str, value: Any) -> None:
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _similarity(cfg: dict, kg: KnowledgeGraph) -> SimilarityProvider:
    aug = cfg["augment"]
    if aug["similarity"] == "lexical":
        return TrigramSimilarity.for_graph(kg)
    if aug["similarity"] == "external":
        target = aug.get("similarity_factory")
        if not target or ":" not in target:
            raise ConfigError("augment.similarity=external needs augment.similarity_factory = 'module:callable'")
        mod, _, attr = target.partition(":")
        return getattr(importlib.import_module(mod), attr)(kg)
    raise ConfigError(f"unknown augment.similarity {aug['similarity']!r}")


def _http_backend(spec: Mapping, gw: Mapping) -> HttpBackend:
    merged = {**gw.get("default", {}), **spec}
    if not merged.get("base_url") or not merged.get("model"):
        raise ConfigError(f"role needs base_url and model: {dict(spec)}")
    return HttpBackend(
        merged["base_url"], merged["model"], merged.get("api_key_env"),
        timeout=float(merged.get("timeout", gw["timeout"])),
        max_attempts=int(merged.get("max_attempts", gw["max_attempts"])),
    )


def build_gateway(cfg: dict, trace: Trace | None = None) -> Gateway:
    gw = cfg["gateway"]
    fixture = FixtureBackend.load(gw["fixture"]) if gw.get("fixture") else None
    trace = trace if trace is not None else Trace(gw.get("trace"))
    bindings = {}

    def binding(role: str, spec: Mapping | None, default_tpl: str) -> RoleBinding:
        spec = dict(spec or {})
        tpl = PromptTemplate.from_file(spec["template"]) if spec.get("template") else PromptTemplate.builtin(default_tpl)
        if spec.get("base_url") or (fixture is None and gw.get("default")):
            backend = _http_backend(spec, gw)
        elif fixture is not None:
            backend = fixture
        else:
            raise ConfigError(f"role {role!r} has no backend (set gateway.fixture or an endpoint)")
        return RoleBinding(backend, tpl, spec.get("system", "You are a helpful assistant."),
                           float(spec.get("temperature", 0.0)), int(spec.get("max_tokens", 512)))

    for role in (ANSWER, TRIPLE_EXTRACT, QUERY_GEN, RELEVANCE):
        bindings[role] = binding(role, gw["roles"].get(role), BUILTIN_TEMPLATES[role])
    names = []
    for km in gw["knowledge_models"]:
        spec = {"name": km} if isinstance(km, str) else dict(km)
        name = spec.pop("name", None)
        if not name:
            raise ConfigError("knowledge model entry without a name")
        names.append(name)
        bindings[knowledge_role(name)] = binding(name, spec, "reference")
    if not names:
        raise ConfigError("gateway.knowledge_models is empty")
    return Gateway(bindings, names, trace, int(gw["max_concurrency"]))


def load_model(cfg: dict, kg: KnowledgeGraph) -> ComplExModel:
    ck = cfg["kge"].get("checkpoint")
    if ck:
        return load_checkpoint(ck, kg)
    params = {"seed": cfg["seed"], **cfg["kge"].get("train", {})}
    return train(kg, TrainConfig(**params))


def build_pipeline(cfg: dict, trace: Trace | None = None, kg: KnowledgeGraph | None = None,
                   model: ComplExModel | None = None) -> Pipeline:
    """Resolve theta0, load graph and embeddings, bind roles."""
    ctl = cfg["controller"]
    theta0 = resolve_theta0(ctl.get("qa_model"), ctl.get("dataset"), ctl.get("theta0"))
    if kg is None:
        if not cfg["kg"].get("triples"):
            raise ConfigError("kg.triples is not set")
        kg = load_kg(cfg["kg"]["triples"], cfg["kg"].get("aliases"))
    if model is None:
        model = load_model(cfg, kg)
    aug, pl = cfg["augment"], cfg["pipeline"]
    pconf = PipelineConfig(
        theta0=theta0, schedule_c=float(ctl["c"]), max_turns=int(ctl["max_turns"]),
        k=int(pl["k"]), budget_mode=pl["budget_mode"],
        topk_relations=int(aug["topk_relations"]), max_tails_per_entity=int(aug["max_tails_per_entity"]),
        relation_match_threshold=float(aug["relation_match_threshold"]),
    )
    echo = copy.deepcopy(cfg)
    echo["resolved"] = asdict(pconf)
    return Pipeline(kg, model, build_gateway(cfg, trace), pconf, _similarity(cfg, kg), echo_config=echo)
