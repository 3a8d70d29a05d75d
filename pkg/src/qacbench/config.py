"""Run configuration: a flat INI file with sections, all seeds explicit.

Every stage reads its knobs from here; the canonical rendering (every key
in a fixed order) is hashed into a config fingerprint that reports and the
artifact manifest carry, so any number in any report is reproducible from
the config file alone.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _parse_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _parse_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _parse_strs(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


@dataclass
class RunConfig:
    # [paths]
    corpus: str = "corpus.tsv"
    workdir: str = "work"
    # [synth]
    synth_enabled: bool = True
    synth_queries: int = 2000
    synth_docs: int = 5000
    synth_topics: int = 12
    synth_seed: int = 7
    # [corpus]
    top_l: int = 5000
    split_fractions: tuple[float, ...] = (0.6, 0.3, 0.1)
    split_seed: int = 11
    min_prefix_len: int = 3
    # [docranker]
    top_k: int = 100
    # [clicksim]
    alpha: float = 1.0
    cutoff: int = 20
    retriever_passes: int = 15
    ranker_passes: int = 1
    test_passes: int = 1
    log_seed: int = 13
    ranker_subsample: float = 1.0
    # [retriever]
    m_candidates: int = 20
    tau: float = 0.1
    # [features]
    feature_dim: int = 1 << 18
    feature_seed: int = 17
    # [training]
    epochs: int = 5
    learning_rate: float = 0.1
    l2: float = 1e-6
    weighting: str = "magnitude"
    train_seed: int = 19
    # [eval]
    pad_k: int = 10
    k_list: tuple[int, ...] = (1, 5, 10)
    eval_seed: int = 23
    variants: tuple[str, ...] = (
        "unbiased",
        "biased",
        "prescient@1",
        "prescient@5",
        "prescient@inf",
        "misspecified(0.5)",
        "misspecified(2)",
    )
    size_fractions: tuple[float, ...] = (0.01, 0.1, 0.5, 1.0)
    size_seed: int = 29
    # [run]
    threads: int = 1

    _SCHEMA = {
        ("paths", "corpus"): ("corpus", str),
        ("paths", "workdir"): ("workdir", str),
        ("synth", "enabled"): ("synth_enabled", _parse_bool),
        ("synth", "queries"): ("synth_queries", int),
        ("synth", "docs"): ("synth_docs", int),
        ("synth", "topics"): ("synth_topics", int),
        ("synth", "seed"): ("synth_seed", int),
        ("corpus", "top_l"): ("top_l", int),
        ("corpus", "split_fractions"): ("split_fractions", _parse_floats),
        ("corpus", "split_seed"): ("split_seed", int),
        ("corpus", "min_prefix_len"): ("min_prefix_len", int),
        ("docranker", "top_k"): ("top_k", int),
        ("clicksim", "alpha"): ("alpha", float),
        ("clicksim", "cutoff"): ("cutoff", int),
        ("clicksim", "retriever_passes"): ("retriever_passes", int),
        ("clicksim", "ranker_passes"): ("ranker_passes", int),
        ("clicksim", "test_passes"): ("test_passes", int),
        ("clicksim", "log_seed"): ("log_seed", int),
        ("clicksim", "ranker_subsample"): ("ranker_subsample", float),
        ("retriever", "m_candidates"): ("m_candidates", int),
        ("retriever", "tau"): ("tau", float),
        ("features", "dim"): ("feature_dim", int),
        ("features", "seed"): ("feature_seed", int),
        ("training", "epochs"): ("epochs", int),
        ("training", "learning_rate"): ("learning_rate", float),
        ("training", "l2"): ("l2", float),
        ("training", "weighting"): ("weighting", str),
        ("training", "seed"): ("train_seed", int),
        ("eval", "pad_k"): ("pad_k", int),
        ("eval", "k_list"): ("k_list", _parse_ints),
        ("eval", "seed"): ("eval_seed", int),
        ("eval", "variants"): ("variants", _parse_strs),
        ("eval", "size_fractions"): ("size_fractions", _parse_floats),
        ("eval", "size_seed"): ("size_seed", int),
        ("run", "threads"): ("threads", int),
    }

    @classmethod
    def from_ini(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        cfg = cls()
        for section in parser.sections():
            for key, raw in parser.items(section):
                spec = cls._SCHEMA.get((section, key))
                if spec is None:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                name, parse = spec
                try:
                    setattr(cfg, name, parse(raw))
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.split_fractions) != 3:
            raise ConfigError("split_fractions must have exactly 3 entries")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split_fractions must sum to 1")
        if self.weighting not in ("uniform", "magnitude"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if not (0.0 < self.ranker_subsample <= 1.0):
            raise ConfigError("ranker_subsample must be in (0, 1]")
        if self.feature_dim < (1 << 10) or self.feature_dim & (self.feature_dim - 1):
            raise ConfigError("feature dim must be a power of two >= 1024")
        if self.pad_k < 2:
            raise ConfigError("pad_k must be >= 2")
        if "unbiased" not in self.variants:
            raise ConfigError("the variant list must include 'unbiased'")

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for (section, key), (name, _) in self._SCHEMA.items():
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, name)
            if isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            parser.set(section, key, rendered)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:16]

    def seed_set(self) -> dict[str, int]:
        return {
            "synth_seed": self.synth_seed,
            "split_seed": self.split_seed,
            "log_seed": self.log_seed,
            "feature_seed": self.feature_seed,
            "train_seed": self.train_seed,
            "eval_seed": self.eval_seed,
            "size_seed": self.size_seed,
        }
