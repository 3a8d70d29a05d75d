"""Pipeline stages and artifact management.

Each stage reads its declared input artifacts from the working directory,
writes its outputs there, and records them in ``manifest.json`` together
with the config fingerprint and seed set. Stages are deterministic: re-running
with unchanged inputs produces byte-identical outputs.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import clicksim, corpus as corpus_mod, docrank, estimator, evaluation, ltr, retriever as retriever_mod
from .config import RunConfig
from .synth import generate_synthetic_corpus
from .util import derive_seed

__all__ = [
    "MissingArtifactError",
    "emit_manifest",
    "record_artifact",
    "stage_gen_synth",
    "stage_convert",
    "stage_train_docranker",
    "stage_simulate_logs",
    "stage_train_retriever",
    "stage_estimate",
    "stage_train_ranker",
    "run_experiment",
    "run_ablations",
    "data_size_curve",
    "full_run",
]

# Artifact file names under the working directory.
FILTERED = "filtered.tsv"
LABEL_MAP = "labelmap.json"
SPLITS = {"retriever": "retriever_train.tsv", "ranker": "ranker_train.tsv", "test": "test.tsv"}
DOCRANKER = "docranker.json"
LOGS = {"retriever": "log_retriever.jsonl", "ranker": "log_ranker.jsonl", "test": "log_test.jsonl"}
RETRIEVER = "retriever.json"
MANIFEST = "manifest.json"


def utilities_file(variant_label: str) -> str:
    return f"utilities_{_slug(variant_label)}.jsonl"


def ranker_file(variant_label: str) -> str:
    return f"ranker_{_slug(variant_label)}.json"


def _slug(label: str) -> str:
    return label.replace("@", "_at_").replace("(", "_").replace(")", "").replace(".", "p")


class MissingArtifactError(FileNotFoundError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_manifest(workdir: Path) -> dict:
    path = workdir / MANIFEST
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"version": 1, "config_fingerprint": "", "seeds": {}, "artifacts": {}}


def _write_manifest(workdir: Path, manifest: dict) -> Path:
    path = workdir / MANIFEST
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def emit_manifest(workdir: str | Path, cfg: RunConfig | None = None) -> Path:
    """Ensure the manifest file exists (empty artifact list is valid)."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(workdir)
    if cfg is not None:
        manifest["config_fingerprint"] = cfg.fingerprint()
        manifest["seeds"] = cfg.seed_set()
    return _write_manifest(workdir, manifest)


def record_artifact(workdir: Path, cfg: RunConfig, relpath: str, stage: str) -> None:
    path = workdir / relpath
    manifest = _load_manifest(workdir)
    manifest["config_fingerprint"] = cfg.fingerprint()
    manifest["seeds"] = cfg.seed_set()
    manifest["artifacts"][relpath] = {
        "sha256": _sha256(path),
        "bytes": path.stat().st_size,
        "stage": stage,
    }
    _write_manifest(workdir, manifest)


def _require(workdir: Path, relpath: str, producer: str) -> Path:
    path = workdir / relpath
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact {path}; run '{producer}' first")
    _warn_if_stale(workdir, relpath)
    return path


def _warn_if_stale(workdir: Path, relpath: str) -> None:
    manifest = _load_manifest(workdir)
    entry = manifest["artifacts"].get(relpath)
    if entry and entry["sha256"] != _sha256(workdir / relpath):
        print(f"warning: stale artifact hash for {relpath}: file changed since it was recorded", file=sys.stderr)


def _workdir(cfg: RunConfig) -> Path:
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    return workdir


# ---------------------------------------------------------------------------
# stages


def stage_gen_synth(cfg: RunConfig) -> Path:
    """Write the synthetic corpus to the configured corpus path."""
    corpus = generate_synthetic_corpus(
        cfg.synth_queries,
        cfg.synth_docs,
        cfg.synth_seed,
        n_topics=cfg.synth_topics,
    )
    path = Path(cfg.corpus)
    path.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(corpus, path)
    return path


def stage_convert(cfg: RunConfig) -> None:
    """Load, filter to the top labels, split, and write the partitions."""
    workdir = _workdir(cfg)
    source = Path(cfg.corpus)
    if not source.is_file():
        raise MissingArtifactError(f"missing artifact {source}; run 'gen-synth' first or point [paths] corpus at a file")
    raw = corpus_mod.load_corpus(source)
    filtered, id_map = corpus_mod.filter_top_labels(raw, cfg.top_l)
    split = corpus_mod.split_corpus(filtered, tuple(cfg.split_fractions), cfg.split_seed)
    corpus_mod.save_corpus(filtered, workdir / FILTERED)
    (workdir / LABEL_MAP).write_text(
        json.dumps({str(old): new for old, new in sorted(id_map.items())}, sort_keys=True), encoding="utf-8"
    )
    corpus_mod.save_corpus(split.retriever_train, workdir / SPLITS["retriever"])
    corpus_mod.save_corpus(split.ranker_train, workdir / SPLITS["ranker"])
    corpus_mod.save_corpus(split.test, workdir / SPLITS["test"])
    for rel in (FILTERED, LABEL_MAP, *SPLITS.values()):
        record_artifact(workdir, cfg, rel, "convert")


def stage_train_docranker(cfg: RunConfig) -> None:
    """Train the TF-IDF doc ranker on the full filtered corpus."""
    workdir = _workdir(cfg)
    train = corpus_mod.load_corpus(_require(workdir, FILTERED, "convert"))
    dr = docrank.train_doc_ranker(train, top_k=cfg.top_k)
    dr.save(workdir / DOCRANKER)
    record_artifact(workdir, cfg, DOCRANKER, "train-docranker")


def _propensity_model(cfg: RunConfig) -> clicksim.PropensityModel:
    return clicksim.PropensityModel(alpha=cfg.alpha, cutoff=cfg.cutoff)


def _split_passes(cfg: RunConfig) -> dict[str, int]:
    return {"retriever": cfg.retriever_passes, "ranker": cfg.ranker_passes, "test": cfg.test_passes}


def stage_simulate_logs(cfg: RunConfig, splits: Sequence[str] = ("retriever", "ranker", "test")) -> None:
    """Generate the biased click log for each requested split."""
    workdir = _workdir(cfg)
    dr = docrank.DocRanker.load(_require(workdir, DOCRANKER, "train-docranker"))
    model = _propensity_model(cfg)
    passes = _split_passes(cfg)
    for split in splits:
        part = corpus_mod.load_corpus(_require(workdir, SPLITS[split], "convert"))
        entries = clicksim.generate_log(
            part, dr, model, passes[split], cfg.min_prefix_len, derive_seed("log", split, seed=cfg.log_seed)
        )
        if split == "ranker" and cfg.ranker_subsample < 1.0:
            rng = np.random.default_rng(derive_seed("ranker-subsample", seed=cfg.log_seed))
            keep = sorted(rng.choice(len(entries), size=max(1, int(cfg.ranker_subsample * len(entries))), replace=False))
            entries = [entries[i] for i in keep]
        clicksim.write_log(entries, workdir / LOGS[split])
        record_artifact(workdir, cfg, LOGS[split], "simulate-log")


def stage_train_retriever(cfg: RunConfig) -> None:
    """Build utility-aware retriever training pairs and fit the trie.

    For each retriever-log entry, the candidate queries are the distinct
    retriever-train query texts that extend the typed prefix (found by
    bisecting the sorted text list); each gets an unbiased utility estimate
    against the entry. Low-utility queries are then excluded by the trie's
    aggregate threshold.
    """
    workdir = _workdir(cfg)
    part = corpus_mod.load_corpus(_require(workdir, SPLITS["retriever"], "convert"))
    dr = docrank.DocRanker.load(_require(workdir, DOCRANKER, "train-docranker"))
    entries = clicksim.read_log(_require(workdir, LOGS["retriever"], "simulate-log"))
    model = _propensity_model(cfg)
    unbiased = estimator.EstimatorVariant.unbiased()
    texts = sorted({item.query_text for item in part.items})
    pairs: list[tuple[str, str, float]] = []
    for entry in entries:
        i = bisect.bisect_left(texts, entry.prefix)
        while i < len(texts) and texts[i].startswith(entry.prefix):
            value = estimator.estimate_utility(entry, texts[i], dr, model, unbiased).value
            pairs.append((entry.prefix, texts[i], value))
            i += 1
    trie = retriever_mod.train_retriever(pairs, tau=cfg.tau, m=cfg.m_candidates)
    trie.save(workdir / RETRIEVER)
    record_artifact(workdir, cfg, RETRIEVER, "train-retriever")


def _load_core(cfg: RunConfig, log_split: str):
    workdir = _workdir(cfg)
    dr = docrank.DocRanker.load(_require(workdir, DOCRANKER, "train-docranker"))
    trie = retriever_mod.TrieRetriever.load(_require(workdir, RETRIEVER, "train-retriever"))
    entries = clicksim.read_log(_require(workdir, LOGS[log_split], "simulate-log"))
    return workdir, dr, trie, entries


def _prepare_training(cfg: RunConfig, entries, trie, dr):
    """Per entry: padded candidates and their (cached) feature vectors."""
    feat = ltr.PairFeaturizer(cfg.feature_dim, cfg.feature_seed)
    memo: dict[tuple[str, str, float], ltr.FeatureVector] = {}
    prepared = []
    for entry in entries:
        cs = retriever_mod.pad_candidates(trie.retrieve_candidates(entry.prefix), cfg.pad_k)
        fvs = []
        for q, s in cs.entries:
            key = (entry.prefix, q, s)
            fv = memo.get(key)
            if fv is None:
                fv = feat.featurize(entry.prefix, q, s)
                memo[key] = fv
            fvs.append(fv)
        prepared.append((entry, cs.entries, fvs))
    return prepared


def _targets_for_variant(entry, cs_entries, dr, model, variant):
    values = []
    for q, _ in cs_entries:
        if q == retriever_mod.NULL_QUERY:
            values.append(0.0)
        else:
            values.append(estimator.estimate_utility(entry, q, dr, model, variant).value)
    return values


def _samples_for_variant(cfg: RunConfig, prepared, dr, model, variant) -> list[ltr.PairwiseSample]:
    samples: list[ltr.PairwiseSample] = []
    for gid, (entry, cs_entries, fvs) in enumerate(prepared):
        targets = _targets_for_variant(entry, cs_entries, dr, model, variant)
        samples.extend(ltr.build_pairwise_samples(list(zip(fvs, targets)), cfg.weighting, group_id=gid))
    return samples


def stage_estimate(cfg: RunConfig, variant_label: str) -> None:
    """Dump per-(entry, candidate) utility estimates for one variant."""
    workdir, dr, trie, entries = _load_core(cfg, "ranker")
    model = _propensity_model(cfg)
    variant = estimator.EstimatorVariant.from_label(variant_label)
    targets: list[estimator.UtilityTarget] = []
    for entry in entries:
        cs = retriever_mod.pad_candidates(trie.retrieve_candidates(entry.prefix), cfg.pad_k)
        for q, _ in cs.entries:
            if q != retriever_mod.NULL_QUERY:
                targets.append(estimator.estimate_utility(entry, q, dr, model, variant))
    estimator.write_utilities(targets, workdir / utilities_file(variant_label))
    record_artifact(workdir, cfg, utilities_file(variant_label), "estimate")


def stage_train_ranker(cfg: RunConfig, variant_label: str, entries=None) -> ltr.RankerModel:
    """Train the pairwise ranker on one estimator variant's targets."""
    workdir, dr, trie, log_entries = _load_core(cfg, "ranker")
    if entries is None:
        entries = log_entries
    model = _propensity_model(cfg)
    variant = estimator.EstimatorVariant.from_label(variant_label)
    prepared = _prepare_training(cfg, entries, trie, dr)
    samples = _samples_for_variant(cfg, prepared, dr, model, variant)
    ranker = ltr.train_ranker(
        samples,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        l2=cfg.l2,
        seed=cfg.train_seed,
        extra_meta={"variant": variant_label, "feature_seed": cfg.feature_seed, "weighting": cfg.weighting},
    )
    ranker.save(workdir / ranker_file(variant_label))
    record_artifact(workdir, cfg, ranker_file(variant_label), "train-ranker")
    return ranker


def _baseline_policies(cfg: RunConfig) -> list[evaluation.Policy]:
    return [
        evaluation.Policy.logged(),
        evaluation.Policy.oracle(),
        evaluation.Policy.retriever_order(),
        evaluation.Policy.random(cfg.eval_seed),
    ]


def _model_policy(cfg: RunConfig, workdir: Path, variant_label: str, name: str | None = None) -> evaluation.Policy:
    path = _require(workdir, ranker_file(variant_label), "train-ranker")
    model = ltr.RankerModel.load(path)
    feat = ltr.PairFeaturizer(cfg.feature_dim, cfg.feature_seed)
    return evaluation.Policy.from_model(name or variant_label, model, feat)


def _write_report(workdir: Path, cfg: RunConfig, report: evaluation.EvalReport, stem: str, stage: str) -> None:
    (workdir / f"{stem}.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (workdir / f"{stem}.md").write_text(report.to_markdown(), encoding="utf-8")
    (workdir / f"{stem}.csv").write_text(report.to_csv(), encoding="utf-8")
    (workdir / f"{stem}_positional.csv").write_text(report.positional_csv(), encoding="utf-8")
    for suffix in (".json", ".md", ".csv", "_positional.csv"):
        record_artifact(workdir, cfg, f"{stem}{suffix}", stage)


def run_experiment(cfg: RunConfig) -> evaluation.EvalReport:
    """Core comparison: unbiased-trained model against the baselines."""
    workdir, dr, trie, test_entries = _load_core(cfg, "test")
    if not test_entries:
        raise ValueError("empty test log: nothing to evaluate")
    model = _propensity_model(cfg)
    prepared = evaluation.prepare_contexts(test_entries, trie, dr, model, cfg.pad_k)
    policies = _baseline_policies(cfg) + [_model_policy(cfg, workdir, "unbiased", name="unbiased")]
    report = evaluation.evaluate_policies(
        prepared, policies, tuple(cfg.k_list), config_fingerprint=cfg.fingerprint(), seeds=cfg.seed_set()
    )
    _write_report(workdir, cfg, report, "report", "evaluate")
    return report


def run_ablations(cfg: RunConfig) -> evaluation.EvalReport:
    """Evaluate every configured estimator variant's ranker on shared contexts."""
    workdir, dr, trie, test_entries = _load_core(cfg, "test")
    if not test_entries:
        raise ValueError("empty test log: nothing to evaluate")
    model = _propensity_model(cfg)
    prepared = evaluation.prepare_contexts(test_entries, trie, dr, model, cfg.pad_k)
    policies = _baseline_policies(cfg)
    for label in cfg.variants:
        policies.append(_model_policy(cfg, workdir, label))
    report = evaluation.evaluate_policies(
        prepared, policies, tuple(cfg.k_list), config_fingerprint=cfg.fingerprint(), seeds=cfg.seed_set()
    )
    _write_report(workdir, cfg, report, "ablation", "ablate")
    return report


def data_size_curve(cfg: RunConfig) -> dict[str, dict]:
    """Train on nested-size subsamples of the ranker log and evaluate each.

    Subsampled indices are sorted back into log order so the full-size run
    reproduces the main ranker exactly.
    """
    workdir, dr, trie, ranker_entries = _load_core(cfg, "ranker")
    test_entries = clicksim.read_log(_require(workdir, LOGS["test"], "simulate-log"))
    model = _propensity_model(cfg)
    prepared_test = evaluation.prepare_contexts(test_entries, trie, dr, model, cfg.pad_k)
    prepared_train = _prepare_training(cfg, ranker_entries, trie, dr)
    unbiased = estimator.EstimatorVariant.unbiased()
    feat = ltr.PairFeaturizer(cfg.feature_dim, cfg.feature_seed)
    curve: dict[str, dict] = {}
    for frac in cfg.size_fractions:
        n = int(np.floor(frac * len(ranker_entries)))
        if n < 1:
            raise ValueError(f"subsample fraction {frac} selects no log entries")
        if frac >= 1.0:
            subset = prepared_train
        else:
            rng = np.random.default_rng(derive_seed("size", f"{frac:g}", seed=cfg.size_seed))
            keep = sorted(rng.choice(len(ranker_entries), size=n, replace=False))
            subset = [prepared_train[i] for i in keep]
        samples = _samples_for_variant(cfg, subset, dr, model, unbiased)
        ranker = ltr.train_ranker(samples, cfg.epochs, cfg.learning_rate, cfg.l2, cfg.train_seed)
        policy = evaluation.Policy.from_model(f"size_{frac:g}", ranker, feat)
        report = evaluation.evaluate_policies(prepared_test, [policy], tuple(cfg.k_list))
        m = report.policies[policy.name]
        curve[f"{frac:g}"] = {
            "n_log_entries": len(subset),
            "utility": {str(k): m.utility[k] for k in cfg.k_list},
            "stderr": {str(k): m.stderr[k] for k in cfg.k_list},
        }
    payload = {"config_fingerprint": cfg.fingerprint(), "seeds": cfg.seed_set(), "curve": curve}
    (workdir / "size_curve.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    lines = ["fraction,n_log_entries," + ",".join(f"utility_at_{k}" for k in cfg.k_list)]
    for frac_key in sorted(curve, key=float):
        row = curve[frac_key]
        lines.append(
            f"{frac_key},{row['n_log_entries']}," + ",".join(repr(row["utility"][str(k)]) for k in cfg.k_list)
        )
    (workdir / "size_curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    record_artifact(workdir, cfg, "size_curve.json", "size-curve")
    record_artifact(workdir, cfg, "size_curve.csv", "size-curve")
    return curve


def full_run(cfg: RunConfig) -> evaluation.EvalReport:
    """Chain every stage from corpus generation to reports."""
    if cfg.synth_enabled:
        stage_gen_synth(cfg)
    stage_convert(cfg)
    stage_train_docranker(cfg)
    stage_simulate_logs(cfg)
    stage_train_retriever(cfg)
    for label in cfg.variants:
        stage_estimate(cfg, label)
        stage_train_ranker(cfg, label)
    report = run_experiment(cfg)
    run_ablations(cfg)
    data_size_curve(cfg)
    emit_manifest(Path(cfg.workdir), cfg)
    return report
