"""Utility-aware query autocompletion workbench.

Simulated biased click logs, counterfactual utility estimation, trie-based
candidate retrieval, pairwise re-ranking, and the offline evaluation and
ablation protocol, at desk scale with deterministic seeded components.
"""

__version__ = "0.1.0"
