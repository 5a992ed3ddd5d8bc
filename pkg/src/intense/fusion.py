"""Linear fusion heads with block-norm regularisation and relevance recovery.

A head keeps one weight vector per interaction set (a singleton set is a
plain modality). Training minimises the data loss plus
``lambda * (sum_I ||w_I||_2^q)^(2/q)`` with ``q = 2p/(p+1)``; relevance scores
with unit p-norm are read back from the block norms afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import tensor as T
from .errors import ContractError, UndefinedRelevanceError
from .tensor import Tensor


def interaction_set(indices: Iterable[int]) -> tuple:
    """Validate and normalise an interaction set to a sorted tuple."""
    out = tuple(sorted(int(i) for i in indices))
    if not out:
        raise ContractError("interaction set must be nonempty")
    if len(set(out)) != len(out):
        raise ContractError(f"duplicate modality in interaction set {out}")
    if out[0] < 1:
        raise ContractError(f"modality indices are 1-based: {out}")
    return out


def set_name(interaction) -> str:
    """'M7' for a modality, 'M1x2' for the interaction of modalities 1 and 2."""
    return "M" + "x".join(str(m) for m in interaction)


def parse_set_name(name: str) -> tuple:
    return interaction_set(name.lstrip("M").split("x"))


def q_from_p(p: float) -> float:
    if p < 1:
        raise ContractError(f"p must be >= 1, got {p}")
    return 2.0 * p / (p + 1.0)


@dataclass
class FusionConfig:
    interaction_sets: list
    p: float = 1.0
    lambda_reg: float = 0.05
    tf_latent_dim: int = 8

    def __post_init__(self):
        self.interaction_sets = [interaction_set(s) for s in self.interaction_sets]
        if len(set(self.interaction_sets)) != len(self.interaction_sets):
            raise ContractError("interaction sets repeat")
        if self.lambda_reg < 0:
            raise ContractError("lambda_reg must be nonnegative")
        q_from_p(self.p)
        used = {m for s in self.interaction_sets for m in s}
        singles = {s[0] for s in self.interaction_sets if len(s) == 1}
        if used - singles:
            raise ContractError(f"modalities {sorted(used - singles)} lack a singleton set")

    @property
    def q(self) -> float:
        return q_from_p(self.p)

    @property
    def modalities(self) -> list:
        return sorted(s[0] for s in self.interaction_sets if len(s) == 1)

    @property
    def order(self) -> int:
        return max(len(s) for s in self.interaction_sets)


@dataclass
class FusionHead:
    weights: dict
    bias: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))

    @classmethod
    def init(cls, widths: Mapping[tuple, int], rng: np.random.Generator):
        """Uniform in +-1/sqrt(total width), zero bias."""
        bound = 1.0 / np.sqrt(sum(widths.values()))
        weights = {s: Tensor(rng.uniform(-bound, bound, size=n), requires_grad=True)
                   for s, n in widths.items()}
        return cls(weights)

    @classmethod
    def from_arrays(cls, weights: Mapping, bias=0.0):
        return cls({interaction_set(s): Tensor(np.asarray(w, dtype=float).ravel(), True)
                    for s, w in weights.items()}, Tensor(float(bias), True))

    def block_norms(self) -> dict:
        return {s: float(np.linalg.norm(w.data)) for s, w in self.weights.items()}


def fusion_forward(reps: Mapping[tuple, Tensor], head: FusionHead) -> Tensor:
    """Logits ``sum_I <w_I, flatten(rep_I)> + b`` for a batch.

    ``reps[I]`` is ``(batch, ...)``; representations are flattened row-major.
    """
    total = None
    for s, w in head.weights.items():
        if s not in reps:
            raise ContractError(f"no representation for interaction set {set_name(s)}")
        rep = T.as_tensor(reps[s])
        flat = rep.reshape(rep.shape[0], -1) if rep.ndim != 2 else rep
        if flat.shape[1] != w.shape[0]:
            raise ContractError(
                f"{set_name(s)}: representation width {flat.shape[1]} != weight length {w.shape[0]}")
        term = flat @ w
        total = term if total is None else total + term
    return total + head.bias


def logistic_loss(t, y) -> Tensor:
    """Per-sample ``-log(sigmoid(t*y))`` for labels in {-1, +1}."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ContractError("labels must be -1 or +1")
    return T.softplus(-(T.as_tensor(t) * y))


def block_norm_penalty(head: FusionHead, q: float, lambda_reg: float) -> Tensor:
    if not 1.0 <= q <= 2.0:
        raise ContractError(f"q must lie in [1, 2], got {q}")
    total = None
    for w in head.weights.values():
        term = T.l2_norm(w) ** q
        total = term if total is None else total + term
    return total ** (2.0 / q) * lambda_reg


def interaction_project(rep, proj_weights) -> Tensor:
    """Linear map ``rep @ W.T`` with ``W`` of shape (tf_latent_dim, in_dim)."""
    return T.matmul(T.as_tensor(rep), T.transpose(T.as_tensor(proj_weights)))


@dataclass
class RelevanceReport:
    beta: dict
    p: float

    @property
    def display_share(self) -> dict:
        total = sum(self.beta.values())
        return {s: b / total for s, b in self.beta.items()}

    def pnorm(self) -> float:
        return float(sum(b ** self.p for b in self.beta.values()) ** (1.0 / self.p))

    def top(self) -> tuple:
        return max(self.beta, key=self.beta.get)

    def to_dict(self) -> dict:
        share = self.display_share
        return {
            "p": self.p,
            "scores": [{"set": set_name(s), "beta": self.beta[s], "share": share[s]}
                       for s in self.beta],
        }

    @classmethod
    def from_dict(cls, data: Mapping):
        return cls({parse_set_name(r["set"]): float(r["beta"]) for r in data["scores"]},
                   float(data["p"]))


def relevance_from_norms(norms: Mapping[tuple, float], p: float) -> RelevanceReport:
    norms = {s: float(v) for s, v in norms.items()}
    if not any(v > 0 for v in norms.values()):
        raise UndefinedRelevanceError("all fusion blocks are zero")
    denom = sum(v ** (2.0 * p / (p + 1.0)) for v in norms.values()) ** (1.0 / p)
    return RelevanceReport({s: v ** (2.0 / (p + 1.0)) / denom for s, v in norms.items()}, p)


def recover_relevance(head: FusionHead, p: float) -> RelevanceReport:
    return relevance_from_norms(head.block_norms(), p)
