"""Batch normalisation for modality representations and their interactions.

Three constructions live here:

* ``vbn``: element-wise centering with one scalar scale per modality, the
  root of the batch-average squared L2 deviation. No affine shift/scale.
* IterBN: ``compute_moments`` -> ``centering_coefficients`` ->
  ``iterbn_center`` -> ``iterbn_normalize``. The centred interaction is the
  multilinear polynomial ``sum_J G_J * prod_{m in J} f^m`` whose coefficients
  subtract every lower-order moment contribution, so that each strict subset
  contributes zero on average over the batch.
* ``naive_iterated_vbn``: VBN applied after every pairwise outer product. It is
  kept as the biased baseline for ablations.

All feature batches are ``(batch, dim)`` tensors; a 1-D batch is read as
scalar features of dimension 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import factorial
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, UnsupportedOrderError
from .tensor import Tensor

EPSILON = 1e-8
MAX_ORDER = 4
RUNNING_DECAY = 0.9

_LETTERS = "ijklmnopqrstuvwxyz"


def _as_batch(x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(x.shape[0], 1)
    if x.ndim != 2:
        raise ContractError(f"expected a (batch, dim) array, got shape {x.shape}")
    return x


@dataclass
class VbnStats:
    mu: np.ndarray
    sigma: float


def vbn(batch, epsilon=EPSILON, stats: VbnStats | None = None):
    """Centre element-wise and divide by the batch RMS deviation norm.

    With ``stats`` given (inference), those frozen statistics are used and the
    batch-size precondition is waived.
    """
    x = T.as_tensor(batch)
    if stats is not None:
        return (x - stats.mu) / (stats.sigma + epsilon), stats
    if x.shape[0] < 2:
        raise ContractError("vbn needs a batch of at least two representations")
    mu = x.mean(axis=0)
    dev = x - mu
    sq = T.frobenius_sq(dev, axis=0) if dev.ndim > 1 else dev * dev
    sigma = T.sqrt(sq.mean())
    out = dev / (sigma + epsilon)
    return out, VbnStats(mu=mu.data.copy(), sigma=float(sigma.data))


def subsets(items: Sequence[int]):
    """All nonempty subsets of ``items`` as sorted tuples, smallest first."""
    items = tuple(items)
    for r in range(1, len(items) + 1):
        yield from combinations(items, r)


def set_partitions(items: Sequence[int]):
    """Unordered partitions of ``items`` into nonempty blocks."""
    items = tuple(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [(first,)] + part
        for k in range(len(part)):
            yield part[:k] + [tuple(sorted((first,) + part[k]))] + part[k + 1:]


@dataclass
class MomentCache:
    """Batch means of ``prod_{m in S} f^m`` (per multi-index) for every S."""

    interaction: tuple
    moments: dict = field(default_factory=dict)
    mode: str = "batch"
    decay: float = RUNNING_DECAY

    def __getitem__(self, subset):
        return self.moments[tuple(subset)]

    def update(self, batch_cache: "MomentCache"):
        """Fold a batch-mode cache into this running cache (in place)."""
        if self.mode != "running":
            raise ContractError("only running caches accumulate")
        for key, value in batch_cache.moments.items():
            new = value.data
            old = self.moments.get(key)
            if old is None:
                self.moments[key] = Tensor(new.copy())
            else:
                self.moments[key] = Tensor(self.decay * old.data + (1.0 - self.decay) * new)
        return self

    @classmethod
    def running(cls, interaction, decay=RUNNING_DECAY):
        return cls(tuple(interaction), {}, "running", decay)


def _check_interaction(batches: Mapping, interaction):
    interaction = tuple(interaction)
    if list(interaction) != sorted(set(interaction)) or not interaction:
        raise ContractError(f"interaction set must be sorted and duplicate-free: {interaction}")
    missing = [m for m in interaction if m not in batches]
    if missing:
        raise ContractError(f"no features for modalities {missing}")
    return interaction


def compute_moments(batches: Mapping[int, Tensor], interaction) -> MomentCache:
    interaction = _check_interaction(batches, interaction)
    feats = {m: _as_batch(batches[m]) for m in interaction}
    sizes = {f.shape[0] for f in feats.values()}
    if len(sizes) != 1:
        raise ContractError(f"mismatched batch sizes {sorted(sizes)}")
    if sizes.pop() < 2:
        raise ContractError("moments need a batch of at least two samples")
    letters = dict(zip(interaction, _LETTERS))
    cache = MomentCache(interaction)
    for subset in subsets(interaction):
        if len(subset) == 1:
            cache.moments[subset] = feats[subset[0]].mean(axis=0)
            continue
        subs = ",".join("b" + letters[m] for m in subset)
        out = "".join(letters[m] for m in subset)
        prod = T.einsum(f"{subs}->b{out}", *[feats[m] for m in subset])
        cache.moments[subset] = prod.mean(axis=0)
    return cache


@dataclass
class CenteringCoefficients:
    """``coeffs[J]`` is indexed by the multi-indices of ``interaction`` minus J."""

    interaction: tuple
    coeffs: dict

    def __getitem__(self, subset):
        return self.coeffs[tuple(subset)]


def centering_coefficients(interaction, moments: MomentCache,
                           max_order=MAX_ORDER) -> CenteringCoefficients:
    """Collect the centring polynomial by monomial.

    ``G_J = sum over set partitions P of I\\J of (-1)^|P| |P|! prod_{S in P} E[prod_S f]``;
    the ``|P|!`` counts the orderings of the blocks.
    """
    interaction = tuple(interaction)
    if len(interaction) > max_order:
        raise UnsupportedOrderError(
            f"interaction order {len(interaction)} exceeds the supported maximum {max_order}")
    absent = [s for s in subsets(interaction) if s not in moments.moments]
    if absent:
        raise ContractError(f"moment cache lacks subsets {absent}")
    letters = dict(zip(interaction, _LETTERS))
    coeffs = {interaction: Tensor(1.0)}
    for size in range(len(interaction)):
        for kept in combinations(interaction, size):
            rest = tuple(m for m in interaction if m not in kept)
            out = "".join(letters[m] for m in rest)
            total = None
            for part in set_partitions(rest):
                subs = ",".join("".join(letters[m] for m in block) for block in part)
                term = T.einsum(f"{subs}->{out}", *[moments[block] for block in part])
                term = term * float((-1) ** len(part) * factorial(len(part)))
                total = term if total is None else total + term
            coeffs[kept] = total
    return CenteringCoefficients(interaction, coeffs)


def iterbn_center(batches: Mapping[int, Tensor], coeffs: CenteringCoefficients) -> Tensor:
    """Evaluate ``sum_J G_J prod_{m in J} f^m`` for every sample.

    Returns a ``(batch, d_1, ..., d_k)`` tensor, axes in interaction order.
    """
    interaction = _check_interaction(batches, coeffs.interaction)
    feats = {m: _as_batch(batches[m]) for m in interaction}
    dims = tuple(feats[m].shape[1] for m in interaction)
    letters = dict(zip(interaction, _LETTERS))
    full = "".join(letters[m] for m in interaction)
    total = None
    for kept, g in coeffs.coeffs.items():
        rest = [m for m in interaction if m not in kept]
        want = tuple(feats[m].shape[1] for m in rest)
        if g.shape != want:
            raise ContractError(f"coefficient for {kept} has shape {g.shape}, expected {want}")
        if not kept:
            term = g
        else:
            subs = [("b" + letters[m]) for m in kept]
            ops = [feats[m] for m in kept]
            if rest:
                subs.append("".join(letters[m] for m in rest))
                ops.append(g)
            term = T.einsum(",".join(subs) + "->b" + full, *ops)
            if not rest:
                term = term * g
        total = term if total is None else total + term
    n = next(iter(feats.values())).shape[0]
    if total.shape != (n,) + dims:
        total = total + Tensor(np.zeros((n,) + dims))
    return total


def iterbn_normalize(centered, epsilon=EPSILON, scale: float | None = None):
    """Divide by the root of the batch-mean squared Frobenius norm.

    Returns ``(normalised, scale)``; pass a frozen ``scale`` for inference.
    """
    x = T.as_tensor(centered)
    if scale is not None:
        return x / (scale + epsilon), scale
    if x.shape[0] < 2:
        raise ContractError("normalisation needs a batch of at least two samples")
    s = T.sqrt(T.frobenius_sq(x, axis=0).mean())
    return x / (s + epsilon), float(s.data)


def iterbn(batches: Mapping[int, Tensor], interaction, epsilon=EPSILON,
           max_order=MAX_ORDER):
    """Batch-mode IterBN: centre with batch moments, then rescale.

    Returns ``(normalised, moments, scale)`` so callers can keep running stats.
    """
    moments = compute_moments(batches, interaction)
    coeffs = centering_coefficients(interaction, moments, max_order)
    out, scale = iterbn_normalize(iterbn_center(batches, coeffs), epsilon)
    return out, moments, scale


def naive_iterated_vbn(batches: Sequence, epsilon=EPSILON, stats=None):
    """VBN each modality, then alternate outer product and VBN left to right.

    Returns the normalised batch; with ``stats`` (one ``VbnStats`` per VBN
    stage, as returned by ``naive_iterated_vbn_stats``) frozen statistics are used.
    """
    return naive_iterated_vbn_stats(batches, epsilon, stats)[0]


def naive_iterated_vbn_stats(batches: Sequence, epsilon=EPSILON, stats=None):
    feats = [_as_batch(b) for b in batches]
    if not feats:
        raise ContractError("need at least one modality")
    frozen = iter(stats) if stats is not None else None
    used = []

    def step(x):
        out, st = vbn(x, epsilon, next(frozen) if frozen is not None else None)
        used.append(st)
        return out

    acc = step(feats[0])
    for f in feats[1:]:
        nxt = step(f)
        acc = step(T.batch_outer(acc, nxt))
    return acc, used
