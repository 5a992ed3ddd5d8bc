"""End-to-end training of multimodal fusion models on letter-sequence data."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoders import EncoderConfig, encode_codes, init_params
from .errors import ContractError, InputError, TrainingDivergedError
from .fusion import (FusionConfig, FusionHead, block_norm_penalty, fusion_forward,
                     interaction_project, interaction_set, logistic_loss,
                     recover_relevance, set_name, parse_set_name)
from .normalization import (EPSILON, RUNNING_DECAY, MomentCache, VbnStats,
                            centering_coefficients, compute_moments, iterbn_center,
                            iterbn_normalize, naive_iterated_vbn_stats, vbn)
from .synthdata import Dataset
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

NORMALIZATIONS = ("none", "vbn", "iterbn", "naive")


@dataclass
class TrainConfig:
    method: str = "mnl"
    normalization: str | None = None  # None: vbn for mnl, iterbn for intense
    interaction_sets: list | None = None  # None: all singletons (+ tf_indices)
    tf_indices: list = field(default_factory=list)
    modalities: list | None = None  # restrict to these modalities (1-based)
    lr: float = 1e-3
    scheduler_gamma: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    weight_decay: float = 0.01
    lambda_reg: float = 0.05
    p: float = 1.0
    seed: int = 0
    latent_dim: int = 8
    tf_latent_dim: int = 8
    kernel_width: int = 7

    def __post_init__(self):
        if self.method not in ("mnl", "intense"):
            raise ContractError(f"unknown method {self.method!r}")
        if self.normalization is None:
            self.normalization = "iterbn" if self.method == "intense" else "vbn"
        if self.normalization not in NORMALIZATIONS:
            raise ContractError(f"unknown normalization {self.normalization!r}")
        if self.lr <= 0 or not 0 < self.scheduler_gamma <= 1:
            raise ContractError("lr must be positive and scheduler_gamma in (0, 1]")
        if self.epochs < 0 or self.batch_size < 2:
            raise ContractError("epochs must be >= 0 and batch_size >= 2")
        if self.p < 1 or self.weight_decay < 0 or self.lambda_reg < 0:
            raise ContractError("need p >= 1 and nonnegative regularisation")
        self.tf_indices = [interaction_set(s) for s in self.tf_indices]
        if self.interaction_sets is not None:
            self.interaction_sets = [interaction_set(s) for s in self.interaction_sets]
        if self.method == "mnl" and any(len(s) > 1 for s in self.resolved_extra()):
            raise ContractError("MNL fuses single modalities only; use method 'intense'")

    def resolved_extra(self):
        sets = self.interaction_sets or []
        return [s for s in sets if len(s) > 1] + list(self.tf_indices)

    def fusion_config(self, n_modalities: int) -> FusionConfig:
        if self.interaction_sets is not None:
            sets = list(self.interaction_sets)
        else:
            mods = self.modalities or range(1, n_modalities + 1)
            sets = [(m,) for m in mods]
        for s in self.tf_indices:
            if s not in sets:
                sets.append(s)
        if max(m for s in sets for m in s) > n_modalities:
            raise ContractError(f"interaction sets reference modalities beyond {n_modalities}")
        return FusionConfig(sets, self.p, self.lambda_reg, self.tf_latent_dim)

    def to_dict(self):
        out = asdict(self)
        out["tf_indices"] = [list(s) for s in self.tf_indices]
        if self.interaction_sets is not None:
            out["interaction_sets"] = [list(s) for s in self.interaction_sets]
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class MultimodalModel:
    """Per-modality encoders, interaction projections and a fusion head.

    Running normalisation statistics are updated on every training forward
    pass and used for inference once present.
    """

    def __init__(self, fusion: FusionConfig, encoder: EncoderConfig, normalization: str,
                 rng: np.random.Generator):
        if normalization not in NORMALIZATIONS:
            raise ContractError(f"unknown normalization {normalization!r}")
        self.fusion = fusion
        self.encoder = encoder
        self.normalization = normalization
        self.encoders = {m: init_params(encoder, rng) for m in fusion.modalities}
        interacting = sorted({m for s in fusion.interaction_sets if len(s) > 1 for m in s})
        bound = 1.0 / np.sqrt(encoder.output_dim)
        self.projections = {
            m: Tensor(rng.uniform(-bound, bound, size=(fusion.tf_latent_dim, encoder.output_dim)),
                      requires_grad=True)
            for m in interacting}
        widths = {s: (encoder.output_dim if len(s) == 1 else fusion.tf_latent_dim ** len(s))
                  for s in fusion.interaction_sets}
        self.head = FusionHead.init(widths, rng)
        self.running = {}

    @classmethod
    def from_config(cls, config: TrainConfig, n_modalities: int):
        fusion = config.fusion_config(n_modalities)
        encoder = EncoderConfig(kernel_width=config.kernel_width, channels=config.latent_dim)
        return cls(fusion, encoder, config.normalization, np.random.default_rng(config.seed))

    def parameters(self) -> dict:
        params = {}
        for m, enc in self.encoders.items():
            params[f"enc{m}.weight"] = enc.weight
            params[f"enc{m}.bias"] = enc.bias
        for m, w in self.projections.items():
            params[f"proj{m}.weight"] = w
        for s, w in self.head.weights.items():
            params[f"head.{set_name(s)}"] = w
        params["head.bias"] = self.head.bias
        return params

    def encoder_weight_names(self) -> list:
        return [n for n in self.parameters() if n.endswith(".weight")]

    # forward -----------------------------------------------------------------

    def _vbn(self, key, x, training):
        frozen = None if training else self.running.get(key)
        out, stats = vbn(x, EPSILON, frozen)
        if training:
            old = self.running.get(key)
            if old is None:
                self.running[key] = VbnStats(stats.mu.copy(), stats.sigma)
            else:
                self.running[key] = VbnStats(
                    RUNNING_DECAY * old.mu + (1 - RUNNING_DECAY) * stats.mu,
                    RUNNING_DECAY * old.sigma + (1 - RUNNING_DECAY) * stats.sigma)
        return out

    def _iterbn(self, s, feats, training):
        key = set_name(s)
        state = None if training else self.running.get(key)
        if state is None:
            moments = compute_moments(feats, s)
            coeffs = centering_coefficients(s, moments)
            out, scale = iterbn_normalize(iterbn_center(feats, coeffs), EPSILON)
            if training:
                if key not in self.running:
                    self.running[key] = {"moments": MomentCache.running(s), "scale": scale}
                    self.running[key]["moments"].update(moments)
                else:
                    run = self.running[key]
                    run["moments"].update(moments)
                    run["scale"] = RUNNING_DECAY * run["scale"] + (1 - RUNNING_DECAY) * scale
            return out
        coeffs = centering_coefficients(s, state["moments"])
        out, _ = iterbn_normalize(iterbn_center(feats, coeffs), EPSILON, state["scale"])
        return out

    def _naive(self, s, feats, training):
        key = set_name(s)
        frozen = None if training else self.running.get(key)
        out, stats = naive_iterated_vbn_stats([feats[m] for m in s], EPSILON, frozen)
        if training:
            old = self.running.get(key)
            if old is None:
                self.running[key] = [VbnStats(st.mu.copy(), st.sigma) for st in stats]
            else:
                self.running[key] = [
                    VbnStats(RUNNING_DECAY * o.mu + (1 - RUNNING_DECAY) * st.mu,
                             RUNNING_DECAY * o.sigma + (1 - RUNNING_DECAY) * st.sigma)
                    for o, st in zip(old, stats)]
        return out

    def representations(self, codes: np.ndarray, training: bool) -> dict:
        """Normalised representation per interaction set for a ``(B, M, L)`` batch."""
        singles = {}
        for m, enc in self.encoders.items():
            f = encode_codes(codes[:, m - 1, :], enc, self.encoder)
            if self.normalization != "none":
                f = self._vbn(set_name((m,)), f, training)
            singles[m] = f
        projected = {m: interaction_project(singles[m], w) for m, w in self.projections.items()}
        reps = {}
        for s in self.fusion.interaction_sets:
            if len(s) == 1:
                reps[s] = singles[s[0]]
            elif self.normalization == "iterbn":
                reps[s] = self._iterbn(s, {m: projected[m] for m in s}, training)
            elif self.normalization == "naive":
                reps[s] = self._naive(s, projected, training)
            else:
                acc = projected[s[0]]
                for m in s[1:]:
                    acc = T.batch_outer(acc, projected[m])
                reps[s] = acc
        return reps

    def logits(self, codes, training=False) -> Tensor:
        return fusion_forward(self.representations(codes, training), self.head)

    def relevance(self):
        return recover_relevance(self.head, self.fusion.p)

    def copy(self) -> "MultimodalModel":
        return copy.deepcopy(self)


def objective(model: MultimodalModel, codes, labels, config: TrainConfig,
              weight_decay: float | None = None, training=True) -> Tensor:
    """Mean logistic loss + weight decay on encoder weights + block-norm penalty.

    ``weight_decay`` defaults to the config value; the training loop passes 0
    and applies decay in decoupled form inside the optimiser.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("objective needs a nonempty batch")
    wd = config.weight_decay if weight_decay is None else weight_decay
    loss = logistic_loss(model.logits(codes, training), labels).mean()
    if wd:
        params = model.parameters()
        for name in model.encoder_weight_names():
            loss = loss + T.frobenius_sq(params[name]) * wd
    return loss + block_norm_penalty(model.head, model.fusion.q, model.fusion.lambda_reg)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def optimizer_step(params: dict, grads: dict, state: AdamState, lr: float,
                   weight_decay: float = 0.0, decay: set | None = None,
                   betas=(0.9, 0.999), eps=1e-8) -> AdamState:
    """One AdamW update in place; decoupled decay only for names in ``decay``."""
    decay = set(params) if decay is None else decay
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        if weight_decay and name in decay:
            p.data = p.data * (1.0 - lr * weight_decay)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    relevance: list = field(default_factory=list)
    best_epoch: int = -1

    def rows(self):
        for e in range(len(self.train_loss)):
            yield {"epoch": e, "lr": self.lr[e], "train_loss": self.train_loss[e],
                   "val_loss": self.val_loss[e], "val_accuracy": self.val_accuracy[e]}


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr * config.scheduler_gamma ** epoch


def evaluate(model: MultimodalModel, data: Dataset, chunk=2000):
    """(accuracy, mean logistic loss); sign(0) predicts +1."""
    if len(data) == 0:
        return float("nan"), float("nan")
    logits = np.concatenate([
        model.logits(data.codes[i:i + chunk], training=False).data
        for i in range(0, len(data), chunk)])
    labels = data.labels.astype(float)
    pred = np.where(logits >= 0, 1.0, -1.0)
    loss = logistic_loss(Tensor(logits), labels).data.mean()
    return float(np.mean(pred == labels)), float(loss)


def train(model: MultimodalModel, train_set: Dataset, val_set: Dataset, config: TrainConfig,
          state: AdamState | None = None):
    """Shuffled mini-batch AdamW with per-epoch geometric lr decay.

    Returns ``(best_model, history)`` where the best model minimises the
    validation loss; a copy of the initial model when ``epochs == 0``.
    """
    rng = np.random.default_rng([config.seed, 1])
    state = state or AdamState()
    params = model.parameters()
    decay = set(model.encoder_weight_names())
    history = TrainHistory()
    best, best_loss = model.copy(), np.inf
    n = len(train_set)
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            if len(idx) < 2:
                continue
            with Tape() as tape:
                loss = objective(model, train_set.codes[idx], train_set.labels[idx], config,
                                 weight_decay=0.0)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(epoch)
            grads = backward(tape, loss)
            named = {name: grads[p] for name, p in params.items() if p in grads}
            optimizer_step(params, named, state, lr, config.weight_decay, decay)
            total += loss.item() * len(idx)
            seen += len(idx)
        acc, vloss = evaluate(model, val_set)
        if not np.isfinite(vloss):
            raise TrainingDivergedError(epoch, "validation loss is not finite")
        history.train_loss.append(total / max(seen, 1))
        history.val_loss.append(vloss)
        history.val_accuracy.append(acc)
        history.lr.append(lr)
        history.relevance.append(model.relevance().to_dict())
        log.info("epoch %d lr %.3g train %.4f val %.4f acc %.3f", epoch, lr,
                 history.train_loss[-1], vloss, acc)
        if vloss < best_loss:
            best, best_loss = model.copy(), vloss
            history.best_epoch = epoch
    return best, history


# checkpoints -------------------------------------------------------------------

def _arr(x):
    x = np.asarray(x, dtype=float)
    return {"shape": list(x.shape), "data": x.ravel().tolist()}


def _unarr(obj):
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])


def checkpoint_dict(model: MultimodalModel, config: TrainConfig, n_modalities: int,
                    state: AdamState | None = None) -> dict:
    running = {}
    for key, val in model.running.items():
        if isinstance(val, VbnStats):
            running[key] = {"kind": "vbn", "mu": _arr(val.mu), "sigma": val.sigma}
        elif isinstance(val, list):
            running[key] = {"kind": "naive",
                            "stages": [{"mu": _arr(s.mu), "sigma": s.sigma} for s in val]}
        else:
            running[key] = {"kind": "iterbn", "scale": val["scale"],
                            "moments": {",".join(map(str, k)): _arr(v.data)
                                        for k, v in val["moments"].moments.items()}}
    out = {
        "config_hash": config.digest(),
        "config": config.to_dict(),
        "n_modalities": n_modalities,
        "params": {name: _arr(p.data) for name, p in model.parameters().items()},
        "running": running,
    }
    if state is not None:
        out["optimizer"] = {"t": state.t, "m": {k: _arr(v) for k, v in state.m.items()},
                            "v": {k: _arr(v) for k, v in state.v.items()}}
    return out


def save_checkpoint(path, model, config, n_modalities, state=None):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(checkpoint_dict(model, config, n_modalities, state), sort_keys=True))
    tmp.replace(path)


def load_checkpoint(path):
    """Rebuild ``(model, config, optimizer_state)`` from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    data = json.loads(path.read_text())
    cfg = dict(data["config"])
    config = TrainConfig(**cfg)
    if config.digest() != data["config_hash"]:
        raise InputError("checkpoint config hash mismatch")
    model = MultimodalModel.from_config(config, data["n_modalities"])
    for name, p in model.parameters().items():
        p.data = _unarr(data["params"][name])
    for key, val in data["running"].items():
        if val["kind"] == "vbn":
            model.running[key] = VbnStats(_unarr(val["mu"]), val["sigma"])
        elif val["kind"] == "naive":
            model.running[key] = [VbnStats(_unarr(s["mu"]), s["sigma"]) for s in val["stages"]]
        else:
            s = parse_set_name(key)
            cache = MomentCache.running(s)
            cache.moments = {tuple(int(i) for i in k.split(",")): Tensor(_unarr(v))
                             for k, v in val["moments"].items()}
            model.running[key] = {"moments": cache, "scale": val["scale"]}
    state = None
    if "optimizer" in data:
        opt = data["optimizer"]
        state = AdamState({k: _unarr(v) for k, v in opt["m"].items()},
                          {k: _unarr(v) for k, v in opt["v"].items()}, opt["t"])
    return model, config, state


@dataclass
class FitResult:
    model: MultimodalModel
    history: TrainHistory
    test_accuracy: float
    test_loss: float


def fit(dataset: Dataset, config: TrainConfig) -> FitResult:
    """Split (stratified, by seed), train, select on validation loss, score on test."""
    train_set, val_set, test_set = dataset.split(config.seed)
    model = MultimodalModel.from_config(config, dataset.n_modalities)
    best, history = train(model, train_set, val_set, config)
    acc, loss = evaluate(best, test_set)
    return FitResult(best, history, acc, loss)
