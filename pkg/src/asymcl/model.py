"""Two-stage contrastive training at desk scale.

Stage 1 trains an MLP encoder plus a two-layer projection head with a
contrastive loss on l2-normalised projections. Stage 2 freezes both,
drops the projection head, and fits a single-logit linear classifier on the
encoder output with CE or focal loss.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import ValidationError
from .losses import CONTRASTIVE_LOSSES, FeatureBatch, LossParams, focal_loss_node, loss_node

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GROUPS = ("encoder", "projection", "classifier")


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    feature_dim: int = 32
    projection_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.feature_dim, self.projection_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ValidationError(f"all layer sizes must be positive integers, got {dims}")
        if self.projection_dim > self.feature_dim:
            raise ValidationError("projection_dim cannot exceed feature_dim")


@dataclass
class ModelState:
    spec: EncoderSpec
    params: dict[str, dict[str, np.ndarray]]
    frozen: dict[str, bool]
    rng_seed: int

    def copy(self) -> ModelState:
        return ModelState(
            self.spec,
            {g: {k: v.copy() for k, v in ps.items()} for g, ps in self.params.items()},
            dict(self.frozen),
            self.rng_seed,
        )

    def checksum(self, groups=("encoder", "projection")) -> str:
        h = hashlib.sha256()
        for g in groups:
            for k in sorted(self.params[g]):
                h.update(f"{g}/{k}".encode())
                h.update(np.ascontiguousarray(self.params[g][k]).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 20
    stage2_epochs: int = 10
    learning_rate: float = 1e-2
    batch_size: int = 128
    loss: str = "afcl"
    loss_params: LossParams = field(default_factory=LossParams)
    stage2_loss: str = "ce"
    stage2_gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ValidationError("epoch counts must be positive")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValidationError("batch size must be positive")
        if self.loss.lower() not in CONTRASTIVE_LOSSES:
            raise ValidationError(f"unknown contrastive loss {self.loss!r}")
        if self.stage2_loss.lower() not in ("ce", "fl"):
            raise ValidationError(f"stage-2 loss must be 'ce' or 'fl', got {self.stage2_loss!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              adam: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update. Returns new arrays; inputs are not mutated."""
    if set(params) != set(grads):
        raise ValidationError("params and grads must have the same keys")
    t = adam.step + 1
    bc1 = 1.0 - adam.beta1 ** t
    bc2 = 1.0 - adam.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = adam.m.get(k, np.zeros_like(p))
        v = adam.v.get(k, np.zeros_like(p))
        m = adam.beta1 * m + (1 - adam.beta1) * g
        v = adam.beta2 * v + (1 - adam.beta2) * (g * g)
        new_params[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(new_m, new_v, t, adam.beta1, adam.beta2, adam.eps)


BIAS_INIT = 0.01


def _affine(rng, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    # small positive biases: a row whose ReLUs all die still maps to a nonzero
    # projection, so l2 normalisation never sees a zero row
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), np.full(fan_out, BIAS_INIT)


def init_model(spec: EncoderSpec, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)
    enc = {}
    dims = (spec.input_dim, *spec.hidden_dims, spec.feature_dim)
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        enc[f"W{i}"], enc[f"b{i}"] = _affine(rng, a, b)
    proj = {}
    proj["W0"], proj["b0"] = _affine(rng, spec.feature_dim, spec.feature_dim)
    proj["W1"], proj["b1"] = _affine(rng, spec.feature_dim, spec.projection_dim)
    clf = {}
    clf["W0"], clf["b0"] = _affine(rng, spec.feature_dim, 1)
    return ModelState(spec, {"encoder": enc, "projection": proj, "classifier": clf},
                      {g: False for g in GROUPS}, int(seed))


# -- forward graphs ----------------------------------------------------------

def _leaves(tape: Tape, params: dict[str, np.ndarray], trainable: bool) -> dict[str, int]:
    return {k: tape.leaf(v, requires_grad=trainable) for k, v in params.items()}


def _mlp(tape: Tape, x: int, p: dict[str, int], n_layers: int) -> int:
    h = x
    for i in range(n_layers):
        h = tape.add(tape.matmul(h, p[f"W{i}"]), p[f"b{i}"])
        if i < n_layers - 1:
            h = tape.relu(h)
    return h


def _encode(tape, state, x, trainable):
    enc = _leaves(tape, state.params["encoder"], trainable)
    n_layers = len(state.spec.hidden_dims) + 1
    return _mlp(tape, x, enc, n_layers), enc


def _project(tape, state, h, trainable):
    proj = _leaves(tape, state.params["projection"], trainable)
    return tape.l2_normalize_rows(_mlp(tape, h, proj, 2)), proj


def _check_input(state: ModelState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.spec.input_dim:
        raise ValidationError(
            f"expected inputs of shape (N, {state.spec.input_dim}), got {x.shape}"
        )
    return x


def encode(state: ModelState, x_batch) -> np.ndarray:
    """Encoder output (the classifier's input)."""
    x = _check_input(state, x_batch)
    tape = Tape()
    h, _ = _encode(tape, state, tape.constant(x), False)
    return np.array(tape.value(h))


def embed(state: ModelState, x_batch, labels=None) -> FeatureBatch | np.ndarray:
    """Unit-norm projections ``Proj(Enc(x))``.

    Returns a :class:`FeatureBatch` when ``labels`` are given, otherwise the raw
    N x projection_dim array.
    """
    x = _check_input(state, x_batch)
    tape = Tape()
    h, _ = _encode(tape, state, tape.constant(x), False)
    z, _ = _project(tape, state, h, False)
    feats = np.array(tape.value(z))
    if labels is None:
        return feats
    return FeatureBatch(feats, labels)


def logits(state: ModelState, x_batch) -> np.ndarray:
    x = _check_input(state, x_batch)
    clf = state.params["classifier"]
    return (encode(state, x) @ clf["W0"] + clf["b0"]).reshape(-1)


def predict(state: ModelState, x_batch) -> np.ndarray:
    """Probability of class 1 for each row."""
    s = logits(state, x_batch)
    # split by sign so neither branch overflows
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predict_labels(state: ModelState, x_batch) -> np.ndarray:
    """Hard decisions at threshold 0.5; ties go to class 1."""
    return (predict(state, x_batch) >= 0.5).astype(np.int64)


# -- training ----------------------------------------------------------------

def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _stage1_loss(state, x, y, config, trainable):
    tape = Tape()
    h, enc = _encode(tape, state, tape.constant(x), trainable)
    z, proj = _project(tape, state, h, trainable)
    root = loss_node(config.loss, tape, z, y, config.loss_params)
    return tape, root, enc, proj


def _epoch_loss(n, batch_size, loss_fn) -> float:
    """Mean batch loss over the data in its stored order; independent of shuffling."""
    vals = [loss_fn(idx) for idx in _batches(n, batch_size, None) if len(idx) >= 2]
    return float(np.mean(vals)) if vals else 0.0


def _dataset_arrays(dataset):
    x = np.asarray(dataset.samples, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValidationError("dataset is empty")
    if np.any((y != 0) & (y != 1)):
        raise ValidationError("labels must be binary")
    return x, y


def train_stage1(state: ModelState, dataset, config: TrainConfig) -> tuple[ModelState, list[float]]:
    """Contrastive feature learning. Returns the updated state and per-epoch losses."""
    if state.frozen["encoder"] or state.frozen["projection"]:
        raise ValidationError("encoder is frozen; stage 1 has already finished")
    x, y = _dataset_arrays(dataset)
    _check_input(state, x)
    state = state.copy()
    rng = np.random.default_rng([config.seed, 1])
    adam_enc, adam_proj = AdamState(), AdamState()

    def eval_loss(idx):
        tape, root, _, _ = _stage1_loss(state, x[idx], y[idx], config, False)
        return float(tape.value(root))

    trace = []
    for epoch in range(config.stage1_epochs):
        for idx in _batches(len(x), config.batch_size, rng):
            if len(idx) < 2:
                log.warning("skipping batch of size %d in stage 1 (epoch %d)", len(idx), epoch)
                continue
            tape, root, enc, proj = _stage1_loss(state, x[idx], y[idx], config, True)
            grads = tape.backward(root)
            g_enc = {k: grads.get(i, np.zeros_like(state.params["encoder"][k])) for k, i in enc.items()}
            g_proj = {k: grads.get(i, np.zeros_like(state.params["projection"][k])) for k, i in proj.items()}
            state.params["encoder"], adam_enc = adam_step(
                state.params["encoder"], g_enc, adam_enc, config.learning_rate)
            state.params["projection"], adam_proj = adam_step(
                state.params["projection"], g_proj, adam_proj, config.learning_rate)
        trace.append(_epoch_loss(len(x), config.batch_size, eval_loss))
    return state, trace


def freeze_encoder(state: ModelState) -> ModelState:
    state = state.copy()
    state.frozen["encoder"] = True
    state.frozen["projection"] = True
    return state


def train_stage2(state: ModelState, dataset, config: TrainConfig) -> tuple[ModelState, list[float]]:
    """Fit the classifier on frozen encoder features. Freezes the encoder if needed."""
    x, y = _dataset_arrays(dataset)
    _check_input(state, x)
    state = freeze_encoder(state)
    before = state.checksum()
    feats = encode(state, x)
    gamma = config.stage2_gamma if config.stage2_loss.lower() == "fl" else 0.0
    rng = np.random.default_rng([config.seed, 2])
    adam = AdamState()

    def graph(idx, trainable):
        tape = Tape()
        clf = _leaves(tape, state.params["classifier"], trainable)
        s = tape.add(tape.matmul(tape.constant(feats[idx]), clf["W0"]), clf["b0"])
        return tape, focal_loss_node(tape, s, y[idx], gamma), clf

    def eval_loss(idx):
        tape, root, _ = graph(idx, False)
        return float(tape.value(root))

    trace = []
    for epoch in range(config.stage2_epochs):
        for idx in _batches(len(x), config.batch_size, rng):
            if len(idx) < 2:
                log.warning("skipping batch of size %d in stage 2 (epoch %d)", len(idx), epoch)
                continue
            tape, root, clf = graph(idx, True)
            grads = tape.backward(root)
            g = {k: grads[i] for k, i in clf.items()}
            state.params["classifier"], adam = adam_step(
                state.params["classifier"], g, adam, config.learning_rate)
        trace.append(_epoch_loss(len(x), config.batch_size, eval_loss))
    assert state.checksum() == before, "frozen parameters changed during stage 2"
    return state, trace


def train_two_stage(state: ModelState, dataset, config: TrainConfig):
    state, trace1 = train_stage1(state, dataset, config)
    state, trace2 = train_stage2(state, dataset, config)
    return state, trace1, trace2


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(state: ModelState, path) -> None:
    """Write an ``.npz`` key -> tensor map with a format-version entry."""
    arrays = {"__format_version__": np.array([CHECKPOINT_VERSION], dtype=np.int64),
              "__seed__": np.array([state.rng_seed], dtype=np.int64),
              "__dims__": np.array([state.spec.input_dim, state.spec.feature_dim,
                                    state.spec.projection_dim], dtype=np.int64),
              "__hidden__": np.array(state.spec.hidden_dims, dtype=np.int64),
              "__frozen__": np.array([state.frozen[g] for g in GROUPS], dtype=bool)}
    for g, ps in state.params.items():
        for k, v in ps.items():
            arrays[f"{g}/{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(path, allow_pickle=False) as data:
        if "__format_version__" not in data.files:
            raise ValidationError("not a model checkpoint: missing format version")
        version = int(data["__format_version__"][0])
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        input_dim, feature_dim, projection_dim = (int(v) for v in data["__dims__"])
        spec = EncoderSpec(input_dim, tuple(int(h) for h in data["__hidden__"]),
                           feature_dim, projection_dim)
        params: dict[str, dict[str, np.ndarray]] = {g: {} for g in GROUPS}
        for key in data.files:
            if key.startswith("__"):
                continue
            g, k = key.split("/", 1)
            params[g][k] = data[key].copy()
        frozen = dict(zip(GROUPS, (bool(f) for f in data["__frozen__"])))
        return ModelState(spec, params, frozen, int(data["__seed__"][0]))
