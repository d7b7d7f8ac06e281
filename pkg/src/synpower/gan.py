"""MLP generative adversarial training on feature vectors.

Two objectives are supported: the original minimax GAN (sigmoid critic,
non-saturating generator loss) and the conditional Wasserstein GAN with
gradient penalty.  Conditioning concatenates a multi-hot label vector to the
generator's noise input and to the critic's data input.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Graph, Node, backward, input_gradient_node

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (FORMAT_VERSION,)
PROB_EPS = 1e-12
PROB_TOL = 1e-9


class GANError(ValueError):
    pass


class CheckpointError(GANError):
    pass


class Objective(str, Enum):
    NAIVE = "NaiveGAN"
    WGAN_GP = "WGAN_GP"


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: Tuple[int, ...]
    final_activation: str = "linear"
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise GANError(f"MLP needs >= 2 layer widths, all >= 1; got {self.layer_widths}")
        if self.final_activation not in ("sigmoid", "linear", "identity"):
            raise GANError(f"unknown final activation {self.final_activation!r}")
        if self.hidden_activation != "relu":
            raise GANError("only ReLU hidden activations are supported")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]


@dataclass
class MLP:
    spec: MLPSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def init(cls, spec: MLPSpec, rng: np.random.Generator) -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros((1, fan_out)))
        return cls(spec, weights, biases)

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        if self.spec.final_activation == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        return h

    def build(self, graph: Graph, x: Node, trainable: bool = True, prefix: str = "") -> Tuple[Node, List[Node]]:
        """Append this network to ``graph``; returns (output, parameter nodes)."""
        leaf = graph.param if trainable else graph.const
        nodes = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wn, bn = leaf(w, name=f"{prefix}W{i}"), leaf(b, name=f"{prefix}b{i}")
            nodes += [wn, bn]
            h = graph.add_row(graph.matmul(h, wn), bn)
            if i < last:
                h = graph.relu(h)
        if self.spec.final_activation == "sigmoid":
            h = graph.sigmoid(h)
        return h, nodes


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = Objective.WGAN_GP
    iterations: int = 15000
    batch_size: int = 50
    noise_dim: int = 128
    lambda_gp: float = 1.0
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    critic_steps_per_generator_step: int = 1
    seed: int = 0
    condition_vocab: Optional[Tuple[str, ...]] = None
    sample_with_replacement: bool = False
    trace_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.condition_vocab is not None:
            object.__setattr__(self, "condition_vocab", tuple(self.condition_vocab))
        if self.iterations < 0 or self.batch_size < 1 or self.noise_dim < 1:
            raise GANError("iterations must be >= 0, batch_size and noise_dim >= 1")
        if self.lambda_gp < 0:
            raise GANError(f"lambda_gp must be nonnegative, got {self.lambda_gp}")
        if not self.learning_rate > 0 or not 0 < self.rmsprop_decay < 1 or not self.rmsprop_epsilon > 0:
            raise GANError("invalid RMSprop settings")
        if self.critic_steps_per_generator_step < 1 or self.trace_stride < 1:
            raise GANError("critic_steps_per_generator_step and trace_stride must be >= 1")

    @classmethod
    def icw_preset(cls, **overrides) -> "TrainConfig":
        """Conditional WGAN-gp settings: 15k iterations, batch 50, noise 128, lambda 1."""
        return replace(cls(), **overrides)

    @classmethod
    def naive_preset(cls, **overrides) -> "TrainConfig":
        """Minimax GAN settings used for the simulated Gaussian study."""
        base = cls(objective=Objective.NAIVE, iterations=3000, batch_size=300, noise_dim=10, lambda_gp=0.0)
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.value
        d["condition_vocab"] = list(self.condition_vocab) if self.condition_vocab is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class ModelCheckpoint:
    generator: MLP
    critic: MLP
    config: TrainConfig
    loss_trace: dict = field(default_factory=lambda: {"iteration": [], "critic": [], "generator": []})
    format_version: int = FORMAT_VERSION

    @property
    def conditional(self) -> bool:
        return self.config.condition_vocab is not None

    @property
    def data_dim(self) -> int:
        return self.generator.spec.n_out

    def __eq__(self, other):
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (self.format_version == other.format_version
                and self.config == other.config
                and self.loss_trace == other.loss_trace
                and _mlp_equal(self.generator, other.generator)
                and _mlp_equal(self.critic, other.critic))


def _mlp_equal(a: MLP, b: MLP) -> bool:
    return a.spec == b.spec and all(
        x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a.params, b.params))


# ---------------------------------------------------------------- conditions

def condition_vector(labels, vocab: Sequence[str]) -> np.ndarray:
    """Multi-hot encoding of ``labels`` over ``vocab``.

    ``labels`` may be a sequence of label names or an existing 0/1 vector.
    """
    if isinstance(labels, np.ndarray) and labels.dtype.kind in "fiub":
        vec = labels.astype(np.float64).ravel()
        if len(vec) != len(vocab) or not np.isin(vec, (0.0, 1.0)).all():
            raise GANError(f"condition vector must be 0/1 of length {len(vocab)}")
        return vec
    if isinstance(labels, str):
        labels = [labels]
    vec = np.zeros(len(vocab))
    for label in labels:
        if label not in vocab:
            raise GANError(f"unknown condition label {label!r}; vocabulary is {list(vocab)}")
        vec[list(vocab).index(label)] = 1.0
    return vec


def _condition_rows(condition, n: int, vocab) -> np.ndarray:
    c = np.asarray(condition, dtype=np.float64)
    if c.ndim == 1:
        c = np.broadcast_to(c, (n, len(c)))
    if c.shape != (n, len(vocab)):
        raise GANError(f"conditions have shape {c.shape}, expected ({n}, {len(vocab)})")
    return c


# ---------------------------------------------------------------- objectives

def _check_probabilities(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if not np.isfinite(p).all() or p.min(initial=0.5) < -PROB_TOL or p.max(initial=0.5) > 1 + PROB_TOL:
        raise GANError(f"{what} critic outputs must lie in (0, 1); is the final activation a sigmoid?")
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def naive_gan_losses(critic_out_real, critic_out_fake) -> Tuple[float, float]:
    """(critic loss, non-saturating generator loss) of the minimax GAN."""
    dr = _check_probabilities(critic_out_real, "real")
    df = _check_probabilities(critic_out_fake, "fake")
    critic = -np.mean(np.log(dr)) - np.mean(np.log1p(-df))
    generator = -np.mean(np.log(df))
    return float(critic), float(generator)


def interpolate(real_batch, fake_batch, eps) -> np.ndarray:
    real = np.asarray(real_batch, dtype=np.float64)
    fake = np.asarray(fake_batch, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64).ravel()
    if real.shape != fake.shape or real.ndim != 2 or len(eps) != len(real):
        raise GANError(f"interpolate: shapes {real.shape}, {fake.shape} and eps length {len(eps)} disagree")
    e = eps[:, None]
    return e * real + (1.0 - e) * fake


def _critic_input(graph: Graph, x: Node, cond: Optional[np.ndarray]) -> Node:
    if cond is None:
        return x
    return graph.concat_cols(x, graph.const(cond))


def _wgan_critic_graph(critic: MLP, real: np.ndarray, fake: np.ndarray, cond: Optional[np.ndarray],
                       eps: np.ndarray, lambda_gp: float, literal: bool):
    """Critic objective as a graph; returns (graph, loss, critic params, parts)."""
    g = Graph()
    n = len(real)
    d_real, params = critic.build(g, _critic_input(g, g.const(real), cond), prefix="critic.")
    d_fake, _ = _rebuild(critic, g, _critic_input(g, g.const(fake), cond), params)
    x_hat = g.input(interpolate(real, fake, eps))
    d_hat, _ = _rebuild(critic, g, _critic_input(g, x_hat, cond), params)
    grad = input_gradient_node(g, g.sum(d_hat), x_hat)
    penalty = g.mean(g.square(g.affine(g.row_norm(grad), 1.0, -1.0)))
    fake_term = g.affine(g.mean(d_fake), -1.0, 1.0) if literal else g.mean(d_fake)
    loss = g.add(g.sub(fake_term, g.mean(d_real)), g.scale(penalty, lambda_gp))
    return g, loss, params, {"penalty": float(penalty.value[0, 0]), "n": n}


def _rebuild(net: MLP, graph: Graph, x: Node, params: List[Node]) -> Tuple[Node, List[Node]]:
    # reuse already-created parameter nodes so gradients accumulate on them
    h = x
    last = len(net.weights) - 1
    for i in range(len(net.weights)):
        h = graph.add_row(graph.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < last:
            h = graph.relu(h)
    if net.spec.final_activation == "sigmoid":
        h = graph.sigmoid(h)
    return h, params


def wgan_gp_critic_loss(critic: MLP, generator: MLP, real_batch, condition, lambda_gp: float,
                        rng: np.random.Generator, literal: bool = True) -> float:
    """Conditional WGAN-gp critic objective on one batch.

    With ``literal=True`` the value is E[1 - D(G(z|y))] - E[D(x|y)] + lambda*GP,
    taken term by term.  ``literal=False`` gives the form the trainer minimizes,
    E[D(G(z|y))] - E[D(x|y)] + lambda*GP.  Noise is drawn first, then one
    interpolation weight per row.
    """
    if lambda_gp < 0:
        raise GANError(f"lambda_gp must be nonnegative, got {lambda_gp}")
    if critic.spec.final_activation == "sigmoid":
        raise GANError("WGAN-gp critic must end in a linear activation")
    real = np.asarray(real_batch, dtype=np.float64)
    n = len(real)
    cond = None
    if condition is not None:
        cond = np.asarray(condition, dtype=np.float64)
        if cond.ndim == 1:
            cond = np.broadcast_to(cond, (n, len(cond))).copy()
    noise_dim = generator.spec.n_in - (0 if cond is None else cond.shape[1])
    z = rng.standard_normal((n, noise_dim))
    fake = generator.forward(z if cond is None else np.hstack([z, cond]))
    eps = rng.random(n)
    _, loss, _, _ = _wgan_critic_graph(critic, real, fake, cond, eps, lambda_gp, literal)
    return float(loss.value[0, 0])


# ---------------------------------------------------------------- optimizer

def rmsprop_step(params: List[np.ndarray], grads: List[np.ndarray], state: List[np.ndarray],
                 lr: float, decay: float, epsilon: float, names: Optional[Sequence[str]] = None):
    """In-place RMSprop update; returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state):
        raise GANError("params, grads and state must have equal length")
    for i, (p, g, v) in enumerate(zip(params, grads, state)):
        if p.shape != g.shape or p.shape != v.shape:
            raise GANError(f"shape mismatch for parameter {names[i] if names else i}")
        if not np.isfinite(g).all():
            raise GANError(f"non-finite gradient for parameter {names[i] if names else i}")
        v *= decay
        v += (1.0 - decay) * g * g
        p -= lr * g / (np.sqrt(v) + epsilon)
    return params, state


# ---------------------------------------------------------------- training

def _param_names(prefix: str, net: MLP) -> List[str]:
    names = []
    for i in range(len(net.weights)):
        names += [f"{prefix}.W{i}", f"{prefix}.b{i}"]
    return names


def train(data, spec_g: MLPSpec, spec_d: MLPSpec, config: TrainConfig,
          conditions=None, progress=None) -> ModelCheckpoint:
    """Fit a generator/critic pair to the rows of ``data``.

    ``conditions`` holds one multi-hot row per data row (or label lists, which
    are encoded with ``config.condition_vocab``).  ``progress`` is an optional
    callback ``(iteration, critic_loss, generator_loss)``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise GANError(f"training data must be a matrix, got shape {X.shape}")
    vocab = config.condition_vocab
    n_cond = 0 if vocab is None else len(vocab)
    C = None
    if vocab is not None:
        if conditions is None:
            raise GANError("conditional training needs a condition for every row")
        if len(conditions) != len(X):
            raise GANError(f"{len(conditions)} conditions for {len(X)} rows")
        C = np.vstack([condition_vector(c, vocab) for c in conditions]) if len(X) else np.zeros((0, n_cond))
    elif conditions is not None:
        raise GANError("conditions given but config.condition_vocab is None")
    if spec_g.n_out != X.shape[1]:
        raise GANError(f"generator outputs {spec_g.n_out} columns, data has {X.shape[1]}")
    if spec_g.n_in != config.noise_dim + n_cond:
        raise GANError(f"generator input width {spec_g.n_in} != noise_dim + labels ({config.noise_dim + n_cond})")
    if spec_d.n_in != X.shape[1] + n_cond or spec_d.n_out != 1:
        raise GANError(f"critic must map {X.shape[1] + n_cond} columns to 1, got {spec_d.layer_widths}")
    naive = config.objective is Objective.NAIVE
    if naive and spec_d.final_activation != "sigmoid":
        raise GANError("the minimax objective needs a sigmoid critic")
    if not naive and spec_d.final_activation == "sigmoid":
        raise GANError("the WGAN-gp objective needs a linear critic")
    if config.iterations > 0 and config.batch_size > len(X) and not config.sample_with_replacement:
        raise GANError(f"batch_size {config.batch_size} exceeds {len(X)} data rows "
                       "(set sample_with_replacement to allow)")

    rng = np.random.default_rng(config.seed)
    G = MLP.init(spec_g, rng)
    D = MLP.init(spec_d, rng)
    g_state = [np.zeros_like(p) for p in G.params]
    d_state = [np.zeros_like(p) for p in D.params]
    g_names, d_names = _param_names("generator", G), _param_names("critic", D)
    trace = {"iteration": [], "critic": [], "generator": []}
    bs = config.batch_size

    def fake_batch(cond_rows):
        z = rng.standard_normal((bs, config.noise_dim))
        gin = z if cond_rows is None else np.hstack([z, cond_rows])
        return gin, G.forward(gin)

    for it in range(config.iterations):
        for _ in range(config.critic_steps_per_generator_step):
            idx = rng.choice(len(X), size=bs, replace=config.sample_with_replacement)
            real = X[idx]
            cond = None if C is None else C[idx]
            _, fake = fake_batch(cond)
            if naive:
                g = Graph()
                dr, params = D.build(g, g.const(real), prefix="critic.")
                df, _ = _rebuild(D, g, g.const(fake), params)
                dr = g.clamp(dr, PROB_EPS, 1 - PROB_EPS)
                df = g.clamp(df, PROB_EPS, 1 - PROB_EPS)
                loss = g.sub(g.scale(g.mean(g.log(dr)), -1.0),
                             g.mean(g.log(g.affine(df, -1.0, 1.0))))
            else:
                eps = rng.random(bs)
                g, loss, params, _ = _wgan_critic_graph(D, real, fake, cond, eps, config.lambda_gp, literal=False)
            critic_loss = float(loss.value[0, 0])
            if not math.isfinite(critic_loss):
                raise GANError(f"critic loss diverged at iteration {it}")
            grads = backward(g, loss)
            rmsprop_step(D.params, [grads[p] for p in params], d_state, config.learning_rate,
                         config.rmsprop_decay, config.rmsprop_epsilon, d_names)

        cond = None if C is None else C[rng.choice(len(X), size=bs, replace=True)]
        z = rng.standard_normal((bs, config.noise_dim))
        g = Graph()
        gin = g.const(z if cond is None else np.hstack([z, cond]))
        fake, gparams = G.build(g, gin, prefix="generator.")
        d_out, _ = D.build(g, _critic_input(g, fake, cond), trainable=False)
        if naive:
            loss = g.scale(g.mean(g.log(g.clamp(d_out, PROB_EPS, 1 - PROB_EPS))), -1.0)
        else:
            loss = g.scale(g.mean(d_out), -1.0)
        gen_loss = float(loss.value[0, 0])
        if not math.isfinite(gen_loss):
            raise GANError(f"generator loss diverged at iteration {it}")
        grads = backward(g, loss)
        rmsprop_step(G.params, [grads[p] for p in gparams], g_state, config.learning_rate,
                     config.rmsprop_decay, config.rmsprop_epsilon, g_names)

        if it % config.trace_stride == 0:
            trace["iteration"].append(it)
            trace["critic"].append(critic_loss)
            trace["generator"].append(gen_loss)
        if progress is not None:
            progress(it, critic_loss, gen_loss)

    return ModelCheckpoint(G, D, config, trace)


def sample(checkpoint: ModelCheckpoint, n: int, condition=None, seed: int = 0) -> np.ndarray:
    """Draw ``n`` generator rows with z ~ N(0, I)."""
    vocab = checkpoint.config.condition_vocab
    if (condition is None) != (vocab is None):
        raise GANError("condition must be given exactly when the model is conditional"
                       + (f" (vocabulary {list(vocab)})" if vocab is not None else ""))
    noise_dim = checkpoint.config.noise_dim
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, noise_dim))
    if vocab is not None:
        c = condition_vector(condition, vocab)
        z = np.hstack([z, np.broadcast_to(c, (n, len(vocab)))])
    if n == 0:
        return np.zeros((0, checkpoint.data_dim))
    return checkpoint.generator.forward(z)


# ---------------------------------------------------------------- persistence

def _mlp_to_dict(net: MLP) -> dict:
    return {
        "layer_widths": list(net.spec.layer_widths),
        "hidden_activation": net.spec.hidden_activation,
        "final_activation": net.spec.final_activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.ravel().tolist() for b in net.biases],
    }


def _mlp_from_dict(d: dict) -> MLP:
    spec = MLPSpec(tuple(d["layer_widths"]), d["final_activation"], d.get("hidden_activation", "relu"))
    pairs = list(zip(spec.layer_widths[:-1], spec.layer_widths[1:]))
    if len(d["weights"]) != len(pairs) or len(d["biases"]) != len(pairs):
        raise CheckpointError("layer count does not match layer_widths")
    weights, biases = [], []
    for (fi, fo), w, b in zip(pairs, d["weights"], d["biases"]):
        w = np.array(w, dtype=np.float64)
        b = np.array(b, dtype=np.float64).reshape(1, -1)
        if w.shape != (fi, fo) or b.shape != (1, fo):
            raise CheckpointError(f"weight shape {w.shape}/{b.shape} does not match spec ({fi}, {fo})")
        weights.append(w)
        biases.append(b)
    return MLP(spec, weights, biases)


def checkpoint_to_dict(ckpt: ModelCheckpoint) -> dict:
    return {
        "format_version": ckpt.format_version,
        "generator": _mlp_to_dict(ckpt.generator),
        "critic": _mlp_to_dict(ckpt.critic),
        "config": ckpt.config.to_dict(),
        "condition_vocab": list(ckpt.config.condition_vocab) if ckpt.conditional else None,
        "loss_trace": ckpt.loss_trace,
    }


def checkpoint_from_dict(d: dict) -> ModelCheckpoint:
    if not isinstance(d, dict) or "format_version" not in d:
        raise CheckpointError("not a checkpoint document (missing format_version)")
    if d["format_version"] not in SUPPORTED_VERSIONS:
        raise CheckpointError(f"unsupported checkpoint format_version {d['format_version']!r}; "
                              f"supported versions: {list(SUPPORTED_VERSIONS)}")
    try:
        config = TrainConfig.from_dict(d["config"])
        ckpt = ModelCheckpoint(_mlp_from_dict(d["generator"]), _mlp_from_dict(d["critic"]), config,
                               d["loss_trace"], d["format_version"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return ckpt


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_dict(ckpt), indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    return checkpoint_from_dict(doc)


def default_specs(data_dim: int, config: TrainConfig, hidden: int = 64) -> Tuple[MLPSpec, MLPSpec]:
    """Three-layer generator and critic sized for ``data_dim`` features."""
    n_cond = 0 if config.condition_vocab is None else len(config.condition_vocab)
    critic_act = "sigmoid" if config.objective is Objective.NAIVE else "linear"
    g = MLPSpec((config.noise_dim + n_cond, hidden, hidden, data_dim), "linear")
    d = MLPSpec((data_dim + n_cond, hidden, hidden, 1), critic_act)
    return g, d
