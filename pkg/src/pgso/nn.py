"""Minimal trainable stack for operator-learning GNNs.

Message-passing layers propagate with the parametrised shift operator and
backpropagate through both the dense weights and the seven operator
parameters using the analytic partials from :mod:`pgso.operator`; no
autodiff framework is involved.  The GIN-style and GCN-style layer
formulations are algebraically the same linear map (both evaluate the
operator's message-passing form), so models of either kind share one
compute path; ``gin_pgso_layer`` exists as the independently coded
edge-weight formulation.

Adam runs with two parameter groups: the exponential operator parameters
(e1, e2, e3) at a smaller rate than everything else, both rates halving
every 50 epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pgso.graph import AttributedGraph
from pgso.operator import (
    DEFAULT_CLAMP_EPS,
    PARAM_NAMES,
    ParamGradient,
    ParamSet,
    apply,
    augmented_degrees,
    input_gradient,
    param_gradient,
    preset,
)


class NonFiniteGradientError(RuntimeError):
    """A gradient went NaN/Inf; the optimizer step was skipped."""


# ---------------------------------------------------------------------------
# activations


def _relu(y):
    return np.maximum(y, 0.0)


def _relu_grad(y):
    return (y > 0).astype(float)


def _identity(y):
    return y


def _identity_grad(y):
    return np.ones_like(y)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
}


def _resolve_activation(activation):
    try:
        return ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None


# ---------------------------------------------------------------------------
# layers


@dataclass
class LayerWeights:
    """Dense weight matrix (in x out) with optional bias."""

    W: np.ndarray
    bias: np.ndarray | None = None


def glorot_weights(rng: np.random.Generator, fan_in: int, fan_out: int) -> LayerWeights:
    """Uniform Glorot weights; the bias is drawn uniform +-1/sqrt(fan_in)
    rather than zeroed so that an all-zeros operator initialisation still
    produces nonzero activations and trainable gradients."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
    return LayerWeights(W=w, bias=b)


def gcn_pgso_layer(
    g: AttributedGraph,
    slot_params: ParamSet,
    h: np.ndarray,
    w: LayerWeights,
    activation: str = "relu",
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> np.ndarray:
    """activation(gamma(A, S) @ h @ W + bias)."""
    act, _ = _resolve_activation(activation)
    y = apply(g, slot_params, h, clamp_epsilon) @ w.W
    if w.bias is not None:
        y = y + w.bias
    return act(y)


def gin_pgso_layer(
    g: AttributedGraph,
    s: ParamSet,
    h: np.ndarray,
    w: LayerWeights,
    activation: str = "relu",
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> np.ndarray:
    """Sum-aggregation formulation with explicit edge weights.

    Row i aggregates (m1 b_i^e1 + m3) h_i plus m2 * eps_ij h_j over the
    closed neighbourhood, eps_ij = b_i^e2 b_j^e3, the self term carrying
    the extra factor ``a``.  Agrees with ``gcn_pgso_layer`` entrywise.
    """
    act, _ = _resolve_activation(activation)
    h = np.asarray(h, dtype=float)
    if h.shape[0] != g.n:
        raise ValueError(f"h must have {g.n} rows, got shape {h.shape}")
    b, _n = augmented_degrees(g, s.a, clamp_epsilon)
    agg = (s.m1 * b**s.e1 + s.m3)[:, None] * h
    agg += (s.m2 * s.a * b ** (s.e2 + s.e3))[:, None] * h
    if g.edges:
        e = np.asarray(g.edges)
        u, v = e[:, 0], e[:, 1]
        np.add.at(agg, u, (s.m2 * b[u] ** s.e2 * b[v] ** s.e3)[:, None] * h[v])
        np.add.at(agg, v, (s.m2 * b[v] ** s.e2 * b[u] ** s.e3)[:, None] * h[u])
    y = agg @ w.W
    if w.bias is not None:
        y = y + w.bias
    return act(y)


def sgc_pgso_forward(
    g: AttributedGraph,
    s: ParamSet,
    x: np.ndarray,
    k: int,
    w: LayerWeights,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> np.ndarray:
    """Softmax logits gamma^k @ X @ W via k successive applications."""
    if k < 1:
        raise ValueError("k must be at least 1")
    z = np.asarray(x, dtype=float)
    for _ in range(k):
        z = apply(g, s, z, clamp_epsilon)
    y = z @ w.W
    if w.bias is not None:
        y = y + w.bias
    return y


def readout(h: np.ndarray, mode: str = "sum") -> np.ndarray:
    """Column-wise pooling of node representations into a graph vector."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("readout needs a nonempty n x d matrix")
    if mode == "sum":
        return h.sum(axis=0)
    if mode == "mean":
        return h.mean(axis=0)
    raise ValueError(f"unknown readout mode {mode!r}")


def softmax_cross_entropy(
    logits: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax over masked rows and its logits gradient.

    The gradient is zero outside the mask and averaged over the mask size.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=int)
    rows = np.arange(logits.shape[0]) if mask is None else np.asarray(mask, dtype=int)
    if rows.size == 0:
        raise ValueError("empty mask")
    if np.any(targets[rows] < 0) or np.any(targets[rows] >= logits.shape[1]):
        raise ValueError("target out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -float(np.mean(logp[rows, targets[rows]]))
    grad = np.zeros_like(logits)
    grad[rows] = np.exp(logp[rows])
    grad[rows, targets[rows]] -= 1.0
    grad[rows] /= rows.size
    return loss, grad


def accuracy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None) -> float:
    rows = np.arange(logits.shape[0]) if mask is None else np.asarray(mask, dtype=int)
    pred = np.argmax(logits[rows], axis=1)
    return float(np.mean(pred == np.asarray(targets)[rows]))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: zeros with probability ``rate``, kept
    entries scaled by 1/(1-rate)."""
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# operator slot


@dataclass(frozen=True)
class OperatorSlot:
    """How a model sources its shift operator.

    ``fixed``: a constant ParamSet.  ``pgso``: one trainable tuple shared
    by all layers.  ``mpgso``: a trainable tuple per layer.
    """

    mode: str
    shared: ParamSet | None = None
    per_layer: tuple[ParamSet, ...] | None = None

    def __post_init__(self):
        if self.mode in ("fixed", "pgso"):
            if self.shared is None or self.per_layer is not None:
                raise ValueError(f"{self.mode} slot needs exactly the shared tuple")
        elif self.mode == "mpgso":
            if self.per_layer is None or self.shared is not None:
                raise ValueError("mpgso slot needs exactly the per-layer tuples")
        else:
            raise ValueError(f"unknown slot mode {self.mode!r}")

    @property
    def trainable(self) -> bool:
        return self.mode != "fixed"

    def layer_params(self, layer: int) -> ParamSet:
        if self.mode == "mpgso":
            return self.per_layer[layer]
        return self.shared

    @classmethod
    def from_spec(cls, text: str, depth: int) -> "OperatorSlot":
        """Parse ``preset:<name>``, ``pgso:<name>`` or ``mpgso:<name>``."""
        kind, sep, name = text.partition(":")
        if not sep or kind not in ("preset", "pgso", "mpgso"):
            raise ValueError(
                f"bad operator spec {text!r}; expected preset:/pgso:/mpgso: prefix"
            )
        init = preset(name)
        if kind == "preset":
            return cls(mode="fixed", shared=init)
        if kind == "pgso":
            return cls(mode="pgso", shared=init)
        return cls(mode="mpgso", per_layer=tuple(init for _ in range(depth)))


# ---------------------------------------------------------------------------
# model


class GnnModel:
    """A stack of operator message-passing layers with optional graph head.

    Node task: depth K layers (in -> hidden -> ... -> classes), rectifier
    between layers, identity into the softmax.  Graph task: K hidden
    layers, then sum readout and a dense head.  ``sgc`` propagates K times
    with no nonlinearity before a single dense map.

    All trainable values live in ``self.params`` (name -> ndarray); the
    operator tuples are scalar entries ``op.m1`` .. ``op.a`` (or
    ``op{l}.*`` per layer for mpgso).
    """

    def __init__(
        self,
        model: str,
        task: str,
        in_dim: int,
        hidden: int,
        out_dim: int,
        depth: int,
        slot: OperatorSlot,
        seed: int = 0,
        dropout: float = 0.5,
        readout_mode: str = "sum",
        clamp_epsilon: float = DEFAULT_CLAMP_EPS,
    ):
        if model not in ("gcn", "gin", "sgc"):
            raise ValueError(f"unknown model {model!r}")
        if task not in ("node", "graph"):
            raise ValueError(f"unknown task {task!r}")
        if depth < 1 or hidden < 1:
            raise ValueError("depth and hidden must be at least 1")
        if slot.mode == "mpgso" and len(slot.per_layer) != depth:
            raise ValueError(
                f"mpgso slot has {len(slot.per_layer)} tuples for depth {depth}"
            )
        self.model = model
        self.task = task
        self.depth = depth
        self.hidden = hidden
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.slot = slot
        self.dropout = dropout
        self.readout_mode = readout_mode
        self.clamp_epsilon = clamp_epsilon

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        if model == "sgc":
            lw = glorot_weights(rng, in_dim, out_dim)
            self.params["layer0.W"] = lw.W
            # no bias: the model is a single linear map of the propagated attributes
        else:
            dims = self._layer_dims()
            for l, (fin, fout) in enumerate(zip(dims[:-1], dims[1:])):
                lw = glorot_weights(rng, fin, fout)
                self.params[f"layer{l}.W"] = lw.W
                self.params[f"layer{l}.b"] = lw.bias
            if task == "graph":
                head = glorot_weights(rng, dims[-1], out_dim)
                self.params["head.W"] = head.W
                self.params["head.b"] = head.bias
        if slot.trainable:
            if slot.mode == "pgso":
                for name in PARAM_NAMES:
                    self.params[f"op.{name}"] = np.asarray(getattr(slot.shared, name))
            else:
                for l in range(depth):
                    for name in PARAM_NAMES:
                        self.params[f"op{l}.{name}"] = np.asarray(
                            getattr(slot.per_layer[l], name)
                        )

    def _layer_dims(self) -> list[int]:
        if self.task == "node":
            return [self.in_dim] + [self.hidden] * (self.depth - 1) + [self.out_dim]
        return [self.in_dim] + [self.hidden] * self.depth

    # -- operator parameter access

    def operator_params(self, layer: int) -> ParamSet:
        if not self.slot.trainable:
            return self.slot.layer_params(layer)
        prefix = "op" if self.slot.mode == "pgso" else f"op{layer}"
        return ParamSet(*(float(self.params[f"{prefix}.{n}"]) for n in PARAM_NAMES))

    def operator_tuples(self) -> list[ParamSet]:
        """Current tuple per layer (a single shared tuple repeats)."""
        return [self.operator_params(l) for l in range(self.depth)]

    def trajectory_names(self) -> list[str]:
        if self.slot.mode == "mpgso":
            return [f"{n}_l{l + 1}" for l in range(self.depth) for n in PARAM_NAMES]
        return list(PARAM_NAMES)

    def trajectory_values(self) -> np.ndarray:
        if self.slot.mode == "mpgso":
            return np.concatenate([s.as_array() for s in self.operator_tuples()])
        return self.operator_params(0).as_array()

    # -- forward / backward

    def forward(
        self,
        g: AttributedGraph,
        x: np.ndarray | None = None,
        training: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ):
        """Logits (n x classes for node task, 1D classes vector for graph
        task) plus the cache needed by :meth:`backward`."""
        h = np.asarray(g.attributes if x is None else x, dtype=float)
        cache = {"g": g, "layers": [], "input": h}
        if self.model == "sgc":
            zs = [h]
            s = self.operator_params(0)
            for step in range(self.depth):
                s_step = self.operator_params(step) if self.slot.mode == "mpgso" else s
                zs.append(apply(g, s_step, zs[-1], self.clamp_epsilon))
            logits = zs[-1] @ self.params["layer0.W"]
            cache["zs"] = zs
        else:
            use_dropout = training and self.dropout > 0
            for l in range(self.depth):
                s_l = self.operator_params(l)
                w = self.params[f"layer{l}.W"]
                b = self.params[f"layer{l}.b"]
                z = apply(g, s_l, h, self.clamp_epsilon)
                y = z @ w + b
                hidden_layer = (l < self.depth - 1) or self.task == "graph"
                act, act_grad = ACTIVATIONS["relu" if hidden_layer else "identity"]
                out = act(y)
                mask = None
                if use_dropout and hidden_layer:
                    if dropout_rng is None:
                        raise ValueError("training forward needs a dropout generator")
                    mask = dropout_mask(dropout_rng, out.shape, self.dropout)
                    out = out * mask
                cache["layers"].append(
                    {"h_in": h, "z": z, "y": y, "mask": mask, "grad_fn": act_grad}
                )
                h = out
            if self.task == "graph":
                pooled = readout(h, self.readout_mode)
                cache["pooled_input"] = h
                logits = pooled @ self.params["head.W"] + self.params["head.b"]
            else:
                logits = h
        return logits, cache

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every entry of ``self.params``."""
        g = cache["g"]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        if self.model == "sgc":
            zs = cache["zs"]
            grads["layer0.W"] = zs[-1].T @ dlogits
            u = dlogits @ self.params["layer0.W"].T
            for step in reversed(range(self.depth)):
                s_step = self.operator_params(step if self.slot.mode == "mpgso" else 0)
                pg = param_gradient(g, s_step, zs[step], u, self.clamp_epsilon)
                self._accumulate_operator(grads, pg, step)
                if step > 0:
                    u = input_gradient(g, s_step, u, self.clamp_epsilon)
            return grads

        if self.task == "graph":
            d = np.asarray(dlogits, dtype=float)
            pooled = readout(cache["pooled_input"], self.readout_mode)
            grads["head.W"] = np.outer(pooled, d)
            grads["head.b"] = d
            dpooled = self.params["head.W"] @ d
            n = cache["pooled_input"].shape[0]
            dh = np.tile(dpooled, (n, 1))
            if self.readout_mode == "mean":
                dh /= n
        else:
            dh = np.asarray(dlogits, dtype=float)

        for l in reversed(range(self.depth)):
            layer = cache["layers"][l]
            if layer["mask"] is not None:
                dh = dh * layer["mask"]
            dy = dh * layer["grad_fn"](layer["y"])
            grads[f"layer{l}.W"] = layer["z"].T @ dy
            grads[f"layer{l}.b"] = dy.sum(axis=0)
            dz = dy @ self.params[f"layer{l}.W"].T
            s_l = self.operator_params(l)
            pg = param_gradient(g, s_l, layer["h_in"], dz, self.clamp_epsilon)
            self._accumulate_operator(grads, pg, l)
            if l > 0:
                dh = input_gradient(g, s_l, dz, self.clamp_epsilon)
        return grads

    def _accumulate_operator(self, grads, pg: ParamGradient, layer: int):
        if not self.slot.trainable:
            return
        prefix = "op" if self.slot.mode == "pgso" else f"op{layer}"
        values = pg.as_array()
        for name, value in zip(PARAM_NAMES, values):
            grads[f"{prefix}.{name}"] = grads[f"{prefix}.{name}"] + value


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments plus the two-group learning-rate schedule.

    Parameters whose name ends in .e1/.e2/.e3 form the exponential group;
    everything else (weights, biases, multiplicative and additive operator
    parameters) forms the other group.  Both base rates are multiplied by
    ``lr_decay`` every ``lr_decay_every`` epochs; the train loop advances
    ``epoch``.
    """

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int
    group_of: dict[str, str]
    base_lr: dict[str, float]
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    epoch: int = 0

    def lr_scale(self) -> float:
        return self.lr_decay ** (self.epoch // self.lr_decay_every)


EXPONENTIAL_GROUP = "exponential_params"
OTHER_GROUP = "other_params"


def init_adam(
    params: dict[str, np.ndarray],
    lr_exponential: float = 0.005,
    lr_other: float = 0.01,
    weight_decay: float = 5e-4,
    lr_decay: float = 0.5,
    lr_decay_every: int = 50,
) -> AdamState:
    group_of = {
        key: EXPONENTIAL_GROUP if key.rsplit(".", 1)[-1] in ("e1", "e2", "e3") else OTHER_GROUP
        for key in params
    }
    return AdamState(
        m={k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()},
        v={k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()},
        step_count=0,
        group_of=group_of,
        base_lr={EXPONENTIAL_GROUP: lr_exponential, OTHER_GROUP: lr_other},
        weight_decay=weight_decay,
        lr_decay=lr_decay,
        lr_decay_every=lr_decay_every,
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """One Adam update; returns the new parameter dict.

    Raises :class:`NonFiniteGradientError` before touching any state if a
    gradient is NaN/Inf, so the step is skipped as a whole.
    """
    for key, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"non-finite gradient for {key!r}")
    state.step_count += 1
    t = state.step_count
    scale = state.lr_scale()
    out = {}
    for key, value in params.items():
        value = np.asarray(value, dtype=float)
        grad = np.asarray(grads[key], dtype=float) + state.weight_decay * value
        state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * grad
        state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * grad**2
        m_hat = state.m[key] / (1 - state.beta1**t)
        v_hat = state.v[key] / (1 - state.beta2**t)
        lr = state.base_lr[state.group_of[key]] * scale
        out[key] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: GnnModel, path) -> None:
    """Key-value text checkpoint; floats carry 17 significant digits so a
    reload is bit-exact."""
    lines = [
        "pgso-checkpoint v1",
        f"model {model.model}",
        f"task {model.task}",
        f"in_dim {model.in_dim}",
        f"hidden {model.hidden}",
        f"out_dim {model.out_dim}",
        f"depth {model.depth}",
        f"dropout {model.dropout:.17g}",
        f"clamp_epsilon {model.clamp_epsilon:.17g}",
        f"readout {model.readout_mode}",
        f"operator_mode {model.slot.mode}",
    ]
    if model.slot.mode == "mpgso":
        for l, s in enumerate(model.slot.per_layer):
            lines.append(f"operator_init{l} {s.to_record()}")
    else:
        lines.append(f"operator_init {model.slot.shared.to_record()}")
    for key in sorted(model.params):
        value = np.asarray(model.params[key], dtype=float)
        shape = " ".join(str(dim) for dim in value.shape)
        flat = " ".join(f"{x:.17g}" for x in value.ravel())
        lines.append(f"param {key} [{shape}] {flat}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> GnnModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "pgso-checkpoint v1":
        raise ValueError(f"{path}: not a recognised checkpoint")
    meta: dict[str, str] = {}
    inits: dict[int, ParamSet] = {}
    shared_init = None
    raw_params: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "param":
            name, _, payload = rest.partition(" [")
            shape_text, _, flat = payload.partition("] ")
            shape = tuple(int(tok) for tok in shape_text.split()) if shape_text else ()
            values = np.array([float(tok) for tok in flat.split()]) if flat else np.array([])
            raw_params[name] = values.reshape(shape)
        elif key == "operator_init":
            shared_init = ParamSet.from_record(rest)
        elif key.startswith("operator_init"):
            inits[int(key[len("operator_init") :])] = ParamSet.from_record(rest)
        else:
            meta[key] = rest
    depth = int(meta["depth"])
    if meta["operator_mode"] == "mpgso":
        slot = OperatorSlot(
            mode="mpgso", per_layer=tuple(inits[l] for l in range(depth))
        )
    else:
        slot = OperatorSlot(mode=meta["operator_mode"], shared=shared_init)
    model = GnnModel(
        model=meta["model"],
        task=meta["task"],
        in_dim=int(meta["in_dim"]),
        hidden=int(meta["hidden"]),
        out_dim=int(meta["out_dim"]),
        depth=depth,
        slot=slot,
        dropout=float(meta["dropout"]),
        readout_mode=meta["readout"],
        clamp_epsilon=float(meta["clamp_epsilon"]),
    )
    if set(raw_params) != set(model.params):
        raise ValueError(f"{path}: checkpoint parameters do not match the architecture")
    for name, value in raw_params.items():
        if value.shape != model.params[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        model.params[name] = value
    return model
