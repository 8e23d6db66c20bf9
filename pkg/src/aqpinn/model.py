"""The AQ-PINN network, its losses, parameter accounting and checkpoints.

Pipeline per collocation point (x, y, t):

    affine input normalisation -> linear projection to n_tokens * width
    -> attention (quantum heads or the classical baseline)
    -> flatten -> tanh dense -> tanh dense -> linear head

With ``formulation="streamfunction"`` the head emits (psi, p) and the velocity
is u = psi_y, v = -psi_x; ``"velocity"`` emits (u, v, p) directly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import physics
from .ansatz import Topology, build_layout
from .attention import (ClassicalMsaParams, QmsaHead, classical_msa_forward,
                        classical_msa_param_count, qmsa_forward)
from .autodiff import jet as J
from .autodiff.jet import STREAM_SPACE, VELOCITY_SPACE, X, Y, Jet
from .autodiff.tape import Tape, Var, backward
from .errors import ConfigurationError, DataError, FormatError, UsageError
from .physics import FluidConstants, FlowDerivatives, Residuals

CHECKPOINT_MAGIC = b"AQPN"
CHECKPOINT_VERSION = 1


class ModelTopology(str, Enum):
    QMPS = "qmps"
    QTTN = "qttn"
    QMERA = "qmera"
    CLASSICAL = "classical"


class Formulation(str, Enum):
    STREAMFUNCTION = "streamfunction"
    VELOCITY = "velocity"


@dataclass(frozen=True)
class ModelConfig:
    topology: ModelTopology = ModelTopology.QMPS
    n_tokens: int = 4
    n_heads: int = 2
    d_h: int = 8
    hidden_width: int = 32
    formulation: Formulation = Formulation.STREAMFUNCTION
    constants: FluidConstants = field(default_factory=FluidConstants)
    seed: int = 0
    qmps_layers: int = 1
    input_shift: tuple = (0.0, 0.0, 0.0)
    input_scale: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        try:
            object.__setattr__(self, "topology", ModelTopology(self.topology))
            object.__setattr__(self, "formulation", Formulation(self.formulation))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        object.__setattr__(self, "input_shift", tuple(float(v) for v in self.input_shift))
        object.__setattr__(self, "input_scale", tuple(float(v) for v in self.input_scale))
        for name in ("n_tokens", "n_heads", "d_h", "hidden_width", "qmps_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.d_h < 2:
            raise ConfigurationError("d_h must be >= 2")
        if self.hidden_width < self.n_tokens * self.d_h:
            raise ConfigurationError(
                f"hidden_width {self.hidden_width} < n_tokens * d_h = {self.n_tokens * self.d_h}")
        if len(self.input_shift) != 3 or len(self.input_scale) != 3:
            raise ConfigurationError("input_shift and input_scale need three entries")
        if self.is_quantum:
            self.layout()  # raises for invalid qubit counts (e.g. non power of two for trees)

    @property
    def is_quantum(self) -> bool:
        return self.topology is not ModelTopology.CLASSICAL

    @property
    def embed_dim(self) -> int:
        return self.n_heads * self.d_h

    @property
    def token_width(self) -> int:
        return self.d_h if self.is_quantum else self.embed_dim

    @property
    def n_outputs(self) -> int:
        return 2 if self.formulation is Formulation.STREAMFUNCTION else 3

    @property
    def space(self):
        return STREAM_SPACE if self.formulation is Formulation.STREAMFUNCTION else VELOCITY_SPACE

    def layout(self):
        return build_layout(Topology(self.topology.value), self.d_h, self.qmps_layers)

    def segments(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) blocks that partition the parameter vector."""
        F = self.n_tokens * self.token_width
        A = self.n_tokens * self.embed_dim
        H = self.hidden_width
        segs = [("input.weight", (3, F)), ("input.bias", (F,))]
        if self.is_quantum:
            P = self.layout().param_count
            for h in range(self.n_heads):
                segs += [(f"head{h}.theta_K", (P,)), (f"head{h}.theta_Q", (P,)), (f"head{h}.theta_V", (P,))]
        else:
            E = self.embed_dim
            for role in "qkvo":
                segs += [(f"msa.w{role}", (E, E)), (f"msa.b{role}", (E,))]
        segs += [("dense1.weight", (A, H)), ("dense1.bias", (H,)),
                 ("dense2.weight", (H, H)), ("dense2.bias", (H,)),
                 ("out.weight", (H, self.n_outputs)), ("out.bias", (self.n_outputs,))]
        return segs

    # -- text form used in checkpoints and logs ---------------------------------
    def to_text(self) -> str:
        rows = [
            ("topology", self.topology.value), ("formulation", self.formulation.value),
            ("n_tokens", self.n_tokens), ("n_heads", self.n_heads), ("d_h", self.d_h),
            ("hidden_width", self.hidden_width), ("qmps_layers", self.qmps_layers),
            ("rho", repr(self.constants.rho)), ("nu", repr(self.constants.nu)), ("seed", self.seed),
            ("input_shift", ",".join(repr(v) for v in self.input_shift)),
            ("input_scale", ",".join(repr(v) for v in self.input_scale)),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        try:
            return cls(
                topology=kv["topology"], formulation=kv["formulation"],
                n_tokens=int(kv["n_tokens"]), n_heads=int(kv["n_heads"]), d_h=int(kv["d_h"]),
                hidden_width=int(kv["hidden_width"]), qmps_layers=int(kv["qmps_layers"]),
                constants=FluidConstants(float(kv["rho"]), float(kv["nu"])), seed=int(kv["seed"]),
                input_shift=tuple(float(v) for v in kv["input_shift"].split(",")),
                input_scale=tuple(float(v) for v in kv["input_scale"].split(",")),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config block misses key {exc}") from None


@dataclass
class ParamVector:
    gamma: np.ndarray
    slots: dict

    @classmethod
    def layout_for(cls, config: ModelConfig) -> dict:
        slots, off = {}, 0
        for name, shape in config.segments():
            size = int(np.prod(shape))
            slots[name] = (slice(off, off + size), shape)
            off += size
        return slots

    @classmethod
    def from_array(cls, gamma, config: ModelConfig) -> "ParamVector":
        slots = cls.layout_for(config)
        total = sum(s.stop - s.start for s, _ in slots.values())
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (total,):
            raise UsageError(f"config needs {total} parameters, got shape {gamma.shape}")
        return cls(gamma, slots)

    def __len__(self):
        return self.gamma.shape[0]

    def segment(self, name):
        sl, shape = self.slots[name]
        return self.gamma[sl].reshape(shape)

    def quantum_size(self) -> int:
        return sum(s.stop - s.start for name, (s, _) in self.slots.items() if ".theta_" in name)


def init_params(config: ModelConfig) -> ParamVector:
    """Linear layers ~ U(+-sqrt(1/fan_in)); circuit angles ~ U(+-pi/8)."""
    rng = np.random.default_rng(config.seed)
    slots = ParamVector.layout_for(config)
    gamma = np.empty(sum(s.stop - s.start for s, _ in slots.values()))
    for name, (sl, shape) in slots.items():
        if ".theta_" in name:
            bound = math.pi / 8
        else:
            weight = name.replace("bias", "weight").replace("msa.b", "msa.w")
            bound = math.sqrt(1.0 / slots[weight][1][0])
        gamma[sl] = rng.uniform(-bound, bound, size=sl.stop - sl.start)
    return ParamVector(gamma, slots)


def _seg(gamma, slots, name):
    sl, shape = slots[name]
    return gamma[sl].reshape(shape)


def build_heads(config: ModelConfig, gamma, slots) -> list[QmsaHead]:
    layout = config.layout()
    return [QmsaHead(layout, layout, layout,
                     _seg(gamma, slots, f"head{h}.theta_K"),
                     _seg(gamma, slots, f"head{h}.theta_Q"),
                     _seg(gamma, slots, f"head{h}.theta_V")) for h in range(config.n_heads)]


def attention_features(inputs: Jet, gamma, config: ModelConfig, gradient="shift") -> Jet:
    """Normalise, project, attend and flatten: (..., 3) -> (..., n_tokens * n_heads * d_h)."""
    slots = ParamVector.layout_for(config)
    g = lambda name: _seg(gamma, slots, name)  # noqa: E731
    lead = inputs.shape[:-1]
    z = (inputs - np.asarray(config.input_shift)) * np.asarray(config.input_scale)
    feats = z @ g("input.weight") + g("input.bias")
    tokens = feats.reshape(lead + (config.n_tokens, config.token_width))
    if config.is_quantum:
        att = qmsa_forward(tokens, build_heads(config, gamma, slots), gradient)
    else:
        msa = ClassicalMsaParams(config.n_heads, *(g(f"msa.{k}{r}") for r in "qkvo" for k in "wb"))
        att = classical_msa_forward(tokens, msa)
    return att.reshape(lead + (config.n_tokens * config.embed_dim,))


def dense_head(flat: Jet, gamma, config: ModelConfig) -> Jet:
    """Two tanh layers and the linear output layer."""
    slots = ParamVector.layout_for(config)
    g = lambda name: _seg(gamma, slots, name)  # noqa: E731
    h = J.tanh(flat @ g("dense1.weight") + g("dense1.bias"))
    h = J.tanh(h @ g("dense2.weight") + g("dense2.bias"))
    return h @ g("out.weight") + g("out.bias")


def network(inputs: Jet, gamma, config: ModelConfig, gradient="shift") -> Jet:
    """Raw network outputs (..., n_outputs) for lifted input points (..., 3)."""
    return dense_head(attention_features(inputs, gamma, config, gradient), gamma, config)


@dataclass
class FlowPrediction:
    u: Jet
    v: Jet
    p: Jet
    psi: Jet | None = None

    def derivatives(self) -> FlowDerivatives:
        u, v, p = self.u, self.v, self.p
        xx, yy = (2, 0, 0), (0, 2, 0)
        ex, ey, et = (1, 0, 0), (0, 1, 0), (0, 0, 1)
        return FlowDerivatives(
            u=u.val, v=v.val, p=p.val,
            u_t=u.d(et), u_x=u.d(ex), u_y=u.d(ey), u_xx=u.d(xx), u_yy=u.d(yy),
            v_t=v.d(et), v_x=v.d(ex), v_y=v.d(ey), v_xx=v.d(xx), v_yy=v.d(yy),
            p_x=p.d(ex), p_y=p.d(ey),
        )

    def residuals(self, constants: FluidConstants) -> Residuals:
        return physics.ns_residuals(self.derivatives(), constants)


def _as_points(points):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if points.ndim != 2 or points.shape[1] != 3:
        raise UsageError(f"points must have shape (B, 3), got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("non-finite collocation point")
    return points


def forward(points, params, config: ModelConfig, gradient="shift", features: Jet | None = None) -> FlowPrediction:
    """Predictions with input derivatives at a batch of (x, y, t) rows.

    ``params`` is a ParamVector, a flat array, or a tape Var over the flat vector.
    ``features`` may carry a precomputed :func:`attention_features` result.
    """
    gamma = params.gamma if isinstance(params, ParamVector) else params
    if features is None:
        features = attention_features(J.lift_points(_as_points(points), config.space), gamma, config, gradient)
    out = dense_head(features, gamma, config)
    return split_outputs(out, config)


def split_outputs(out: Jet, config: ModelConfig) -> FlowPrediction:
    if config.formulation is Formulation.STREAMFUNCTION:
        psi, p = out[..., 0], out[..., 1]
        u = psi.partial(Y)
        v = -psi.partial(X)
        return FlowPrediction(u, v, p, psi)
    return FlowPrediction(out[..., 0], out[..., 1], out[..., 2])


# -- losses ---------------------------------------------------------------------

@dataclass
class LossBreakdown:
    data_loss: float
    phys_loss: float
    total: float
    residual_terms: tuple = (0.0, 0.0, 0.0)  # mean f_x^2, f_y^2, c^2


def _stack_cols(cols):
    if any(isinstance(c, Var) for c in cols):
        from .autodiff.tape import stack
        return stack(cols, axis=-1)
    return np.stack([np.asarray(c, dtype=float) for c in cols], axis=-1)


def data_loss(predictions, targets):
    """Mean over the batch of (u - u*)^2 + (v - v*)^2 + (p - p*)^2; inputs (B, 3)."""
    t = np.asarray(targets, dtype=float)
    if J.value_of(predictions).shape != t.shape:
        raise UsageError(f"prediction shape {J.value_of(predictions).shape} != target shape {t.shape}")
    err = predictions - t
    return (err * err).sum(axis=-1).mean()


def physics_loss(residual_batch):
    """Mean over the batch of f_x^2 + f_y^2 + c^2; input (B, 3)."""
    shape = J.value_of(residual_batch).shape
    if len(shape) == 0 or shape[0] == 0:
        raise UsageError("physics_loss needs a non-empty batch")
    return (residual_batch * residual_batch).sum(axis=-1).mean()


def evaluate_loss(gamma, points, targets, config: ModelConfig, gradient="shift", features=None):
    """Loss pieces as Vars (tape-tracked when ``gamma`` is on a tape)."""
    pred = forward(points, gamma, config, gradient, features)
    res = pred.residuals(config.constants)
    preds = _stack_cols([pred.u.val, pred.v.val, pred.p.val])
    resid = _stack_cols([res.f_x, res.f_y, res.c])
    ld = data_loss(preds, targets)
    lp = physics_loss(resid)
    return ld, lp, ld + lp, resid


def _breakdown(ld, lp, total, resid) -> LossBreakdown:
    r = np.asarray(resid.data if isinstance(resid, Var) else resid)
    terms = tuple(float(v) for v in (r * r).mean(axis=0))
    return LossBreakdown(float(np.asarray(getattr(ld, "data", ld))), float(np.asarray(getattr(lp, "data", lp))),
                         float(np.asarray(getattr(total, "data", total))), terms)


def loss_value(gamma, points, targets, config: ModelConfig, features=None) -> LossBreakdown:
    gamma = gamma.gamma if isinstance(gamma, ParamVector) else np.asarray(gamma, dtype=float)
    return _breakdown(*evaluate_loss(gamma, points, targets, config, features=features))


def total_loss(batch, params, config: ModelConfig, gradient="shift"):
    """(LossBreakdown, dL/dgamma) on a batch of (points (B, 3), targets (B, 3))."""
    points, targets = batch
    gamma = params.gamma if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    tape = Tape()
    g = tape.parameters(gamma)
    ld, lp, total, resid = evaluate_loss(g, points, targets, config, gradient)
    try:
        return _breakdown(ld, lp, total, resid), backward(total, tape)
    finally:
        tape.release()


# -- parameter accounting -------------------------------------------------------

def attention_param_count(config: ModelConfig) -> int:
    if config.is_quantum:
        return 3 * config.n_heads * config.layout().param_count
    return classical_msa_param_count(config.embed_dim, config.n_heads)


def total_param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in config.segments())


def param_report(config: ModelConfig) -> dict:
    """Attention-block and whole-model counts against the classical baseline of the same dims."""
    classical = replace(config, topology=ModelTopology.CLASSICAL)
    att, att_c = attention_param_count(config), attention_param_count(classical)
    tot, tot_c = total_param_count(config), total_param_count(classical)
    return {
        "topology": config.topology.value,
        "attention_params": att,
        "classical_attention_params": att_c,
        "attention_reduction_pct": 100.0 * (1.0 - att / att_c),
        "model_params": tot,
        "classical_model_params": tot_c,
        "model_reduction_pct": 100.0 * (1.0 - tot / tot_c),
    }


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, config: ModelConfig, params) -> None:
    gamma = params.gamma if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    ParamVector.from_array(gamma, config)
    text = config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(text)))
        fh.write(text)
        fh.write(struct.pack("<Q", gamma.shape[0]))
        fh.write(gamma.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ParamVector]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}", 0)
    if len(raw) < 12:
        raise FormatError("truncated checkpoint header", len(raw))
    version, text_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    end = 12 + text_len
    if len(raw) < end + 8:
        raise FormatError("truncated checkpoint config block", len(raw))
    try:
        config = ModelConfig.from_text(raw[12:end].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"unreadable config block: {exc}", 12) from None
    (n,) = struct.unpack_from("<Q", raw, end)
    if len(raw) != end + 8 + 8 * n:
        raise FormatError(f"expected {n} parameters", min(len(raw), end + 8 + 8 * n))
    gamma = np.frombuffer(raw, dtype="<f8", count=n, offset=end + 8).astype(float)
    expected = total_param_count(config)
    if n != expected:
        raise FormatError(f"checkpoint holds {n} parameters, its config needs {expected}", end)
    return config, ParamVector.from_array(gamma, config)
