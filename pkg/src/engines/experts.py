# Docstring for src/engines/experts module
"""
experts.py

The two expert models of the adaptation pipeline.

SourceExpert
    Frozen tanh backbone and frozen linear label head, with a trainable
    rank-r residual bottleneck adapter on the hidden feature:

        h  = tanh(W1 x + b1)
        h' = h + U relu(D h)          (U = adapter_up, D = adapter_down)
        p  = softmax(W2 h' + b2)

    adapter_up starts at zero, so the adapted forward pass equals the frozen one
    at initialization.

PromptExpert
    Frozen linear encoder, frozen unit-norm category anchors and one trainable
    shared prompt vector psi added to every anchor before re-normalization:

        v   = normalize(E x)
        a_c = normalize(t_c + psi)    (psi omitted when the prompt is off)
        p   = softmax(cos(v, a_c) / T)

Design goals
------------
- Forward passes are vectorized over a batch and also return the
  intermediates the losses need for analytic backpropagation.
- Trainable parameters are exposed as one flat vector in a fixed order
  (ParamView); frozen blocks are covered by a checksum.

Public API
----------
- SourceExpert, PromptExpert, ParamView
- source_forward(e, x, use_adapter=True) -> (hidden, probs)
- prompt_forward(e, x, use_prompt=True) -> probs
- source_forward_batch(e, X, use_adapter=True) -> SourceTrace
- prompt_forward_batch(e, X, use_prompt=True) -> PromptTrace
- source_backward(e, trace, g_hidden=None, g_logits=None) -> np.ndarray
- prompt_backward(e, trace, g_logits) -> np.ndarray
- flatten_params(e) -> ParamView / write_params(e, view) -> None
- frozen_checksum(e) -> str
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..config import EXPERT_CONFIG, NUMERICS_CONFIG
from ..core.numerics import softmax_rows
from ..core.validators import require_dim

NORM_FLOOR = NUMERICS_CONFIG.norm_floor


# --- Expert types -----------------------------------------------------------------

@dataclass
class SourceExpert:

    """

    Block shapes:
        backbone_w1  (d_hidden, d_in)   frozen
        backbone_b1  (d_hidden,)        frozen
        head_w2      (C, d_hidden)      frozen
        head_b2      (C,)               frozen
        adapter_down (r, d_hidden)      trainable
        adapter_up   (d_hidden, r)      trainable

    """

    backbone_w1: np.ndarray
    backbone_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    adapter_down: np.ndarray
    adapter_up: np.ndarray

    FROZEN_BLOCKS = ("backbone_w1", "backbone_b1", "head_w2", "head_b2")
    TRAINABLE_BLOCKS = ("adapter_down", "adapter_up")

    def __post_init__(self) -> None:
        for name in (*self.FROZEN_BLOCKS, *self.TRAINABLE_BLOCKS):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        d_hidden, d_in = self.backbone_w1.shape
        c = self.head_w2.shape[0]
        r = self.adapter_down.shape[0]
        expected = {
            "backbone_b1": (d_hidden,),
            "head_w2": (c, d_hidden),
            "head_b2": (c,),
            "adapter_down": (r, d_hidden),
            "adapter_up": (d_hidden, r),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"SourceExpert block {name} has shape {getattr(self, name).shape}, expected {shape}."
                )

    @property
    def d_in(self) -> int:
        return int(self.backbone_w1.shape[1])

    @property
    def d_hidden(self) -> int:
        return int(self.backbone_w1.shape[0])

    @property
    def num_categories(self) -> int:
        return int(self.head_w2.shape[0])

    @property
    def rank(self) -> int:
        return int(self.adapter_down.shape[0])

    @classmethod
    def with_adapter(
        cls,
        backbone_w1: np.ndarray,
        backbone_b1: np.ndarray,
        head_w2: np.ndarray,
        head_b2: np.ndarray,
        gen: np.random.Generator,
        rank: int = EXPERT_CONFIG.adapter_rank,
        init_std: float = EXPERT_CONFIG.adapter_init_std,
    ) -> "SourceExpert":

        """

        Attach a fresh adapter to trained backbone/head blocks.

        adapter_down ~ N(0, init_std^2) from `gen`; adapter_up = 0. A zero
        down-projection would leave both adapter gradients at zero forever.

        """

        d_hidden = np.asarray(backbone_w1).shape[0]
        return cls(
            backbone_w1=backbone_w1,
            backbone_b1=backbone_b1,
            head_w2=head_w2,
            head_b2=head_b2,
            adapter_down=init_std * gen.standard_normal((rank, d_hidden)),
            adapter_up=np.zeros((d_hidden, rank)),
        )

    def copy(self) -> "SourceExpert":
        return SourceExpert(**{name: getattr(self, name).copy() for name in self.block_names()})

    @classmethod
    def block_names(cls) -> tuple[str, ...]:
        return (*cls.FROZEN_BLOCKS, *cls.TRAINABLE_BLOCKS)


@dataclass
class PromptExpert:

    """

    Block shapes:
        encoder_u  (d_embed, d_in)   frozen
        anchors    (C, d_embed)      frozen, unit-norm rows
        prompt     (d_embed,)        trainable, starts at zero

    """

    encoder_u: np.ndarray
    anchors: np.ndarray
    prompt: np.ndarray
    temperature: float = EXPERT_CONFIG.temperature

    FROZEN_BLOCKS = ("encoder_u", "anchors")
    TRAINABLE_BLOCKS = ("prompt",)

    def __post_init__(self) -> None:
        self.encoder_u = np.array(self.encoder_u, dtype=np.float64)
        self.anchors = np.array(self.anchors, dtype=np.float64)
        self.prompt = np.array(self.prompt, dtype=np.float64)
        self.temperature = float(self.temperature)
        d_embed = self.encoder_u.shape[0]
        if self.anchors.ndim != 2 or self.anchors.shape[1] != d_embed:
            raise ValueError(
                f"anchors must have shape (C, {d_embed}), got {self.anchors.shape}."
            )
        if self.prompt.shape != (d_embed,):
            raise ValueError(f"prompt must have shape ({d_embed},), got {self.prompt.shape}.")
        if not self.temperature > 0:
            raise ValueError(f"Invalid temperature: {self.temperature}. Expected > 0.")
        norms = np.linalg.norm(self.anchors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("anchors must be unit-norm rows.")

    @property
    def d_in(self) -> int:
        return int(self.encoder_u.shape[1])

    @property
    def d_embed(self) -> int:
        return int(self.encoder_u.shape[0])

    @property
    def num_categories(self) -> int:
        return int(self.anchors.shape[0])

    def copy(self) -> "PromptExpert":
        return PromptExpert(
            encoder_u=self.encoder_u.copy(),
            anchors=self.anchors.copy(),
            prompt=self.prompt.copy(),
            temperature=self.temperature,
        )

    @classmethod
    def block_names(cls) -> tuple[str, ...]:
        return (*cls.FROZEN_BLOCKS, *cls.TRAINABLE_BLOCKS)


Expert = SourceExpert | PromptExpert


@dataclass(frozen=True)
class ParamView:

    """

    All trainable parameters of one expert as a flat vector.

    SourceExpert order: adapter_down row-major, then adapter_up row-major.
    PromptExpert order: prompt.

    """

    flat: np.ndarray

    def __len__(self) -> int:
        return int(self.flat.shape[0])


# --- Forward passes ----------------------------------------------------------------

@dataclass(frozen=True)
class SourceTrace:
    inputs: np.ndarray
    hidden: np.ndarray          # h, before the adapter
    pre_relu: np.ndarray        # D h
    bottleneck: np.ndarray      # relu(D h)
    adapted: np.ndarray         # h'
    logits: np.ndarray
    probs: np.ndarray
    use_adapter: bool


@dataclass(frozen=True)
class PromptTrace:
    inputs: np.ndarray
    embedded: np.ndarray        # v, unit rows (zero rows when |E x| is below the floor)
    anchor_norms: np.ndarray    # |t_c + psi|
    anchors: np.ndarray         # a_c, unit rows (zero rows when the norm is below the floor)
    cosines: np.ndarray
    probs: np.ndarray


def _as_batch(x: np.ndarray, d_in: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != d_in:
        raise ValueError(f"Dimension mismatch: expected inputs of shape (N, {d_in}), got {arr.shape}.")
    return arr


def _normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    safe = np.where(norms < NORM_FLOOR, 1.0, norms)
    unit = np.where((norms < NORM_FLOOR)[:, None], 0.0, m / safe[:, None])
    return unit, norms


def source_forward_batch(e: SourceExpert, x: np.ndarray, use_adapter: bool = True) -> SourceTrace:
    x = _as_batch(x, e.d_in)
    h = np.tanh(x @ e.backbone_w1.T + e.backbone_b1)
    if use_adapter:
        pre = h @ e.adapter_down.T
        u = np.maximum(pre, 0.0)
        adapted = h + u @ e.adapter_up.T
    else:
        pre = np.zeros((h.shape[0], e.rank))
        u = pre
        adapted = h
    logits = adapted @ e.head_w2.T + e.head_b2
    return SourceTrace(
        inputs=x,
        hidden=h,
        pre_relu=pre,
        bottleneck=u,
        adapted=adapted,
        logits=logits,
        probs=softmax_rows(logits),
        use_adapter=use_adapter,
    )


def source_forward(e: SourceExpert, x, use_adapter: bool = True) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    require_dim(x, e.d_in, "x")
    trace = source_forward_batch(e, x[None, :], use_adapter=use_adapter)
    return trace.adapted[0], trace.probs[0]


def prompt_forward_batch(e: PromptExpert, x: np.ndarray, use_prompt: bool = True) -> PromptTrace:
    x = _as_batch(x, e.d_in)
    v, _ = _normalize_rows(x @ e.encoder_u.T)
    # the unprompted path goes through the same normalization, so psi = 0 is exact
    w = e.anchors + e.prompt if use_prompt else e.anchors + 0.0
    a, w_norms = _normalize_rows(w)
    cos = np.clip(v @ a.T, -1.0, 1.0)
    return PromptTrace(
        inputs=x,
        embedded=v,
        anchor_norms=w_norms,
        anchors=a,
        cosines=cos,
        probs=softmax_rows(cos / e.temperature),
    )


def prompt_forward(e: PromptExpert, x, use_prompt: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    require_dim(x, e.d_in, "x")
    return prompt_forward_batch(e, x[None, :], use_prompt=use_prompt).probs[0]


# --- Backward passes ----------------------------------------------------------------

def softmax_backward(probs: np.ndarray, g_probs: np.ndarray) -> np.ndarray:
    """Row-wise vector-Jacobian product of softmax: p * (g - <p, g>)."""
    return probs * (g_probs - (probs * g_probs).sum(axis=1, keepdims=True))


def source_backward(
    e: SourceExpert,
    trace: SourceTrace,
    g_hidden: np.ndarray | None = None,
    g_logits: np.ndarray | None = None,
) -> np.ndarray:

    """

    Gradient of a scalar loss w.r.t. the flat adapter parameters.

    Args:
        trace:
            Adapter-on forward trace of the batch the loss was computed on.
        g_hidden:
            dL/dh' (N, d_hidden), the direct dependence on the adapted feature.
        g_logits:
            dL/dlogits (N, C).

    Returns:
        Flat gradient in ParamView order (adapter_down, then adapter_up).

    """

    if not trace.use_adapter:
        raise ValueError("source_backward needs an adapter-on forward trace.")
    n = trace.inputs.shape[0]
    g = np.zeros((n, e.d_hidden)) if g_hidden is None else np.array(g_hidden, dtype=np.float64)
    if g_logits is not None:
        g = g + g_logits @ e.head_w2

    d_up = g.T @ trace.bottleneck
    g_bottleneck = g @ e.adapter_up
    g_pre = g_bottleneck * (trace.pre_relu > 0)
    d_down = g_pre.T @ trace.hidden
    return np.concatenate([d_down.ravel(), d_up.ravel()])


def prompt_backward(e: PromptExpert, trace: PromptTrace, g_logits: np.ndarray) -> np.ndarray:

    """

    Gradient of a scalar loss w.r.t. psi given dL/dlogits (N, C) of a prompted trace.

        d cos_nc / d psi = (v_n - cos_nc a_c) / |t_c + psi|

    """

    g_cos = np.asarray(g_logits, dtype=np.float64) / e.temperature
    live = trace.anchor_norms >= NORM_FLOOR
    m = g_cos.T @ trace.embedded
    s = (g_cos * trace.cosines).sum(axis=0)
    per_category = m - s[:, None] * trace.anchors
    scale = np.where(live, 1.0 / np.where(live, trace.anchor_norms, 1.0), 0.0)
    return (scale[:, None] * per_category).sum(axis=0)


# --- Parameter views ------------------------------------------------------------------

def trainable_size(e: Expert) -> int:
    if isinstance(e, SourceExpert):
        return e.adapter_down.size + e.adapter_up.size
    return e.prompt.size


def flatten_params(e: Expert) -> ParamView:
    if isinstance(e, SourceExpert):
        return ParamView(np.concatenate([e.adapter_down.ravel(), e.adapter_up.ravel()]))
    if isinstance(e, PromptExpert):
        return ParamView(e.prompt.copy())
    raise TypeError(f"Unsupported expert type: {type(e).__name__}")


def write_params(e: Expert, view: ParamView | np.ndarray) -> None:
    flat = np.asarray(view.flat if isinstance(view, ParamView) else view, dtype=np.float64)
    expected = trainable_size(e)
    if flat.ndim != 1 or flat.shape[0] != expected:
        raise ValueError(
            f"ParamView length mismatch: got {flat.shape}, expected ({expected},)."
        )
    if isinstance(e, SourceExpert):
        split = e.adapter_down.size
        e.adapter_down = flat[:split].reshape(e.adapter_down.shape).copy()
        e.adapter_up = flat[split:].reshape(e.adapter_up.shape).copy()
    else:
        e.prompt = flat.copy()


def frozen_checksum(e: Expert) -> str:
    """SHA-256 over the raw bytes of the frozen blocks, in declaration order."""
    digest = hashlib.sha256()
    for name in e.FROZEN_BLOCKS:
        block = np.ascontiguousarray(getattr(e, name), dtype=np.float64)
        digest.update(name.encode("utf-8"))
        digest.update(repr(block.shape).encode("utf-8"))
        digest.update(block.tobytes())
    if isinstance(e, PromptExpert):
        digest.update(np.float64(e.temperature).tobytes())
    return digest.hexdigest()
