"""Recurrent context layer over the four lattice DAGs.

Per direction m the hidden state at a vertex is

    h_m(v) = relu(W_in[m] x(v) + sum_o W_rec[m, o] h_m(pred_o(v))
             + W_global g + W_topic t + b_h[m])

with one recurrent matrix per predecessor offset (3 per direction, 12 total)
and the global/topic injections shared by all four directions. Class scores
sum the per-direction readouts: logits(v) = sum_m W_out[m] h_m(v) + b_y.
The softmax is applied later, after upsampling and fusion.

Backward passes walk each plan in reverse wavefront order and are exact; no
truncation.
"""

from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DimensionError, StateError

N_DIRECTIONS = 4
N_OFFSETS = 3


@dataclass
class CrnnParams:
    """Parameter bundle for one level's recurrent layer.

    Leading axis 4 indexes the DAG direction (SE, SW, NW, NE); the recurrent
    block's second axis indexes the offset slot of the plan.
    """

    w_in: np.ndarray  # (4, hidden, input)
    w_rec: np.ndarray  # (4, 3, hidden, hidden)
    w_out: np.ndarray  # (4, classes, hidden)
    b_h: np.ndarray  # (4, hidden)
    w_global: np.ndarray  # (hidden, global_dim), shared across directions
    w_topic: np.ndarray  # (hidden, topic_dim), shared across directions
    b_y: np.ndarray  # (classes,)

    @property
    def hidden_dim(self):
        return self.w_in.shape[1]

    @property
    def input_dim(self):
        return self.w_in.shape[2]

    @property
    def class_count(self):
        return self.w_out.shape[1]

    @property
    def global_dim(self):
        return self.w_global.shape[1]

    @property
    def topic_dim(self):
        return self.w_topic.shape[1]

    def zeros_like(self):
        """Same-shaped bundle of zeros; used as a gradient accumulator."""
        return CrnnParams(
            np.zeros_like(self.w_in),
            np.zeros_like(self.w_rec),
            np.zeros_like(self.w_out),
            np.zeros_like(self.b_h),
            np.zeros_like(self.w_global),
            np.zeros_like(self.w_topic),
            np.zeros_like(self.b_y),
        )

    def named_arrays(self):
        yield "w_in", self.w_in
        yield "w_rec", self.w_rec
        yield "w_out", self.w_out
        yield "b_h", self.b_h
        yield "w_global", self.w_global
        yield "w_topic", self.w_topic
        yield "b_y", self.b_y


@dataclass
class CrnnCache:
    """Forward state retained for one matching backward call."""

    x: np.ndarray
    hidden: list  # per direction, (H, W, hidden)
    g: np.ndarray
    t: np.ndarray
    consumed: bool = False


def _check_inputs(x, params, g, t):
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise DimensionError(
            f"input map {x.shape} incompatible with input_dim {params.input_dim}"
        )
    if g.shape != (params.global_dim,):
        raise DimensionError(f"global vector {g.shape} != ({params.global_dim},)")
    if t.shape != (params.topic_dim,):
        raise DimensionError(f"topic vector {t.shape} != ({params.topic_dim},)")


def dag_forward(x, plan, params, m, g, t):
    """Hidden map (H, W, hidden) for direction m; empty predecessor sums are zero."""
    _check_inputs(x, params, g, t)
    if (plan.height, plan.width) != x.shape[:2]:
        raise DimensionError(f"plan {plan.height}x{plan.width} vs map {x.shape[:2]}")
    w_rec = params.w_rec[m]
    base = x @ params.w_in[m].T
    base += params.w_global @ g + params.w_topic @ t + params.b_h[m]
    h = np.zeros((plan.height, plan.width, params.hidden_dim), dtype=x.dtype)
    for wf in plan.wavefronts:
        pre = base[wf.rows, wf.cols]
        for slot, inc in enumerate(wf.incoming):
            if inc is not None:
                sel, pr, pc = inc
                pre[sel] += h[pr, pc] @ w_rec[slot].T
        np.maximum(pre, 0.0, out=pre)
        h[wf.rows, wf.cols] = pre
    return h


@dataclass
class DagGradients:
    """Per-direction gradient pieces produced by one dag_backward call."""

    d_w_in: np.ndarray
    d_w_rec: np.ndarray  # (3, hidden, hidden)
    d_b_h: np.ndarray
    delta_sum: np.ndarray  # sum over vertices of the post-activation error
    d_x: np.ndarray


def dag_backward(x, h, plan, params, m, d_hidden):
    """Reverse-wavefront pass for direction m.

    `d_hidden` is the direct per-vertex cotangent on h_m; the returned pieces
    already include the recurrent error flowing back through successors. The
    shared global/topic gradients are derived from delta_sum by the caller.
    """
    w_rec = params.w_rec[m]
    active = h > 0
    delta = np.zeros_like(h)
    for wf in reversed(plan.wavefronts):
        dh = d_hidden[wf.rows, wf.cols].copy()
        for slot, out in enumerate(wf.outgoing):
            if out is not None:
                sel, sr, sc = out
                dh[sel] += delta[sr, sc] @ w_rec[slot]
        delta[wf.rows, wf.cols] = dh * active[wf.rows, wf.cols]

    hidden = params.hidden_dim
    d_w_rec = np.empty_like(w_rec)
    for slot in range(N_OFFSETS):
        dst_r, dst_c, src_r, src_c = plan.edges[slot]
        if dst_r.size:
            d_w_rec[slot] = delta[dst_r, dst_c].T @ h[src_r, src_c]
        else:
            d_w_rec[slot] = 0.0
    flat = delta.reshape(-1, hidden)
    d_w_in = flat.T @ x.reshape(-1, params.input_dim)
    d_b_h = flat.sum(axis=0)
    d_x = delta @ params.w_in[m]
    return DagGradients(d_w_in, d_w_rec, d_b_h, d_b_h.copy(), d_x)


def crnn_forward(x, plans, params, g, t):
    """Pre-softmax class scores (H, W, classes) plus the cache for backward."""
    if len(plans) != N_DIRECTIONS:
        raise DimensionError(f"expected {N_DIRECTIONS} plans, got {len(plans)}")
    hidden = [dag_forward(x, plans[m], params, m, g, t) for m in range(N_DIRECTIONS)]
    logits = np.zeros(x.shape[:2] + (params.class_count,), dtype=x.dtype)
    for m in range(N_DIRECTIONS):
        logits += hidden[m] @ params.w_out[m].T
    logits += params.b_y
    return logits, CrnnCache(x, hidden, g, t)


@dataclass
class CrnnBackward:
    grads: CrnnParams  # gradient bundle, same shapes as the parameters
    d_x: np.ndarray  # gradient on the level input map
    d_g: np.ndarray  # gradient on the global context vector
    d_t: np.ndarray  # gradient on the topic vector (unused by the pipeline)


def crnn_backward(cache, plans, params, d_logits):
    """Exact gradients for all parameter families and the inputs."""
    if cache.consumed:
        raise StateError("crnn cache already consumed by a backward call")
    cache.consumed = True
    x, g, t = cache.x, cache.g, cache.t
    if d_logits.shape != x.shape[:2] + (params.class_count,):
        raise DimensionError(f"d_logits shape {d_logits.shape} mismatches forward output")
    grads = params.zeros_like()
    n = x.shape[0] * x.shape[1]
    flat_dl = d_logits.reshape(n, params.class_count)
    grads.b_y[:] = flat_dl.sum(axis=0)
    d_x = np.zeros_like(x)
    d_g = np.zeros_like(g)
    d_t = np.zeros_like(t)
    for m in range(N_DIRECTIONS):
        h = cache.hidden[m]
        grads.w_out[m] = flat_dl.T @ h.reshape(n, params.hidden_dim)
        seed = d_logits @ params.w_out[m]
        piece = dag_backward(x, h, plans[m], params, m, seed)
        grads.w_in[m] = piece.d_w_in
        grads.w_rec[m] = piece.d_w_rec
        grads.b_h[m] = piece.d_b_h
        grads.w_global += np.outer(piece.delta_sum, g)
        grads.w_topic += np.outer(piece.delta_sum, t)
        d_g += params.w_global.T @ piece.delta_sum
        d_t += params.w_topic.T @ piece.delta_sum
        d_x += piece.d_x
    return CrnnBackward(grads, d_x, d_g, d_t)


def reduce_to_shared_weights(params):
    """Tie the three offset matrices of every direction to their first slot.

    With the global and topic matrices zeroed the layer then reduces to a
    single-shared-recurrent-weight network; used by the equivalence tests.
    """
    params.w_rec[:, 1:] = params.w_rec[:, :1]
    return params
