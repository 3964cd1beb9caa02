"""Minimal recurrent network substrate for the learned-gain filters.

One architecture serves every gain estimator: a tanh input embedding, a
two-gate (update/reset) gated recurrent cell, and a linear projection whose
output is reshaped row-major into a gain matrix. Forward steps optionally
record a tape of activations; :func:`backward_through_time` replays the tape
in reverse to produce exact parameter gradients of any scalar loss whose
per-step output gradients are supplied.

Everything is plain float64 numpy; there is no ML framework underneath.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Params = dict[str, np.ndarray]

# When enabled, every forward step asserts its activations are finite.
DEBUG_FINITE = False

_NET_STREAM = 0x6A17


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign to stay overflow-free for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class StepTape:
    """Activations recorded by one forward step, consumed by the backward pass."""

    x: np.ndarray       # (B, D) input features
    h_prev: np.ndarray  # (B, H)
    e: np.ndarray       # (B, H) embedded input
    z: np.ndarray       # (B, H) update gate
    r: np.ndarray       # (B, H) reset gate
    c: np.ndarray       # (B, H) candidate state
    h: np.ndarray       # (B, H) new hidden state


PARAM_NAMES = ("embed.W", "embed.b", "gru.Wz", "gru.bz", "gru.Wr", "gru.br",
               "gru.Wc", "gru.bc", "out.W", "out.b")


class RecurrentGainNet:
    """Recurrent estimator emitting an ``output_rows x output_cols`` matrix per step."""

    def __init__(self, input_dim: int, hidden_dim: int, output_rows: int,
                 output_cols: int, params: Params):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_rows = output_rows
        self.output_cols = output_cols
        self.params = params
        self.hidden: np.ndarray | None = None

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, output_rows: int,
               output_cols: int, seed: int) -> "RecurrentGainNet":
        """Seeded uniform(+-1/sqrt(fan_in)) initialization of all parameters."""
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((seed, _NET_STREAM))))
        h, d = hidden_dim, input_dim
        out = output_rows * output_cols

        def init(fan_in: int, *shape) -> np.ndarray:
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params: Params = {
            "embed.W": init(d, d, h),
            "embed.b": init(d, h),
            "gru.Wz": init(2 * h, 2 * h, h),
            "gru.bz": init(2 * h, h),
            "gru.Wr": init(2 * h, 2 * h, h),
            "gru.br": init(2 * h, h),
            "gru.Wc": init(2 * h, 2 * h, h),
            "gru.bc": init(2 * h, h),
            "out.W": init(h, h, out),
            "out.b": init(h, out),
        }
        return cls(input_dim, hidden_dim, output_rows, output_cols, params)

    # -- stateful single-stream interface -----------------------------------

    def reset_hidden(self, batch_size: int | None = None) -> None:
        """Zero the hidden state; call at every trajectory start."""
        shape = (self.hidden_dim,) if batch_size is None else (batch_size, self.hidden_dim)
        self.hidden = np.zeros(shape)

    def forward_step(self, features: np.ndarray) -> np.ndarray:
        """Advance the hidden state one step and return the output matrix.

        Accepts a single feature vector or a (batch, input_dim) array; the
        output has matching leading shape.
        """
        features = np.asarray(features, dtype=float)
        single = features.ndim == 1
        x = features[None, :] if single else features
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"expected {self.input_dim} features, got {x.shape[-1]}")
        if self.hidden is None or self.hidden.shape != (x.shape[0], self.hidden_dim):
            self.hidden = np.zeros((x.shape[0], self.hidden_dim))
        out, self.hidden, _ = step(self.params, x, self.hidden, record=False)
        out = out.reshape(x.shape[0], self.output_rows, self.output_cols)
        return out[0] if single else out

    def clone_params(self) -> Params:
        return {k: v.copy() for k, v in self.params.items()}


def step(params: Params, x: np.ndarray, h_prev: np.ndarray, record: bool):
    """One recurrent step. Returns (output, new hidden, tape-or-None)."""
    e = np.tanh(x @ params["embed.W"] + params["embed.b"])
    az = np.concatenate([e, h_prev], axis=-1)
    z = _sigmoid(az @ params["gru.Wz"] + params["gru.bz"])
    r = _sigmoid(az @ params["gru.Wr"] + params["gru.br"])
    ac = np.concatenate([e, r * h_prev], axis=-1)
    c = np.tanh(ac @ params["gru.Wc"] + params["gru.bc"])
    h = (1.0 - z) * h_prev + z * c
    out = h @ params["out.W"] + params["out.b"]
    if DEBUG_FINITE and not (np.all(np.isfinite(h)) and np.all(np.isfinite(out))):
        raise FloatingPointError("non-finite activation in recurrent step")
    tape = StepTape(x, h_prev, e, z, r, c, h) if record else None
    return out, h, tape


def zero_grads(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def backward_through_time(params: Params, tape: list[StepTape],
                          output_grads: list[np.ndarray]) -> Params:
    """Exact reverse-mode gradients through an unrolled sequence.

    ``output_grads[t]`` is the loss gradient with respect to the step-``t``
    output, shaped ``(B, rows*cols)`` or ``(B, rows, cols)``. Gradients are
    accumulated over all steps and batch rows.
    """
    if len(tape) != len(output_grads):
        raise ValueError(
            f"tape has {len(tape)} steps but {len(output_grads)} output gradients given")
    grads = zero_grads(params)
    if not tape:
        return grads
    hidden_dim = tape[0].h.shape[-1]
    dh_next = np.zeros_like(tape[0].h)
    w_out = params["out.W"]
    w_z, w_r, w_c = params["gru.Wz"], params["gru.Wr"], params["gru.Wc"]
    for rec, dout in zip(reversed(tape), reversed(output_grads)):
        do = np.asarray(dout, dtype=float).reshape(rec.h.shape[0], -1)
        grads["out.W"] += rec.h.T @ do
        grads["out.b"] += do.sum(axis=0)
        dh = do @ w_out.T + dh_next

        dz = dh * (rec.c - rec.h_prev)
        dc = dh * rec.z
        dh_prev = dh * (1.0 - rec.z)

        dc_pre = dc * (1.0 - rec.c ** 2)
        ac = np.concatenate([rec.e, rec.r * rec.h_prev], axis=-1)
        grads["gru.Wc"] += ac.T @ dc_pre
        grads["gru.bc"] += dc_pre.sum(axis=0)
        dac = dc_pre @ w_c.T
        de = dac[:, :hidden_dim]
        drh = dac[:, hidden_dim:]
        dr = drh * rec.h_prev
        dh_prev += drh * rec.r

        az = np.concatenate([rec.e, rec.h_prev], axis=-1)
        dz_pre = dz * rec.z * (1.0 - rec.z)
        grads["gru.Wz"] += az.T @ dz_pre
        grads["gru.bz"] += dz_pre.sum(axis=0)
        daz = dz_pre @ w_z.T
        de = de + daz[:, :hidden_dim]
        dh_prev += daz[:, hidden_dim:]

        dr_pre = dr * rec.r * (1.0 - rec.r)
        grads["gru.Wr"] += az.T @ dr_pre
        grads["gru.br"] += dr_pre.sum(axis=0)
        dar = dr_pre @ w_r.T
        de = de + dar[:, :hidden_dim]
        dh_prev += dar[:, hidden_dim:]

        de_pre = de * (1.0 - rec.e ** 2)
        grads["embed.W"] += rec.x.T @ de_pre
        grads["embed.b"] += de_pre.sum(axis=0)
        dh_next = dh_prev
    return grads


def run_sequence(params: Params, features: np.ndarray, record: bool = False):
    """Forward a (T, B, D) feature sequence from a zero hidden state.

    Returns ``(outputs (T, B, out), tapes)``. Used by gradient checks that
    replay a recorded rollout against perturbed parameters.
    """
    steps, batch, _ = features.shape
    hidden = np.zeros((batch, params["gru.bz"].shape[0]))
    outputs = []
    tapes: list[StepTape] = []
    for t in range(steps):
        out, hidden, tape = step(params, features[t], hidden, record)
        outputs.append(out)
        if record:
            tapes.append(tape)
    return np.stack(outputs), tapes
