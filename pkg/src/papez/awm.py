"""Recurrent AWM transformer layer.

Attention runs per chunk of ``K`` sequence tokens with the ``M`` memory
tokens prepended to every chunk; afterwards each chunk's copy of the memory
is averaged.  The feed-forward block runs once over the unchunked sequence
plus the averaged memory and carries an extra output channel whose sigmoid
is the token's halting probability.  Linear weights are shared across
recurrence steps; only the layer-norm affine pairs change with the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audit import OpCounter
from .autodiff import Parameter, Tensor
from .halting import HaltingState
from .nn import Linear, Module, PReLU, StepLayerNorm


@dataclass(frozen=True)
class ChunkLayout:
    length: int
    chunk_size: int

    @property
    def num_chunks(self) -> int:
        return -(-self.length // self.chunk_size)

    @property
    def pad_len(self) -> int:
        return self.num_chunks * self.chunk_size - self.length

    @property
    def pad_mask(self) -> np.ndarray:
        """``C x K`` boolean, True on padded slots."""
        mask = np.zeros(self.num_chunks * self.chunk_size, dtype=bool)
        mask[self.length:] = True
        return mask.reshape(self.num_chunks, self.chunk_size)

    def chunk_of(self, token_index: np.ndarray) -> np.ndarray:
        return np.asarray(token_index) // self.chunk_size


def chunk(seq: Tensor, chunk_size: int) -> tuple[Tensor, ChunkLayout]:
    """Zero-pad ``T x H`` to a multiple of ``chunk_size`` and fold into ``C x K x H``."""
    if chunk_size < 1:
        raise ValueError("chunk size must be >= 1")
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError(f"expected a non-empty T x H sequence, got {seq.shape}")
    layout = ChunkLayout(seq.shape[0], chunk_size)
    if layout.pad_len:
        pad = Tensor(np.zeros((layout.pad_len, seq.shape[1]), dtype=seq.dtype))
        seq = ad.concat([seq, pad])
    return ad.reshape(seq, (layout.num_chunks, chunk_size, -1)), layout


def unchunk(chunks: Tensor, layout: ChunkLayout) -> Tensor:
    flat = ad.reshape(chunks, (layout.num_chunks * layout.chunk_size, -1))
    return flat[:layout.length] if layout.pad_len else flat


def average_memory(per_chunk_mem: Tensor) -> Tensor:
    """Slotwise mean over the chunk axis of ``C x M x H``."""
    if per_chunk_mem.shape[0] < 1:
        raise ValueError("need at least one chunk")
    return ad.mean(per_chunk_mem, axis=0)


class AWMLayer(Module):
    def __init__(self, hidden: int, heads: int, ffn_hidden: int, n_memory: int, max_steps: int,
                 chunk_size: int, rng: np.random.Generator, halt_bias_init: float = 0.0):
        if hidden % heads:
            raise ValueError(f"hidden={hidden} not divisible by heads={heads}")
        self.hidden, self.heads, self.chunk_size = hidden, heads, chunk_size
        self.ln_attn = StepLayerNorm(hidden, max_steps)
        self.wq = Linear(hidden, hidden, rng, bias=False)
        self.wk = Linear(hidden, hidden, rng, bias=False)
        self.wv = Linear(hidden, hidden, rng, bias=False)
        self.wo = Linear(hidden, hidden, rng, bias=False)
        self.ln_ffn = StepLayerNorm(hidden, max_steps)
        self.ffn1 = Linear(hidden, ffn_hidden, rng)
        self.act = PReLU()
        self.ffn2 = Linear(ffn_hidden, hidden + 1, rng)
        self.ffn2.bias.data[hidden] = halt_bias_init
        self.memory_init = Parameter(rng.normal(0.0, 0.02, size=(n_memory, hidden)))

    @property
    def n_memory(self) -> int:
        return self.memory_init.shape[0]

    @property
    def max_steps(self) -> int:
        return self.ln_attn.steps

    def initial_memory(self) -> Tensor:
        return self.memory_init

    def _heads(self, x: Tensor) -> Tensor:
        rows = x.shape[0]
        return ad.transpose(ad.reshape(x, (rows, self.heads, -1)), (1, 0, 2))

    def attend_with_memory(self, h: Tensor, memory: Tensor, step: int, computing: np.ndarray,
                           counter: OpCounter | None = None) -> tuple[Tensor, Tensor]:
        """Chunked attention with memory tokens prepended to every chunk.

        Queries come from the memory and from the ``computing`` sequence
        tokens; every real token of the chunk (halted ones included) serves
        as key/value.  Returns the residual output for the computing tokens
        (``A x H`` in index order) and the per-chunk memory (``C x M x H``).
        """
        H, M, K = self.hidden, self.n_memory, self.chunk_size
        x = self.ln_attn(h, step)
        xm = self.ln_attn(memory, step)
        idx = np.flatnonzero(computing)
        keys, layout = chunk(self.wk(x), K)
        values, _ = chunk(self.wv(x), K)
        k_mem, v_mem, q_mem = self.wk(xm), self.wv(xm), self.wq(xm)
        q_seq = self.wq(ad.take(x, idx))
        bounds = np.searchsorted(idx, np.arange(layout.num_chunks + 1) * K)
        key_mask = np.concatenate([np.zeros((layout.num_chunks, M), dtype=bool), layout.pad_mask], axis=1)
        scale = 1.0 / np.sqrt(H // self.heads)

        seq_ctx, mem_ctx = [], []
        for c in range(layout.num_chunks):
            a0, a1 = bounds[c], bounds[c + 1]
            q = ad.concat([q_mem, q_seq[a0:a1]])
            kc = ad.concat([k_mem, keys[c]])
            vc = ad.concat([v_mem, values[c]])
            scores = ad.matmul(self._heads(q), ad.transpose(self._heads(kc), (0, 2, 1))) * scale
            attn = ad.softmax(scores, axis=-1, mask=~key_mask[c])
            ctx = ad.matmul(attn, self._heads(vc))
            ctx = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (q.shape[0], H))
            mem_ctx.append(ctx[:M])
            seq_ctx.append(ctx[M:])
            if counter is not None:
                counter.record_attention(queries=q.shape[0], keys=kc.shape[0], hidden=H,
                                         seq_queries=a1 - a0, heads=self.heads)
        seq_out = ad.take(h, idx) + self.wo(ad.concat(seq_ctx))
        per_chunk_mem = ad.reshape(memory, (1, M, H)) + self.wo(ad.stack(mem_ctx))
        if counter is not None:
            counter.record_projections(layout=layout, n_memory=M, seq_queries=idx.size, hidden=H)
        return seq_out, per_chunk_mem

    def ffn_piggyback(self, tokens: Tensor, step: int, n_prob: int,
                      counter: OpCounter | None = None) -> tuple[Tensor, Tensor]:
        """Residual FFN over ``tokens``; the extra channel of the first ``n_prob`` rows gives ``p``."""
        H = self.hidden
        z = self.act(self.ffn1(self.ln_ffn(tokens, step)))
        out = self.ffn2(z)
        new_tokens = tokens + out[:, :H]
        p = ad.sigmoid(out[:n_prob, H])
        if counter is not None:
            counter.record_ffn(tokens=tokens.shape[0], hidden=H, ffn_hidden=self.ffn1.weight.shape[1])
        return new_tokens, p

    def forward(self, h: Tensor, memory: Tensor, state: HaltingState, computing: np.ndarray | None = None,
                counter: OpCounter | None = None,
                p_override: float | None = None) -> tuple[Tensor, Tensor, Tensor, HaltingState]:
        """One recurrence step; returns ``(h', memory', p, state)``.

        ``computing`` defaults to the tokens the halting state still needs
        transformed.  Rows of ``h`` outside it are passed through unchanged.
        ``p_override`` replaces the estimator output with a constant.
        """
        step = state.step + 1
        if step > self.max_steps:
            raise RuntimeError(f"layer has affine pairs for {self.max_steps} steps, asked for step {step}")
        if computing is None:
            computing = state.computing
        idx = np.flatnonzero(computing)
        seq_out, per_chunk_mem = self.attend_with_memory(h, memory, step, computing, counter)
        mem_avg = average_memory(per_chunk_mem)
        tokens, p_comp = self.ffn_piggyback(ad.concat([seq_out, mem_avg]), step, idx.size, counter)
        if p_override is not None:
            p_comp = Tensor(np.full(idx.size, p_override, dtype=h.dtype))
        h_next = ad.put_rows(h, idx, tokens[:idx.size])
        memory_next = tokens[idx.size:]
        p_full = ad.put_rows(Tensor(np.zeros(h.shape[0], dtype=h.dtype)), idx, p_comp)
        if counter is not None:
            counter.end_iteration(int(idx.size))
        state.step_update(h_next, p_full)
        return h_next, memory_next, p_full, state

    __call__ = forward
