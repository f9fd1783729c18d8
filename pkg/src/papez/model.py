"""End-to-end separation model: encoder, masking network, shared decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audit import OpCounter
from .autodiff import Tensor
from .awm import AWMLayer, ChunkLayout
from .config import PapezConfig
from .frontend import Decoder, Encoder, Waveform, align_length
from .halting import HaltingState
from .nn import Linear, Module, PReLU


@dataclass
class MaskSet:
    masks: Tensor  # S x E x F, values in (-1, 1)

    @property
    def speakers(self) -> int:
        return self.masks.shape[0]


@dataclass
class ForwardTrace:
    state: HaltingState
    counter: OpCounter
    layout: ChunkLayout
    config: PapezConfig

    @property
    def mean_depth(self) -> float:
        return float(self.state.depth.mean())


class MaskingNetwork(Module):
    def __init__(self, cfg: PapezConfig, rng: np.random.Generator):
        E, H = cfg.enc_channels, cfg.hidden
        self.embed1 = Linear(E, cfg.embed_width, rng)
        self.embed_act = PReLU()
        # the extra output channel mirrors the piggybacked estimator; it is discarded
        self.embed2 = Linear(cfg.embed_width, H + 1, rng)
        self.layer = AWMLayer(H, cfg.heads, cfg.ffn_hidden, cfg.n_memory, cfg.max_steps,
                              cfg.chunk_size, rng, halt_bias_init=cfg.halt_bias_init)
        self.mask1 = Linear(H, cfg.mask_width, rng)
        self.mask_act = PReLU()
        self.mask2 = Linear(cfg.mask_width, cfg.speakers * E, rng)


class Papez(Module):
    def __init__(self, cfg: PapezConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg.enc_channels, cfg.enc_kernel, cfg.enc_stride, rng)
        self.masking = MaskingNetwork(cfg, rng)
        self.decoder = Decoder(cfg.enc_channels, cfg.enc_kernel, cfg.enc_stride, rng)
        self.assign_names()

    @property
    def dtype(self):
        return self.encoder.conv_w.dtype

    # -- stages -----------------------------------------------------------
    def embed(self, rep: Tensor) -> Tensor:
        """``E x F`` representation -> ``F x H`` tokens."""
        m = self.masking
        out = m.embed2(m.embed_act(m.embed1(ad.transpose(rep, (1, 0)))))
        return out[:, :self.cfg.hidden]

    def masking_forward(self, tokens: Tensor, counter: OpCounter | None = None,
                        p_override: float | None = None) -> tuple[Tensor, HaltingState]:
        """Iterate the shared layer until every token halted or ``max_steps`` ran.

        Returns the halting-weighted output ``y`` and the final state.
        """
        cfg = self.cfg
        layer = self.masking.layer
        n_tokens = tokens.shape[0]
        state = HaltingState(tokens, cfg.max_steps, cfg.p_th, cfg.halting, freeze=cfg.pruning)
        memory = layer.initial_memory()
        h = tokens
        everyone = np.ones(n_tokens, dtype=bool)
        while state.step < cfg.max_steps:
            if cfg.pruning:
                if state.done:
                    break
                computing = state.computing
                if not computing.any():
                    # only pending corrections: no layer work needed
                    state.step_update(state.h, Tensor(np.zeros(n_tokens, dtype=h.dtype)))
                    continue
            else:
                computing = everyone
            h, memory, _, state = layer(h, memory, state, computing=computing, counter=counter,
                                        p_override=p_override)
        if state.step == cfg.max_steps:
            state.finalize_remainder()
        return state.y, state

    def generate_masks(self, y: Tensor) -> MaskSet:
        m = self.masking
        out = ad.tanh(m.mask2(m.mask_act(m.mask1(y))))
        frames = y.shape[0]
        masks = ad.reshape(out, (frames, self.cfg.speakers, self.cfg.enc_channels))
        return MaskSet(ad.transpose(masks, (1, 2, 0)))

    def forward(self, samples: Tensor | np.ndarray, counter: OpCounter | None = None,
                p_override: float | None = None) -> tuple[list[Tensor], ForwardTrace]:
        if not isinstance(samples, Tensor):
            samples = Tensor(samples, dtype=self.dtype)
        if samples.ndim != 1:
            raise ValueError(f"mono input expected, got shape {samples.shape}")
        counter = counter if counter is not None else OpCounter()
        rep = self.encoder(samples)
        tokens = self.embed(rep)
        y, state = self.masking_forward(tokens, counter, p_override)
        masks = self.generate_masks(y).masks
        length = samples.shape[0]
        estimates = [align_length(self.decoder(rep * masks[s]), length) for s in range(self.cfg.speakers)]
        trace = ForwardTrace(state, counter, ChunkLayout(tokens.shape[0], self.cfg.chunk_size), self.cfg)
        return estimates, trace

    __call__ = forward


def separate(wave: Waveform, model: Papez, p_override: float | None = None) -> tuple[list[Waveform], ForwardTrace]:
    """Split a mono mixture into ``speakers`` waveforms of the input length."""
    with ad.no_grad():
        estimates, trace = model(Tensor(wave.samples, dtype=model.dtype), p_override=p_override)
    return [Waveform(est.data.astype(np.float64), wave.sample_rate) for est in estimates], trace
