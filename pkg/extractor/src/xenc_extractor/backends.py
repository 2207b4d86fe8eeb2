"""Model backends: anything that turns words or frames into layer states.

Backends wrap a transformer and expose per-layer hidden states; the
extraction logic (windowing, averaging, pairing) lives in the sibling
modules and is backend-agnostic. ``tiny_text_backend`` /
``tiny_image_backend`` build small deterministically-initialized towers
for tests and offline runs; ``HFTextBackend.from_pretrained`` /
``HFImageBackend.from_pretrained`` load real checkpoints.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

from xenc.errors import ArgError

_SPECIAL = {"bos": 0, "pad": 1, "eos": 2}
_FIRST_WORD_ID = 5


class HashWordTokenizer:
    """Deterministic one-token-per-word vocabulary via hashing.

    Stands in for a trained subword tokenizer when no checkpoint is
    available; adequate for feature extraction with random-init towers.
    """

    def __init__(self, vocab_size: int):
        if vocab_size <= _FIRST_WORD_ID:
            raise ArgError("vocab too small")
        self.vocab_size = vocab_size

    def word_ids(self, words: list[str]) -> list[list[int]]:
        span = self.vocab_size - _FIRST_WORD_ID
        out = []
        for word in words:
            digest = hashlib.sha256(word.lower().encode("utf-8")).digest()
            out.append([_FIRST_WORD_ID + int.from_bytes(digest[:4], "little") % span])
        return out


class HFTextBackend:
    """Text tower with per-word hidden states (sub-tokens mean-pooled)."""

    def __init__(self, model, tokenizer, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.hidden_size = model.config.hidden_size
        # hidden_states = embeddings + one entry per transformer layer
        self.n_layers = model.config.num_hidden_layers

    @classmethod
    def from_pretrained(cls, name_or_path: str, device: str = "cpu"):
        from transformers import AutoModel, AutoTokenizer
        tok = AutoTokenizer.from_pretrained(name_or_path)
        model = AutoModel.from_pretrained(name_or_path, output_hidden_states=True)
        return cls(model, tok, device=device)

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer <= self.n_layers:
            raise ArgError(f"layer {layer} out of range [0, {self.n_layers}]")

    def _word_spans(self, words: list[str]):
        if isinstance(self.tokenizer, HashWordTokenizer):
            per_word = self.tokenizer.word_ids(words)
        else:
            per_word = [self.tokenizer(w, add_special_tokens=False)["input_ids"]
                        for w in words]
            per_word = [ids if ids else [self.tokenizer.unk_token_id]
                        for ids in per_word]
        ids = [self._bos_id()]
        spans = []
        for tok_ids in per_word:
            spans.append((len(ids), len(ids) + len(tok_ids)))
            ids.extend(tok_ids)
        ids.append(self._eos_id())
        return ids, spans

    def _bos_id(self) -> int:
        return getattr(self.tokenizer, "bos_token_id", None) or _SPECIAL["bos"]

    def _eos_id(self) -> int:
        return getattr(self.tokenizer, "eos_token_id", None) or _SPECIAL["eos"]

    @torch.no_grad()
    def word_states(self, words: list[str], layer: int) -> np.ndarray:
        """(n_words, hidden) states at one layer, sub-tokens mean-pooled."""
        self._check_layer(layer)
        if not words:
            raise ArgError("empty word list")
        ids, spans = self._word_spans(words)
        batch = torch.tensor([ids], dtype=torch.long, device=self.device)
        out = self.model(input_ids=batch, output_hidden_states=True)
        states = out.hidden_states[layer][0]
        rows = [states[a:b].mean(dim=0) for a, b in spans]
        return torch.stack(rows).cpu().numpy().astype(np.float64)

    @torch.no_grad()
    def sequence_state(self, words: list[str], layer: int) -> np.ndarray:
        """(hidden,) caption-level state: mean over word states."""
        return self.word_states(words, layer).mean(axis=0)


class HFImageBackend:
    """Vision tower returning the class-token state per frame."""

    def __init__(self, model, image_size: int, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.image_size = image_size
        self.device = device
        self.hidden_size = model.config.hidden_size
        self.n_layers = model.config.num_hidden_layers

    @classmethod
    def from_pretrained(cls, name_or_path: str, device: str = "cpu"):
        from transformers import AutoModel
        model = AutoModel.from_pretrained(name_or_path, output_hidden_states=True)
        return cls(model, image_size=model.config.image_size, device=device)

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer <= self.n_layers:
            raise ArgError(f"layer {layer} out of range [0, {self.n_layers}]")

    def _preprocess(self, frames: np.ndarray) -> torch.Tensor:
        frames = np.asarray(frames)
        if frames.ndim == 3:
            frames = frames[None]
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ArgError("frames must be (n, H, W, 3)")
        x = torch.from_numpy(frames.astype(np.float32) / 255.0)
        x = x.permute(0, 3, 1, 2)
        size = self.image_size
        if x.shape[-2:] != (size, size):
            x = torch.nn.functional.interpolate(x, size=(size, size),
                                                mode="bilinear",
                                                align_corners=False)
        return ((x - 0.5) / 0.5).to(self.device)

    @torch.no_grad()
    def frame_states(self, frames: np.ndarray, layer: int,
                     batch_size: int = 32) -> np.ndarray:
        """(n_frames, hidden) class-token states at one layer."""
        self._check_layer(layer)
        pixels = self._preprocess(frames)
        if pixels.shape[0] == 0:
            raise ArgError("no frames")
        rows = []
        for start in range(0, pixels.shape[0], batch_size):
            out = self.model(pixel_values=pixels[start:start + batch_size],
                             output_hidden_states=True)
            rows.append(out.hidden_states[layer][:, 0])
        return torch.cat(rows).cpu().numpy().astype(np.float64)


def tiny_text_backend(seed: int = 0, hidden: int = 32, layers: int = 3,
                      vocab: int = 997) -> HFTextBackend:
    """Small random-init RoBERTa tower; deterministic for a fixed seed."""
    from transformers import RobertaConfig, RobertaModel
    torch.manual_seed(seed)
    config = RobertaConfig(vocab_size=vocab, hidden_size=hidden,
                           num_hidden_layers=layers, num_attention_heads=4,
                           intermediate_size=hidden * 4,
                           max_position_embeddings=130, type_vocab_size=1,
                           pad_token_id=_SPECIAL["pad"])
    return HFTextBackend(RobertaModel(config), HashWordTokenizer(vocab))


def tiny_image_backend(seed: int = 0, hidden: int = 32, layers: int = 3,
                       image_size: int = 32) -> HFImageBackend:
    """Small random-init ViT tower; deterministic for a fixed seed."""
    from transformers import ViTConfig, ViTModel
    torch.manual_seed(seed)
    config = ViTConfig(hidden_size=hidden, num_hidden_layers=layers,
                       num_attention_heads=4, intermediate_size=hidden * 4,
                       image_size=image_size, patch_size=image_size // 4,
                       num_channels=3)
    return HFImageBackend(ViTModel(config), image_size=image_size)
