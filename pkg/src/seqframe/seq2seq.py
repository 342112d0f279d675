"""Attention-based LSTM encoder-decoder task."""

from __future__ import annotations

import numpy as np

from seqframe import tensor as tn
from seqframe.base_model import BaseTask
from seqframe.layers import RNN, AdditiveAttention, Embedding, LSTMCell, Softmax
from seqframe.nested_map import NestedMap
from seqframe.runners.beam_search import beam_search
from seqframe.tensor import Tensor


class Seq2SeqTask(BaseTask):
    """Source embedding + LSTM encoder; LSTM decoder with additive attention.

    The decoder consumes ``[embedding(prev token), previous context]`` and
    predicts from ``[decoder output, current context]``.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("vocab_size", 16, "Shared source/target vocab size.")
        p.define("emb_dim", 32, "Embedding depth.")
        p.define("enc_dim", 32, "Encoder LSTM depth.")
        p.define("dec_dim", 32, "Decoder LSTM depth.")
        p.define("atten_dim", 32, "Additive attention depth.")
        p.define("bos_id", 1, "Decoder start token.")
        p.define("eos_id", 2, "End-of-sequence token.")
        p.define("max_decode_len", 20, "Decoding length limit (tokens incl. EOS).")
        p.define("softmax", Softmax.Params(), "Output layer template; may be a quantized wrapper.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        emb = Embedding.Params().set(vocab_size=p.vocab_size, embedding_dim=p.emb_dim)
        self.create_child("enc_emb", emb)
        cell = LSTMCell.Params().set(num_input_nodes=p.emb_dim, num_output_nodes=p.enc_dim)
        self.create_child("enc", RNN.Params().set(cell=cell))
        self.create_child("dec_emb", emb)
        self.create_child(
            "dec_cell",
            LSTMCell.Params().set(num_input_nodes=p.emb_dim + p.enc_dim, num_output_nodes=p.dec_dim),
        )
        self.create_child(
            "atten",
            AdditiveAttention.Params().set(source_dim=p.enc_dim, query_dim=p.dec_dim, hidden_dim=p.atten_dim),
        )
        sp = p.softmax.copy()
        target = sp.body if "body" in sp and sp.body is not None else sp
        target.set(input_dim=p.dec_dim + p.enc_dim, num_classes=p.vocab_size)
        self.create_child("softmax", sp)

    def _encode(self, theta, src_ids, src_paddings) -> NestedMap:
        x = self.enc_emb.fprop(theta.enc_emb, src_ids)
        enc = self.enc.fprop(theta.enc, x, src_paddings)
        return self.atten.pack_source(theta.atten, enc.outputs, src_paddings)

    def _dec_step(self, theta, packed, state, ctx, x_emb):
        state = self.dec_cell.fprop(theta.dec_cell, state, tn.concat([x_emb, ctx], axis=1))
        ctx, _ = self.atten.compute_context(theta.atten, packed, state.m)
        return state, ctx, tn.concat([state.m, ctx], axis=1)

    def compute_metrics(self, theta, batch: NestedMap) -> NestedMap:
        src_len = _true_len(batch.src_paddings)
        tgt_len = _true_len(batch.paddings)
        src_ids = batch.src_ids[:, :src_len]
        src_pad = batch.src_paddings[:, :src_len]
        b = src_ids.shape[0]
        packed = self._encode(theta, src_ids, src_pad)
        state = self.dec_cell.zero_state(b)
        ctx = Tensor(np.zeros((b, self.params.enc_dim), self.dtype))
        dec_in = self.dec_emb.fprop(theta.dec_emb, batch.ids[:, :tgt_len])
        outs = []
        for t in range(tgt_len):
            state, ctx, out = self._dec_step(theta, packed, state, ctx, tn.take(dec_in, t, axis=1))
            outs.append(out)
        feats = tn.reshape(tn.stack(outs, axis=1), (b * tgt_len, -1))
        logits = self.softmax.fprop(theta.softmax, feats)
        total, weight = tn.cross_entropy(
            logits,
            batch.labels[:, :tgt_len].reshape(-1),
            batch.weights[:, :tgt_len].reshape(-1).astype(self.dtype),
        )
        return NestedMap(loss=(total, weight))

    # Step-wise decoding, shared by the decoder runner and exported inference.

    def init_decode_state(self, theta, src_ids) -> NestedMap:
        src_ids = np.asarray(src_ids, np.int32).reshape(1, -1)
        packed = self._encode(theta, src_ids, np.zeros(src_ids.shape, self.dtype))
        return NestedMap(
            packed=packed,
            rnn=self.dec_cell.zero_state(1),
            ctx=Tensor(np.zeros((1, self.params.enc_dim), self.dtype)),
        )

    def decode_step(self, theta, state: NestedMap, prev_id: int):
        x = self.dec_emb.fprop(theta.dec_emb, np.asarray([prev_id]))
        rnn, ctx, out = self._dec_step(theta, state.packed, state.rnn, state.ctx, x)
        logits = self.softmax.fprop(theta.softmax, out)
        return logits.value[0], NestedMap(packed=state.packed, rnn=rnn, ctx=ctx)

    def decode_ids(self, theta, src_ids, beam_size: int | None = None) -> list[int]:
        """Decodes one source sequence; the result excludes the final EOS."""
        p = self.params
        beam = beam_size or p.eval_beam_size
        ids, _ = beam_search(
            lambda s, prev: self.decode_step(theta, s, prev),
            self.init_decode_state(theta, src_ids),
            p.bos_id,
            p.eos_id,
            beam,
            p.max_decode_len,
        )
        return ids[:-1] if ids and ids[-1] == p.eos_id else ids

    def decode(self, theta, batch: NestedMap) -> list:
        out = []
        for row, pad in zip(batch.src_ids, batch.src_paddings):
            n = int((np.asarray(pad) == 0).sum())
            out.append(self.decode_ids(theta, row[:n]))
        return out

    def references(self, batch: NestedMap) -> list:
        out = []
        for labels, w in zip(batch.labels, batch.weights):
            n = int((np.asarray(w) > 0).sum())
            ref = [int(x) for x in labels[:n]]
            out.append(ref[:-1] if ref and ref[-1] == self.params.eos_id else ref)
        return out


def _true_len(paddings) -> int:
    """Longest unpadded prefix in a batch of suffix-padded rows."""
    valid = (np.asarray(paddings) == 0).sum(axis=1)
    return max(1, int(valid.max())) if valid.size else 1
