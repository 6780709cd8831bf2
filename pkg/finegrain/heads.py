"""
Action classifier and caption decoder on top of the shared encoding h, joint loss,
and :class:`JointModel` bundling encoder and heads in one versioned checkpoint.
"""

import logging

import torch
from torch import nn

from .utils import BaseClass
from .io import get_filetype
from .corpus import PAD, BOS, EOS, TokenSequence
from .encoder import EncoderConfig, build_encoder


logger = logging.getLogger('heads')

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):

    """Checkpoint version or configuration incompatible with the requested model."""


class ClassifierHead(nn.Module):

    """Affine map from the encoding (dimension D) to K class logits."""

    def __init__(self, embedding_dim, num_classes):
        super().__init__()
        self.projection = nn.Linear(embedding_dim, num_classes)

    @property
    def num_classes(self):
        return self.projection.out_features

    def forward(self, h):
        return self.projection(h)


def classify(h, head):
    """Class probabilities (softmax of the logits of ``head``) for encodings ``h``."""
    return torch.softmax(head(h), dim=-1)


def check_token_batch(tokens):
    """Check each row of ``tokens`` starts with BOS, contains exactly one EOS, and no PAD before EOS; return EOS positions."""
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ValueError('Expected token batch of shape (B, L >= 2), got {}'.format(tuple(tokens.shape)))
    if (tokens[:, 0] != BOS).any():
        raise ValueError('Token sequences must begin with BOS')
    is_eos = tokens == EOS
    if (is_eos.sum(dim=1) != 1).any():
        raise ValueError('Token sequences must contain exactly one EOS')
    eos = is_eos.to(torch.int64).argmax(dim=1)
    positions = torch.arange(tokens.shape[1], device=tokens.device)
    if ((tokens == PAD) & (positions[None, :] < eos[:, None])).any():
        raise ValueError('Token sequences must not contain PAD before EOS')
    return eos


class CaptionDecoder(nn.Module):
    """
    Two-layer LSTM caption decoder conditioned on the encoding h.

    Parameters
    ----------
    vocab_size : int
        Vocabulary size |V|.

    encoding_dim : int
        Dimension D of the encoding.

    embedding_dim : int, default=256
        Token embedding width E.

    hidden : int, default=512
        LSTM hidden size.

    condition : str, default='initial'
        'initial': h is linearly projected to the initial (hidden, cell) states of both layers;
        'every_step': additionally, h is concatenated to the token embedding at every step.
    """
    num_layers = 2

    def __init__(self, vocab_size, encoding_dim, embedding_dim=256, hidden=512, condition='initial'):
        super().__init__()
        if condition not in ('initial', 'every_step'):
            raise ValueError('Unknown condition {}; choose from ["initial", "every_step"]'.format(condition))
        self.condition = condition
        self.hidden = hidden
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=PAD)
        self.init_proj = nn.Linear(encoding_dim, 2 * self.num_layers * hidden)
        input_size = embedding_dim + (encoding_dim if condition == 'every_step' else 0)
        self.lstm = nn.LSTM(input_size, hidden, num_layers=self.num_layers, batch_first=True)
        self.output = nn.Linear(hidden, vocab_size)

    @property
    def vocab_size(self):
        return self.output.out_features

    def config(self):
        return {'vocab_size': self.vocab_size, 'embedding_dim': self.embedding.embedding_dim, 'hidden': self.hidden, 'condition': self.condition}

    def init_state(self, h):
        state = self.init_proj(h).reshape(h.shape[0], 2, self.num_layers, self.hidden)
        return state[:, 0].transpose(0, 1).contiguous(), state[:, 1].transpose(0, 1).contiguous()

    def _inputs(self, tokens, h):
        inputs = self.embedding(tokens)
        if self.condition == 'every_step':
            inputs = torch.cat([inputs, h[:, None, :].expand(-1, tokens.shape[1], -1)], dim=-1)
        return inputs

    def forward(self, h, tokens, state=None):
        """Logits (B, L, |V|) of the next token, given input tokens (B, L) (teacher forcing)."""
        if state is None:
            state = self.init_state(h)
        output, state = self.lstm(self._inputs(tokens, h), state)
        return self.output(output), state

    def token_log_probs(self, h, tokens):
        """Log-probabilities (B, L - 1) of tokens[:, 1:] given the previous ground-truth tokens."""
        logits, _ = self(h, tokens[:, :-1])
        return torch.log_softmax(logits, dim=-1).gather(-1, tokens[:, 1:, None])[..., 0]

    def caption_nll(self, h, tokens, reduction='mean'):
        """
        Negative log-probability of token sequences (B, L) under teacher forcing, summed from the first
        content token through EOS; positions after EOS are excluded.

        Parameters
        ----------
        h : torch.Tensor
            Encodings (B, D).

        tokens : torch.Tensor
            Token indices (B, L): BOS, content, EOS, PAD...

        reduction : str, default='mean'
            'none' (per-sequence sums), 'sum' or 'mean' over the batch.
        """
        eos = check_token_batch(tokens)
        log_probs = self.token_log_probs(h, tokens)
        # target position j + 1 is scored iff j + 1 <= eos
        mask = torch.arange(log_probs.shape[1], device=tokens.device)[None, :] < eos[:, None]
        nll = -(log_probs * mask).sum(dim=1)
        if reduction == 'none':
            return nll
        if reduction == 'sum':
            return nll.sum()
        if reduction == 'mean':
            return nll.mean()
        raise ValueError('Unknown reduction {}'.format(reduction))

    @torch.no_grad()
    def decode_greedy(self, h, max_len=14, return_details=False):
        """
        Greedy decoding: start from BOS, feed back the argmax token (ties broken by lowest index),
        stop at EOS or after ``max_len`` content tokens (then EOS is appended).

        Returns
        -------
        sequences : list
            One :class:`TokenSequence` per encoding, of storage length ``max_len + 2``.

        details : dict
            If ``return_details``, 'logprobs' (per emitted token) and 'inputs' (tokens fed to the decoder).
        """
        batch = h.shape[0]
        state = self.init_state(h)
        inputs = torch.full((batch,), BOS, dtype=torch.int64, device=h.device)
        emitted = [[BOS] for _ in range(batch)]
        logprobs = [[] for _ in range(batch)]
        stream = [[] for _ in range(batch)]
        finished = [False] * batch
        for step in range(max_len + 1):
            output, state = self.lstm(self._inputs(inputs[:, None], h), state)
            log_probs = torch.log_softmax(self.output(output[:, 0]), dim=-1)
            tokens = torch.argmax(log_probs, dim=-1)
            if step == max_len:
                tokens = torch.full_like(tokens, EOS)
            for ibatch in range(batch):
                if finished[ibatch]: continue
                token = int(tokens[ibatch])
                stream[ibatch].append(int(inputs[ibatch]))
                emitted[ibatch].append(token)
                logprobs[ibatch].append(float(log_probs[ibatch, token]))
                finished[ibatch] = token == EOS
            if all(finished):
                break
            inputs = tokens
        sequences = [TokenSequence(indices + [PAD] * (max_len + 2 - len(indices))) for indices in emitted]
        if return_details:
            return sequences, {'logprobs': logprobs, 'inputs': stream}
        return sequences


class LossWeights(BaseClass):

    """Weight λ of the classification loss in the joint loss; the captioning loss is weighted by 1 - λ."""

    def __init__(self, lam=1.):
        self.lam = float(lam)
        if not 0. <= self.lam <= 1.:
            raise ValueError('lambda must be in [0, 1], got {}'.format(self.lam))

    def __repr__(self):
        return '{}(lam={})'.format(self.__class__.__name__, self.lam)


def joint_loss(cls_loss, cap_loss, weights):
    """λ * cls_loss + (1 - λ) * cap_loss."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(weights)
    return weights.lam * cls_loss + (1. - weights.lam) * cap_loss


class JointModel(nn.Module):
    """
    Encoder with optional classifier and caption decoder.

    Parameters are namespaced 'encoder.', 'classifier.', 'decoder.' in the checkpoint,
    which also stores the configuration, and metadata (task, vocabulary, label hierarchy, preprocessing).
    """
    def __init__(self, encoder_config, num_classes=None, decoder_config=None, meta=None):
        super().__init__()
        if not isinstance(encoder_config, EncoderConfig):
            encoder_config = EncoderConfig.from_dict(encoder_config)
        self.encoder_config = encoder_config
        self.encoder = build_encoder(encoder_config)
        self.classifier = ClassifierHead(encoder_config.embedding_dim, num_classes) if num_classes else None
        self.decoder = CaptionDecoder(encoding_dim=encoder_config.embedding_dim, **decoder_config) if decoder_config else None
        self.meta = dict(meta or {})

    @property
    def num_classes(self):
        return self.classifier.num_classes if self.classifier is not None else None

    def encode(self, clip):
        """Encoding h (B, D) of clips (B, T, 3, H, W)."""
        return self.encoder(clip)

    def _require(self, name):
        if getattr(self, name) is None:
            raise ValueError('Model has no {}'.format(name))
        return getattr(self, name)

    def class_logits(self, h):
        return self._require('classifier')(h)

    def class_log_probs(self, clip):
        """Class log-probabilities (B, K) of clips."""
        return torch.log_softmax(self.class_logits(self.encode(clip)), dim=-1)

    def caption_nll(self, h, tokens, reduction='mean'):
        return self._require('decoder').caption_nll(h, tokens, reduction=reduction)

    def decode_greedy(self, clip, max_len=14, return_details=False):
        return self._require('decoder').decode_greedy(self.encode(clip), max_len=max_len, return_details=return_details)

    def freeze_encoder(self):
        """Stop gradient flow to the encoder and keep it in eval mode."""
        for parameter in self.encoder.parameters():
            parameter.requires_grad_(False)
        self.encoder.eval()
        return self

    def archive(self, **meta):
        return {'version': CHECKPOINT_VERSION, 'encoder_config': self.encoder_config.to_dict(), 'num_classes': self.num_classes,
                'decoder_config': self.decoder.config() if self.decoder is not None else None,
                'meta': {**self.meta, **meta}, 'state_dict': {name: tensor.detach().cpu() for name, tensor in self.state_dict().items()}}

    def save(self, fn, **meta):
        """Save checkpoint to ``fn``; ``meta`` updates the stored metadata."""
        get_filetype('checkpoint', fn).write(self.archive(**meta))

    @classmethod
    def from_archive(cls, archive, encoder_config=None):
        if not isinstance(archive, dict) or archive.get('version', None) != CHECKPOINT_VERSION:
            version = archive.get('version', None) if isinstance(archive, dict) else None
            raise CheckpointError('Unsupported checkpoint version {}, expected {:d}'.format(version, CHECKPOINT_VERSION))
        stored = EncoderConfig.from_dict(archive['encoder_config'])
        if encoder_config is not None and EncoderConfig.from_dict(dict(encoder_config.to_dict() if isinstance(encoder_config, EncoderConfig) else encoder_config)) != stored:
            raise CheckpointError('Checkpoint encoder {} incompatible with requested {}'.format(stored, encoder_config))
        model = cls(stored, num_classes=archive['num_classes'], decoder_config=archive['decoder_config'], meta=archive['meta'])
        dtypes = [tensor.dtype for tensor in archive['state_dict'].values() if tensor.is_floating_point()]
        if dtypes:
            model.to(dtypes[0])
        try:
            model.load_state_dict(archive['state_dict'])
        except RuntimeError as exc:
            raise CheckpointError('Checkpoint parameters do not match configuration: {}'.format(exc)) from exc
        return model

    @classmethod
    def load(cls, fn, encoder_config=None):
        """Load checkpoint ``fn``, optionally checking compatibility with ``encoder_config``."""
        return cls.from_archive(get_filetype('checkpoint', fn).read(), encoder_config=encoder_config)
