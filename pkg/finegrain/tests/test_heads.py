import os

import numpy as np
import pytest
import torch

from finegrain.corpus import PAD, BOS, EOS, TokenSequence
from finegrain.encoder import EncoderConfig
from finegrain.heads import (ClassifierHead, CaptionDecoder, JointModel, LossWeights, CheckpointError, classify, joint_loss, check_token_batch)


base_dir = '_tests'


def tiny_model(condition='initial', seed=0):
    torch.manual_seed(seed)
    encoder_config = EncoderConfig(channels_3d=4, channels_2d=4, blocks=2, lstm_hidden=8)
    decoder_config = {'vocab_size': 12, 'embedding_dim': 6, 'hidden': 10, 'condition': condition}
    return JointModel(encoder_config, num_classes=4, decoder_config=decoder_config, meta={'task': 'caption_full'}).double()


def random_clip(batch=2, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((batch, 8, 3, 8, 8), generator=generator, dtype=torch.float64)


def test_classifier():

    head = ClassifierHead(5, 3).double()
    h = torch.randn(4, 5, dtype=torch.float64)
    probs = classify(h, head)
    assert probs.shape == (4, 3)
    assert torch.allclose(probs.sum(dim=-1), torch.ones(4, dtype=torch.float64))
    # softmax is invariant to a constant logit shift
    with torch.no_grad():
        shifted = ClassifierHead(5, 3).double()
        shifted.load_state_dict(head.state_dict())
        shifted.projection.bias += 10.
    assert torch.allclose(classify(h, shifted), probs, atol=1e-12)


def test_tokens():

    tokens = torch.tensor([[BOS, 5, EOS, PAD], [BOS, 5, 6, EOS]])
    assert check_token_batch(tokens).tolist() == [2, 3]
    for bad in [[[5, 5, EOS, PAD]], [[BOS, PAD, EOS, PAD]], [[BOS, 5, 6, 7]], [[BOS, EOS, EOS, PAD]]]:
        with pytest.raises(ValueError):
            check_token_batch(torch.tensor(bad))


def test_caption_nll():

    torch.manual_seed(0)
    decoder = CaptionDecoder(12, 8, embedding_dim=6, hidden=10).double()
    h = torch.randn(2, 8, dtype=torch.float64)
    tokens = torch.tensor([[BOS, 5, EOS, PAD, PAD], [BOS, 5, 6, 7, EOS]])
    nll = decoder.caption_nll(h, tokens, reduction='none')
    logits, _ = decoder(h, tokens[:, :-1])
    log_probs = torch.log_softmax(logits, dim=-1)
    expected = [-(log_probs[0, 0, 5] + log_probs[0, 1, EOS]), -(log_probs[1, 0, 5] + log_probs[1, 1, 6] + log_probs[1, 2, 7] + log_probs[1, 3, EOS])]
    assert torch.allclose(nll, torch.stack(expected), atol=1e-12)
    assert torch.allclose(decoder.caption_nll(h, tokens), nll.mean())
    assert torch.all(nll > 0.)

    # tokens after EOS do not change the loss
    other = tokens.clone()
    other[0, 3:] = torch.tensor([8, 9])
    other_nll = decoder.caption_nll(h[:1], other[:1], reduction='none')
    assert torch.allclose(other_nll, nll[:1], atol=1e-12)


def test_decode_greedy():

    for condition in ['initial', 'every_step']:
        model = tiny_model(condition=condition).eval()
        clip = random_clip()
        sequences, details = model.decode_greedy(clip, max_len=5, return_details=True)
        assert len(sequences) == 2
        for sequence, logprobs, inputs in zip(sequences, details['logprobs'], details['inputs']):
            assert isinstance(sequence, TokenSequence)
            sequence.check()
            assert len(sequence) == 7
            assert len(logprobs) == sequence.eos_position
            # each fed input is the previously emitted token
            assert inputs == sequence.indices[:sequence.eos_position]
        assert sequences == model.decode_greedy(clip, max_len=5)

    # decoding emits the argmax: force EOS with a large output bias
    model = tiny_model().eval()
    with torch.no_grad():
        model.decoder.output.bias.zero_()
        model.decoder.output.bias[EOS] = 100.
    sequences = model.decode_greedy(random_clip(), max_len=5)
    assert all(sequence.indices == [BOS, EOS] + [PAD] * 5 for sequence in sequences)
    with torch.no_grad():
        model.decoder.output.bias[EOS] = -100.
        model.decoder.output.bias[7] = 100.
    sequences = model.decode_greedy(random_clip(), max_len=3)
    assert all(sequence.indices == [BOS, 7, 7, 7, EOS] for sequence in sequences)


def test_joint_loss():

    cls, cap = torch.tensor(2.), torch.tensor(4.)
    assert joint_loss(cls, cap, LossWeights(1.)) == 2.
    assert joint_loss(cls, cap, LossWeights(0.)) == 4.
    assert joint_loss(cls, cap, 0.25) == 0.25 * 2. + 0.75 * 4.
    with pytest.raises(ValueError):
        LossWeights(1.5)


def test_gradient():

    model = tiny_model(seed=42).eval()
    clip = random_clip(batch=2, seed=1)
    tokens = torch.tensor([[BOS, 5, 6, EOS, PAD], [BOS, 7, EOS, PAD, PAD]])
    labels = torch.tensor([1, 3])

    def loss_fn():
        h = model.encode(clip)
        cls = torch.nn.functional.cross_entropy(model.class_logits(h), labels)
        return joint_loss(cls, model.caption_nll(h, tokens), 0.5)

    model.zero_grad()
    loss_fn().backward()
    parameters = [(name, parameter) for name, parameter in model.named_parameters()]
    rng = np.random.default_rng(0)
    eps = 1e-6
    for _ in range(100):
        name, parameter = parameters[rng.integers(len(parameters))]
        index = tuple(int(rng.integers(size)) for size in parameter.shape)
        analytic = parameter.grad[index].item()
        with torch.no_grad():
            value = parameter[index].item()
            parameter[index] = value + eps
            plus = loss_fn().item()
            parameter[index] = value - eps
            minus = loss_fn().item()
            parameter[index] = value
        numeric = (plus - minus) / (2. * eps)
        assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-8, (name, index, analytic, numeric)


def test_checkpoint():

    model = tiny_model(seed=3).eval()
    fn = os.path.join(base_dir, 'heads', 'model.pt')
    model.save(fn, epoch=2)
    loaded = JointModel.load(fn).eval()
    assert loaded.meta == {'task': 'caption_full', 'epoch': 2}
    assert next(loaded.parameters()).dtype == torch.float64
    clip = random_clip()
    with torch.no_grad():
        assert torch.equal(loaded.encode(clip), model.encode(clip))
        assert torch.equal(loaded.class_log_probs(clip), model.class_log_probs(clip))
    assert loaded.decode_greedy(clip) == model.decode_greedy(clip)

    JointModel.load(fn, encoder_config=EncoderConfig(channels_3d=4, channels_2d=4, blocks=2, lstm_hidden=8))
    with pytest.raises(CheckpointError):
        JointModel.load(fn, encoder_config=EncoderConfig(channels_3d=4, channels_2d=0, blocks=2, lstm_hidden=8))
    archive = model.archive()
    archive['version'] = 0
    with pytest.raises(CheckpointError):
        JointModel.from_archive(archive)
    archive = model.archive()
    archive['state_dict'].pop('classifier.projection.bias')
    with pytest.raises(CheckpointError):
        JointModel.from_archive(archive)

    model.freeze_encoder()
    assert not any(parameter.requires_grad for parameter in model.encoder.parameters())
    assert all(parameter.requires_grad for parameter in model.decoder.parameters())


if __name__ == '__main__':

    test_classifier()
    test_tokens()
    test_caption_nll()
    test_decode_greedy()
    test_joint_loss()
    test_gradient()
    test_checkpoint()
