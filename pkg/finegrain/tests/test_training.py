import os

import pytest
import torch

from finegrain import utils, training
from finegrain.config import ConfigError
from finegrain.corpus import Manifest
from finegrain.toyworld import ToySpec, generate_toy_corpus
from finegrain.training import (TrainConfig, LambdaSchedule, lambda_at_step, ClipDataset, Trainer, NonFiniteLossError, build_model, compute_losses, collate_clips,
                                task_vocabulary, train_model, evaluate_model, fit_linear_probe, item_seed)


base_dir = '_tests'

tiny = dict(clip_len=8, resize=32, crop=24, channels_3d=4, channels_2d=4, blocks=2, lstm_hidden=8, embedding_dim=6, decoder_hidden=10,
            batch_size=4, max_len=12, log_every=5, seed=0)


def toy_manifest(n=40):
    spec = ToySpec(frame_size=(32, 32), fps=4, duration_s=2.)
    out_dir = os.path.join(base_dir, 'training_corpus_{:d}'.format(n))
    fn = os.path.join(out_dir, 'manifest.json')
    if not os.path.isfile(fn):
        generate_toy_corpus(spec, n, seed=42, out_dir=out_dir)
    return Manifest.read(fn)


def test_schedule():

    schedule = LambdaSchedule(start=1., end=0.1, warmup=3, anneal_steps=10)
    assert [schedule(step) for step in [0, 2, 3]] == [1., 1., 1.]
    assert schedule(8) == pytest.approx(0.55, abs=1e-12)
    assert schedule(13) == pytest.approx(0.1, abs=1e-12)
    assert schedule(1000) == pytest.approx(0.1, abs=1e-12)
    assert all(schedule(step) >= schedule(step + 1) for step in range(20))
    assert lambda_at_step(5, {'start': 0.5, 'end': 0.5}) == 0.5
    assert LambdaSchedule(start=1., end=0.2, warmup=2, anneal_steps=0)(2) == 0.2
    with pytest.raises(ValueError):
        LambdaSchedule(start=0.1, end=0.5)
    with pytest.raises(ValueError):
        schedule(-1)

    config = TrainConfig(task='fine_cls', lambda_end=0.1)
    assert LambdaSchedule.for_task(config, steps_per_epoch=5)(100) == 1.
    config = TrainConfig(task='caption_simplified', lambda_anneal_steps=4)
    schedule = LambdaSchedule.for_task(config, steps_per_epoch=5)
    assert schedule.warmup == 5 and schedule(9) == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        TrainConfig(task='caption_full', architecture='frame_lstm')


def test_dataset():

    manifest = toy_manifest()
    config = TrainConfig(task='caption_simplified', **tiny)
    vocab = task_vocabulary(manifest, 'caption_simplified', min_occurrences=1)
    dataset = ClipDataset.from_config(manifest, 'train', config, vocab=vocab, mode='train')
    assert len(dataset) == len(manifest.ids('train'))
    item = dataset[0]
    assert item['clip'].shape == (8, 3, 24, 24)
    assert item['tokens'].shape == (14,)
    assert torch.equal(dataset[0]['clip'], item['clip'])
    assert item_seed(0, 0, 0) != item_seed(0, 1, 0)
    batch = collate_clips([dataset[0], dataset[1]])
    assert batch['clip'].shape == (2, 8, 3, 24, 24) and batch['label'].shape == (2,)
    assert all(isinstance(token, str) for token in dataset.reference_tokens(0))
    with pytest.raises(ValueError):
        ClipDataset(manifest, 'train', task='caption_full')


def test_lambda_endpoints():

    manifest = toy_manifest()
    vocab = task_vocabulary(manifest, 'caption_full', min_occurrences=1)
    for lam, frozen, trained in [(1., 'decoder', 'classifier'), (0., 'classifier', 'decoder')]:
        config = TrainConfig(task='caption_full', lambda_start=lam, lambda_end=lam, max_epochs=5,
                             checkpoint_dir=os.path.join(base_dir, 'training_lambda'), **tiny)
        trainer = Trainer(config, manifest, vocab=vocab)
        before = {name: utils.hash_state(getattr(trainer.model, name)) for name in [frozen, trained]}
        _, report = trainer.train(steps=10)
        assert report['steps'] == 10
        assert utils.hash_state(getattr(trainer.model, frozen)) == before[frozen]
        assert utils.hash_state(getattr(trainer.model, trained)) != before[trained]

    model = build_model(TrainConfig(task='caption_full', **tiny), manifest.hierarchy, vocab=vocab)
    dataset = ClipDataset.from_config(manifest, 'train', TrainConfig(task='caption_full', **tiny), vocab=vocab)
    batch = collate_clips([dataset[0], dataset[1]])
    assert set(compute_losses(model, batch, 1.)) == {'cls', 'loss'}
    assert set(compute_losses(model, batch, 0.)) == {'cap', 'loss'}
    losses = compute_losses(model, batch, 0.25)
    assert torch.allclose(losses['loss'], 0.25 * losses['cls'] + 0.75 * losses['cap'])


def test_train_eval_probe():

    manifest = toy_manifest()
    checkpoint_dir = os.path.join(base_dir, 'training_fine')
    config = TrainConfig(task='fine_cls', max_epochs=2, checkpoint_dir=checkpoint_dir, **tiny)
    checkpoint, report = train_model(config, manifest)
    assert checkpoint == os.path.join(checkpoint_dir, 'best.pt')
    for name in ['best.pt', 'last.pt', 'epoch_000.pt', 'epoch_001.pt', 'train_report.json']:
        assert os.path.isfile(os.path.join(checkpoint_dir, name))
    assert len(report['epochs']) == 2 and report['best_epoch'] in (0, 1)

    report = evaluate_model(checkpoint, manifest, split='val')
    scores = report['metrics']
    assert report['count'] == len(manifest.ids('val'))
    assert set(scores) == {'accuracy', 'fine_accuracy', 'coarse_accuracy', 'coarse_accuracy_summed'}
    assert all(0. <= value <= 1. for value in scores.values())
    assert scores['accuracy'] == scores['fine_accuracy']
    assert scores['coarse_accuracy'] >= scores['fine_accuracy']
    assert evaluate_model(checkpoint, manifest, split='val')['metrics'] == scores
    with pytest.raises(ValueError):
        evaluate_model(checkpoint, manifest, metrics=['bleu4'])
    with pytest.raises(ValueError):
        evaluate_model(checkpoint, manifest, metrics=['perplexity'])

    probe = fit_linear_probe(checkpoint, manifest, target='coarse', epochs=5, batch_size=8)
    assert probe['encoder_hash_before'] == probe['encoder_hash_after']
    assert probe['num_classes'] == manifest.hierarchy.group_count
    assert 0. <= probe['accuracy'] <= 1.
    with pytest.raises(ValueError):
        fit_linear_probe(checkpoint, manifest, target='template')


def test_train_caption():

    manifest = toy_manifest()
    vocab = task_vocabulary(manifest, 'caption_simplified', min_occurrences=1)
    config = TrainConfig(task='caption_simplified', max_epochs=1, lambda_warmup=2, lambda_anneal_steps=4,
                         checkpoint_dir=os.path.join(base_dir, 'training_caption'), **tiny)
    checkpoint, report = train_model(config, manifest, vocab=vocab)
    assert 'exact_match' in report['epochs'][0]['val']
    scores = evaluate_model(checkpoint, manifest, split='val')['metrics']
    for name in ['exact_match', 'bleu4', 'rouge_l', 'meteor_lite', 'baseline_template_fill']:
        assert 0. <= scores[name] <= 1.
    assert scores['caption_nll'] > 0.


def test_reproducible():

    manifest = toy_manifest()
    losses = []
    for irun in range(2):
        config = TrainConfig(task='fine_cls', max_epochs=1, dtype='float64', deterministic=True,
                             checkpoint_dir=os.path.join(base_dir, 'training_repro_{:d}'.format(irun)), **tiny)
        _, report = train_model(config, manifest)
        losses.append(report['epochs'][-1]['train_loss'])
    assert abs(losses[1] - losses[0]) < 1e-6


def test_loss_decreases():

    manifest = toy_manifest()
    config = TrainConfig(task='fine_cls', max_epochs=4, learning_rate=1e-2, checkpoint_dir=os.path.join(base_dir, 'training_decrease'), **tiny)
    _, report = train_model(config, manifest)
    assert report['epochs'][3]['train_loss'] < report['initial_loss']


def test_non_finite_loss(monkeypatch):

    manifest = toy_manifest()
    calls = []
    compute_losses_finite = training.compute_losses

    def compute_losses_nan(model, batch, lam):
        losses = compute_losses_finite(model, batch, lam)
        calls.append(lam)
        if len(calls) == 3:
            losses['loss'] = losses['loss'] * float('nan')
        return losses

    monkeypatch.setattr(training, 'compute_losses', compute_losses_nan)
    config = TrainConfig(task='fine_cls', max_epochs=2, checkpoint_dir=os.path.join(base_dir, 'training_nan'), **tiny)
    with pytest.raises(NonFiniteLossError, match='at step 2') as excinfo:
        Trainer(config, manifest).train()
    assert excinfo.value.step == 2


@pytest.mark.skipif(not os.environ.get('FINEGRAIN_SLOW'), reason='set FINEGRAIN_SLOW=1 to run toy-scale acceptance')
def test_toy_acceptance():

    spec = ToySpec()
    out_dir = os.path.join(base_dir, 'acceptance_corpus')
    manifest = Manifest.read(generate_toy_corpus(spec, 2000, seed=42, out_dir=out_dir))
    device = 'cuda' if torch.cuda.is_available() else 'cpu'
    common = dict(clip_len=48, resize=64, crop=56, channels_3d=32, channels_2d=32, blocks=3, lstm_hidden=64, embedding_dim=32, decoder_hidden=128,
                  batch_size=32, max_epochs=20, seed=42, device=device)
    config = TrainConfig(task='fine_cls', checkpoint_dir=os.path.join(base_dir, 'acceptance_fine'), **common)
    checkpoint, _ = train_model(config, manifest)
    scores = evaluate_model(checkpoint, manifest, split='val')['metrics']
    assert scores['fine_accuracy'] >= 0.9
    assert scores['coarse_accuracy'] >= scores['fine_accuracy']
    probe = fit_linear_probe(checkpoint, manifest, target='fine', epochs=50)
    assert probe['accuracy'] >= scores['fine_accuracy'] - 0.01
    torch.manual_seed(0)
    untrained = build_model(config, manifest.hierarchy)
    probe = fit_linear_probe(untrained, manifest, target='fine', epochs=50)
    assert abs(probe['accuracy'] - 1. / manifest.hierarchy.category_count) <= 0.1

    config = TrainConfig(task='caption_simplified', checkpoint_dir=os.path.join(base_dir, 'acceptance_caption'), **common)
    checkpoint, report = train_model(config, manifest)
    scores = evaluate_model(checkpoint, manifest, split='val')['metrics']
    assert scores['exact_match'] >= 0.7
    assert report['epochs'][-1]['val']['exact_match'] > report['epochs'][0]['val']['exact_match']


if __name__ == '__main__':

    test_schedule()
    test_dataset()
    test_lambda_endpoints()
    test_train_eval_probe()
    test_train_caption()
    test_reproducible()
    test_loss_decreases()
