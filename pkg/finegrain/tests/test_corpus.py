import os
import json

import pytest

from finegrain.corpus import (PAD, BOS, EOS, SOMETHING, AnnotationError, AnnotationRecord, LabelHierarchy, Vocabulary, TokenSequence,
                              count_slots, expand_template, simplify_placeholder, simplify_caption, tokenize_caption, coarse_of_fine,
                              load_annotations, write_annotations, build_vocabulary, encode_tokens, decode_tokens, caption_for_task)


base_dir = '_tests'


def test_template():

    assert count_slots('Holding [something] in front of [Something]') == 2
    assert expand_template('Holding [something] in front of [something]', ['a cap', 'a shirt']) == 'Holding a cap in front of a shirt'
    assert expand_template('Doing other things', []) == 'Doing other things'
    with pytest.raises(ValueError):
        expand_template('Holding [something]', [])
    assert simplify_placeholder("a men's short sleeve shirt") == 'shirt'
    assert simplify_placeholder('the cat\'s') == 'cat'
    assert simplify_placeholder('... !') == '[something]'
    assert tokenize_caption("Putting [something] on the dog's bed.") == ['putting', '[something]', 'on', 'the', 'dogs', 'bed']


def test_record():

    record = AnnotationRecord(video_id=12, action_group_id=1, action_category_id=3, template='Moving [something] away from [something]',
                              placeholders=['a red square', 'the blue circle'])
    assert record.full_caption == 'Moving a red square away from the blue circle'
    assert record.simplified_caption == 'Moving square away from circle'
    assert simplify_caption(record) == record.simplified_caption
    assert caption_for_task(record, 'caption_simplified') == record.simplified_caption
    assert caption_for_task(record, 'caption_full') == record.full_caption
    with pytest.raises(ValueError):
        caption_for_task(record, 'fine_cls')
    record = AnnotationRecord.from_json(record.to_json())
    assert record.video_id == '12' and record.full_caption == 'Moving a red square away from the blue circle'

    hierarchy = LabelHierarchy([0, 0, 1, 1])
    record.check(hierarchy=hierarchy)
    assert coarse_of_fine(3, hierarchy) == 1
    with pytest.raises(ValueError):
        coarse_of_fine(4, hierarchy)
    with pytest.raises(AnnotationError):
        AnnotationRecord(video_id='a', action_group_id=0, action_category_id=3, template='Moving [something]', placeholders=['a']).check(hierarchy=hierarchy)
    with pytest.raises(AnnotationError):
        AnnotationRecord(video_id='a', template='Moving [something]', placeholders=[])


def test_hierarchy():

    hierarchy = LabelHierarchy([0, 0, 1, 2, 2])
    assert hierarchy.group_count == 3 and hierarchy.category_count == 5
    assert hierarchy.members(2) == [3, 4]
    assert LabelHierarchy.from_dict(hierarchy.to_dict()) == hierarchy
    assert LabelHierarchy.identity(3).group_of == [0, 1, 2]
    with pytest.raises(ValueError):
        LabelHierarchy([0, 3], group_count=2)
    records = [AnnotationRecord(video_id=str(i), action_group_id=group, action_category_id=category, template='Doing')
               for i, (category, group) in enumerate([(0, 0), (1, 0), (2, 1), (1, 0)])]
    assert LabelHierarchy.from_records(records).group_of == [0, 0, 1]
    records.append(AnnotationRecord(video_id='x', action_group_id=1, action_category_id=0, template='Doing'))
    with pytest.raises(AnnotationError):
        LabelHierarchy.from_records(records)


def test_load_annotations():

    fn = os.path.join(base_dir, 'corpus', 'annotations.jsonl')
    records = [AnnotationRecord(video_id='v{:d}'.format(i), action_group_id=0, action_category_id=0, template='Lifting [something] up', placeholders=['a red square'])
               for i in range(3)]
    write_annotations(fn, records)
    loaded = load_annotations(fn, hierarchy=LabelHierarchy([0]))
    assert [record.video_id for record in loaded] == ['v0', 'v1', 'v2']
    assert loaded[1].simplified_caption == 'Lifting square up'

    with open(fn, 'a') as file:
        file.write(json.dumps({'id': 'v3', 'group': 0, 'category': 0, 'template': 'Lifting [something] up', 'placeholders': [], 'caption': 'Lifting up'}) + '\n')
    with pytest.raises(AnnotationError) as exc:
        load_annotations(fn)
    assert exc.value.line == 4 and exc.value.video_id == 'v3'

    write_annotations(fn, records)
    with open(fn, 'a') as file:
        file.write('{"id": "v3", "group": 0,\n')
    with pytest.raises(AnnotationError) as exc:
        load_annotations(fn)
    assert exc.value.line == 4

    write_annotations(fn, records)
    with open(fn, 'a') as file:
        file.write(json.dumps({'id': 'v3', 'group': 0}) + '\n')
    with pytest.raises(AnnotationError) as exc:
        load_annotations(fn)
    assert exc.value.line == 4


def test_vocabulary():

    captions = [['moving', 'square', 'left']] * 6 + [['moving', 'circle']] * 7 + [['rare']] * 2
    vocab = build_vocabulary(captions, min_occurrences=6)
    assert vocab.frozen
    assert vocab.tokens == ['moving', 'circle', 'left', 'square']
    assert vocab.index('moving') == 4
    assert vocab.index('rare') == SOMETHING
    with pytest.raises(ValueError):
        vocab.add('rare')
    with pytest.raises(KeyError):
        Vocabulary(['a']).index('b')

    fn = os.path.join(base_dir, 'corpus', 'vocabulary.txt')
    vocab.write(fn)
    assert Vocabulary.read(fn) == vocab

    sequence = encode_tokens(['moving', 'rare', 'square'], vocab, max_len=4)
    assert sequence.indices == [BOS, 4, SOMETHING, 7, EOS, PAD]
    assert decode_tokens(sequence, vocab) == ['moving', '[something]', 'square']
    assert len(encode_tokens(['moving'] * 20, vocab, max_len=14)) == 16
    assert encode_tokens(['moving'] * 20, vocab, max_len=14).eos_position == 15
    with pytest.raises(ValueError):
        encode_tokens(['moving'], Vocabulary(['moving']))


def test_token_sequence():

    sequence = TokenSequence([BOS, 5, 6, EOS, PAD]).check()
    assert sequence.content == [5, 6]
    assert sequence.eos_position == 3
    for indices in [[5, EOS], [BOS, 5, PAD, EOS], [BOS, 5], [BOS, EOS, EOS]]:
        with pytest.raises(ValueError):
            TokenSequence(indices).check()


if __name__ == '__main__':

    test_template()
    test_record()
    test_hierarchy()
    test_load_annotations()
    test_vocabulary()
    test_token_sequence()
