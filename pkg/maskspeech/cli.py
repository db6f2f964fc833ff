# -*- coding: utf-8 -*-

"""Command-line interface.

    maskspeech synthdata --out corpus/
    maskspeech synthdata --spec world.json --out corpus/
    maskspeech train --corpus corpus/ --variant feats --out runs/feats
    maskspeech train-duration --corpus corpus/ --out runs/duration
    maskspeech sample --ckpt runs/feats/last.pt --text "3 1 4" --speaker 2 \\
        --frames 60 --out sample.jsonl
    maskspeech eval --ckpt runs/base/last.pt runs/feats/last.pt \\
        --corpus corpus/ --out report.csv
    maskspeech bench --ckpt runs/base/last.pt --stage-a runs/a/last.pt \\
        --stage-b runs/b/last.pt --out bench.csv

Exit status is 0 on success, 2 for invalid input and 1 for any other
failure.
"""

from __future__ import absolute_import, division, print_function

import argparse
import dataclasses
import json
import logging
import os
import re
import sys

from dataclasses import replace

from . import utils
from .config import VARIANTS, ConfigError, load_config, preset, variant
from .data import ToyWorldSpec, gen_corpus, toy_speaker_embedding
from .evaluate import BENCH_DURATIONS, bench, evaluate, load_pipeline
from .manifest import check_phonemes, load_manifest, save_manifest
from .network import duration_forward, predicted_frames
from .trainer import fit, fit_duration, load_checkpoint, world_from_dict

logger = logging.getLogger(__name__)


def get_parser():
    parser = argparse.ArgumentParser(
        prog='maskspeech',
        description='Masked audio token modeling on a synthetic speech '
                    'world.',
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--seed', type=int, default=None,
                        help='Override the training and sampling seeds.')
    parser.add_argument('--config', default=None,
                        help='Flat JSON configuration file.')
    parser.add_argument('--preset', default='toy',
                        choices=('toy', 'paper', 'full'),
                        help='Base preset.')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Log at DEBUG level.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synthdata', help='Generate a synthetic corpus.')
    p.add_argument('--out', required=True, help='Corpus directory.')
    p.add_argument('--spec', default=None,
                   help='JSON world document (default: a world matching '
                        'the model configuration).')
    p.add_argument('--n-train', type=int, default=None,
                   help='Training utterances (default: 64, or the '
                        "world's n_utterances).")
    p.add_argument('--n-dev', type=int, default=16)
    p.add_argument('--n-test', type=int, default=64)
    p.add_argument('--min-frames', type=int, default=None)
    p.add_argument('--max-frames', type=int, default=None)
    p.add_argument('--processes', type=int, default=1)
    p.set_defaults(func=cmd_synthdata)

    p = sub.add_parser('train', help='Train a generator.')
    p.add_argument('--corpus', required=True, help='Corpus directory.')
    p.add_argument('--variant', default='base', choices=VARIANTS)
    p.add_argument('--out', required=True, help='Run directory.')
    p.add_argument('--steps', type=int, default=None,
                   help='Override the number of training steps.')
    p.add_argument('--no-resume', action='store_true',
                   help='Ignore an existing last.pt.')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('train-duration', help='Train a duration predictor.')
    p.add_argument('--corpus', required=True, help='Corpus directory.')
    p.add_argument('--out', required=True, help='Run directory.')
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--no-resume', action='store_true')
    p.set_defaults(func=cmd_train_duration)

    p = sub.add_parser('sample', help='Generate one token grid.')
    p.add_argument('--ckpt', required=True,
                   help='Generator (or semantic stage) checkpoint.')
    p.add_argument('--stage-b', default=None,
                   help='Acoustic stage of a two-stage pipeline.')
    p.add_argument('--text', required=True,
                   help="Phoneme ids (e.g. '3 1 4') or lowercase letters.")
    p.add_argument('--speaker', type=int, required=True)
    length = p.add_mutually_exclusive_group(required=True)
    length.add_argument('--frames', type=int, help='Number of frames.')
    length.add_argument('--duration-ckpt',
                        help='Duration predictor checkpoint.')
    p.add_argument('--out', required=True, help='Output manifest.')
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser('eval', help='Evaluate generators on a test split.')
    p.add_argument('--ckpt', nargs='*', default=[],
                   help='Single-stage generator checkpoints.')
    p.add_argument('--stage-a', default=None)
    p.add_argument('--stage-b', default=None)
    p.add_argument('--duration-ckpt', default=None)
    p.add_argument('--corpus', required=True)
    p.add_argument('--split', default='test', choices=('dev', 'test'))
    p.add_argument('--out', required=True, help='Report CSV.')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('bench', help='Compare one- and two-stage decoding.')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--stage-a', required=True)
    p.add_argument('--stage-b', required=True)
    p.add_argument('--runs', type=int, default=20)
    p.add_argument('--durations', type=float, nargs='+',
                   default=list(BENCH_DURATIONS))
    p.add_argument('--out', required=True, help='Report CSV.')
    p.set_defaults(func=cmd_bench)

    return parser


def get_preset(args, name=None):
    p = preset(args.preset)
    if name is not None:
        p = variant(p, name)
    if args.config:
        p = load_config(args.config, base=p)
    if args.seed is not None:
        p = replace(p, train=replace(p.train, seed=args.seed),
                    duration_train=replace(p.duration_train, seed=args.seed),
                    sampler=replace(p.sampler, seed=args.seed))
    return p.validate()


def with_steps(cfg, steps):
    if steps is None:
        return cfg
    warmup = cfg.warmup_steps if cfg.warmup_steps < steps else steps // 10
    return replace(cfg, total_steps=steps, warmup_steps=warmup)


def load_world(corpus):
    with open(os.path.join(corpus, 'world.json')) as fp:
        return world_from_dict(json.load(fp))


def read_world(path):
    with open(path) as fp:
        doc = json.load(fp)
    if not isinstance(doc, dict):
        raise ValueError('%s must hold a JSON object.' % path)
    try:
        return world_from_dict(doc)
    except TypeError as e:
        raise ValueError('%s is not a world document (%s).' % (path, e))


def corpus_bounds(p, world):
    """Token, phoneme, speaker and code ranges of a corpus for preset p."""
    m = p.model
    if p.variant == 'stageA':
        # Audio tokens keep the corpus layout.
        m = replace(m, V=world.V)
    return m


def load_split(corpus, split, p=None, world=None):
    bounds = None
    if p is not None:
        bounds = corpus_bounds(p, world or load_world(corpus))
    return load_manifest(os.path.join(corpus, '%s.jsonl' % split), bounds)


def check_world(world, p):
    m = p.model
    names = ['P', 'S', 'd_speaker']
    if p.variant != 'stageA':
        names += ['K', 'V', 'D_sem']
    bad = [n for n in names if getattr(world, n) != getattr(m, n)]
    if bad:
        raise ConfigError('Model configuration disagrees with the corpus '
                          'on %s.' % ', '.join(bad))


def parse_phonemes(text, P):
    """Parse phoneme ids ('3 1 4', '3,1,4') or lowercase letters."""
    items = [x for x in re.split(r"[\s,]+", text.strip()) if x]
    if items and all(x.isdigit() for x in items):
        return check_phonemes([int(x) for x in items], P)
    letters = [c for c in text if not c.isspace()]
    if not letters or not all('a' <= c <= 'z' for c in letters):
        raise ValueError('Text must be phoneme ids or lowercase letters.')
    return check_phonemes([ord(c) - ord('a') for c in letters], P)


def cmd_synthdata(args):
    overrides = {k: v for k, v in (('seed', args.seed),
                                   ('n_utterances', args.n_train),
                                   ('min_frames', args.min_frames),
                                   ('max_frames', args.max_frames))
                 if v is not None}
    if args.spec:
        world = replace(read_world(args.spec), **overrides).validate()
    else:
        overrides.setdefault('n_utterances', 64)
        world = ToyWorldSpec.from_config(get_preset(args).model, **overrides)

    os.makedirs(args.out, exist_ok=True)
    for split, n in (('train', world.n_utterances), ('dev', args.n_dev),
                     ('test', args.n_test)):
        utts = gen_corpus(world, split, n, processes=args.processes)
        save_manifest(utts, os.path.join(args.out, '%s.jsonl' % split))

    with open(os.path.join(args.out, 'world.json'), 'w') as fp:
        json.dump(dataclasses.asdict(world), fp, indent=2)
    logger.info('Wrote corpus to %s', args.out)


def cmd_train(args):
    p = get_preset(args, args.variant)
    p = replace(p, train=with_steps(p.train, args.steps)).validate()
    world = load_world(args.corpus)
    check_world(world, p)

    corpus = load_split(args.corpus, 'train', p, world)
    fit(corpus, p, args.out, world, resume=not args.no_resume)


def cmd_train_duration(args):
    p = get_preset(args)
    p = replace(p, duration_train=with_steps(p.duration_train,
                                             args.steps)).validate()
    world = load_world(args.corpus)
    check_world(world, p)
    corpus = load_split(args.corpus, 'train', p, world)
    fit_duration(corpus, p, args.out, world, resume=not args.no_resume)


def cmd_sample(args):
    pipeline, world = load_pipeline(args.ckpt, args.stage_b)
    if world is None:
        raise ValueError('%s does not record its synthetic world.'
                         % args.ckpt)

    sampler = get_preset(args).sampler
    cfg = pipeline.acoustic.cfg
    phonemes = parse_phonemes(args.text, cfg.P)
    speaker = toy_speaker_embedding(args.speaker, world)

    if args.frames is not None:
        T = args.frames
    else:
        duration = load_checkpoint(args.duration_ckpt)
        if duration.kind != 'duration':
            raise ValueError('%s is not a duration checkpoint.'
                             % args.duration_ckpt)
        T = min(predicted_frames(duration_forward(phonemes, duration.model),
                                 cfg.frame_rate_hz), cfg.max_frames)

    rng = utils.seeded_rng(utils.split(sampler.seed, 'sample'))
    grid, trace = pipeline.decode(phonemes, speaker, T, sampler, rng)

    record = {'uid': 'sample-00000', 'phonemes': phonemes.tolist(),
              'speaker_id': args.speaker, 'tokens': grid.tokens.tolist(),
              'frame_rate_hz': grid.frame_rate_hz,
              'duration_s': grid.duration_s}
    with open(args.out, 'w') as fp:
        fp.write(json.dumps(record) + "\n")
    with open(os.path.splitext(args.out)[0] + '.trace.json', 'w') as fp:
        json.dump(trace.to_dict(), fp, indent=2)
    logger.info('Wrote %d x %d grid to %s (%d forward passes)', grid.K,
                grid.T, args.out, trace.forward_passes)


def cmd_eval(args):
    pipelines = []
    world = load_world(args.corpus)
    for path in args.ckpt:
        pipelines.append(load_pipeline(path)[0])
    if args.stage_a or args.stage_b:
        if not (args.stage_a and args.stage_b):
            raise ValueError('Two-stage evaluation needs --stage-a and '
                             '--stage-b.')
        pipelines.append(load_pipeline(args.stage_a, args.stage_b)[0])
    if not pipelines:
        raise ValueError('Nothing to evaluate.')
    for pipeline in pipelines:
        check_world(world, pipeline.preset)

    duration = None
    if args.duration_ckpt:
        duration = load_checkpoint(args.duration_ckpt)
        if duration.kind != 'duration':
            raise ValueError('%s is not a duration checkpoint.'
                             % args.duration_ckpt)
        duration = duration.model

    p = get_preset(args)
    bounds = pipelines[0].preset
    report = evaluate(pipelines,
                      load_split(args.corpus, args.split, bounds, world),
                      load_split(args.corpus, 'train', bounds, world),
                      world, p.sampler,
                      duration_model=duration, seed=p.sampler.seed)
    report.to_csv(args.out)
    print(report.format_table())


def cmd_bench(args):
    one, world = load_pipeline(args.ckpt)
    two, _ = load_pipeline(args.stage_a, args.stage_b)
    if world is None:
        raise ValueError('%s does not record its synthetic world.'
                         % args.ckpt)

    p = get_preset(args)
    report = bench(one, two, world, p.sampler, durations=args.durations,
                   n_runs=args.runs, seed=p.sampler.seed)
    report.to_csv(args.out)
    print(report.format_table())


def main(argv=None):
    args = get_parser().parse_args(argv)

    formatter = '%(asctime)s %(levelname)s [%(name)s] %(message)s'
    logging.basicConfig(format=formatter, force=True,
                        level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        args.func(args)
    except ValueError as e:
        logger.error('%s', e)
        return 2
    except Exception:
        logger.exception('%s failed', args.command)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
