#!/usr/bin/env python3
# coding: utf-8
""" Command-line entry point: simulate, extract, tune, track and report.

Exit codes: 0 success, 2 input or configuration error, 3 internal invariant
violation.
"""

# System-related libraries
import os
import sys
import json
import logging
import argparse
from dataclasses import replace

# Project-related libraries
from dastrack.core import dastrack_io as dio
from dastrack.core.dastrack_classifier import fit_class_model
from dastrack.core.dastrack_config import RunConfig
from dastrack.core.dastrack_errors import (ConfigError, DataError, DomainError, FitError, FormatError,
                                           InvariantError, NumericError, ParseError, TuningError)
from dastrack.core.dastrack_picker import extract_picks
from dastrack.core.dastrack_preprocess import check_kappa, preprocess_stream, smooth_channels
from dastrack.core.dastrack_report import report
from dastrack.core.dastrack_simulator import GroundTruth, Scenario, flatten_steps, score_tracking, \
    simulate_field, simulate_picks
from dastrack.core.dastrack_tracker import Tracker
from dastrack.core.dastrack_tuner import reference_site, tune, tuned_picks

logger = logging.getLogger('dastrack')

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

_INPUT_ERRORS = (FormatError, DataError, ParseError, ConfigError, DomainError, TuningError, FitError, OSError)
_INVARIANT_ERRORS = (InvariantError, NumericError)


def _prepare_out(out_dir, effective):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, 'effective_config.json'), 'w') as fh:
        json.dump(effective, fh, indent=2)


def _load_config(args):
    cfg = RunConfig.load(args.config)
    overrides = {}
    if getattr(args, 'kappa', None) is not None:
        overrides['preprocess'] = replace(cfg.preprocess, smoothing_window_kappa=args.kappa)
    picker_changes = {}
    if getattr(args, 'threshold', None) is not None:
        picker_changes['amplitude_threshold_A'] = args.threshold
    if getattr(args, 'epsilon', None) is not None:
        picker_changes['dbscan_epsilon'] = args.epsilon
    if getattr(args, 'batch_span', None) is not None:
        picker_changes['batch_span_seconds'] = args.batch_span
    if picker_changes:
        overrides['picker'] = replace(cfg.picker, **picker_changes)
    if getattr(args, 'N_init', None) is not None:
        overrides['tracker'] = replace(cfg.tracker, N_init=args.N_init)
    if getattr(args, 'bin_minutes', None) is not None:
        overrides['report'] = replace(cfg.report, bin_minutes=args.bin_minutes)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_simulate(args):
    """ Write the ground truth plus a pick CSV and/or a log-RMS strain file. """
    scn = Scenario.from_json(args.scenario)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    _prepare_out(args.out, scn.to_dict())

    truth, steps = simulate_picks(scn)
    truth.to_csv(os.path.join(args.out, 'truth.csv'))
    if args.kind in ('picks', 'both'):
        dio.save_picks(flatten_steps(steps), os.path.join(args.out, 'picks.csv'))
    if args.kind in ('field', 'both'):
        dio.save_strain(simulate_field(scn), os.path.join(args.out, 'strain.dst'))
    return EXIT_OK


def cmd_extract(args):
    """ Preprocess and pick a strain file batch by batch. """
    cfg = _load_config(args)
    _prepare_out(args.out, cfg.to_dict())

    kappa = cfg.preprocess.smoothing_window_kappa
    meta = dio.read_strain_meta(args.strain)
    check_kappa(kappa, meta.n_channels)
    logger.info(f'[Dastrack] Extracting picks from {meta.n_samples}x{meta.n_channels} '
                f'{"log-RMS" if meta.is_log_rms else "raw"} strain.')

    picks = []
    batches = dio.read_strain_batches(args.strain, cfg.picker.batch_span_seconds)
    for log_batch in preprocess_stream(batches, cfg.preprocess):
        new_picks = extract_picks(smooth_channels(log_batch, kappa), cfg.picker, cluster_id_offset=len(picks))
        picks.extend(new_picks)

    dio.save_picks(picks, os.path.join(args.out, 'picks.csv'))
    logger.info(f'[Dastrack] Wrote {len(picks)} picks.')
    return EXIT_OK


def cmd_tune(args):
    """ Grid search (kappa, A, epsilon) against an event log; optionally fit the class model at the optimum. """
    cfg = _load_config(args)
    _prepare_out(args.out, cfg.to_dict())

    batch, events = dio.load_strain(args.strain), dio.load_events(args.events)
    result = tune(batch, events, cfg.tuner)
    with open(os.path.join(args.out, 'tune_result.json'), 'w') as fh:
        json.dump(result.to_dict(), fh, indent=2)
    result.surface_frame().to_csv(os.path.join(args.out, 'surface.csv'), index=False, float_format='%.17g')

    if args.fit_class_model:
        position, half_span = reference_site(batch.meta, cfg.tuner.reference_channel, result.best_kappa)
        model = fit_class_model(events, tuned_picks(batch, result, cfg.tuner),
                                reference_position=position, position_halfwidth=half_span)
        model.save(os.path.join(args.out, 'class_model.json'))
    return EXIT_OK


def cmd_track(args):
    """ Run the tracker over a pick CSV; score against a ground-truth CSV when given. """
    cfg = _load_config(args)
    _prepare_out(args.out, cfg.to_dict())

    tracker = Tracker(cfg.tracker, cfg.motion, cfg.class_model(args.class_model))
    records = tracker.run(dio.load_picks(args.picks))
    tracks_path = os.path.join(args.out, 'tracks.jsonl')
    dio.write_tracks(records, tracks_path)

    if args.truth is not None:
        truth = GroundTruth.from_csv(args.truth, dt=cfg.motion.dt)
        metrics = score_tracking(truth, records)
        with open(os.path.join(args.out, 'metrics.json'), 'w') as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
    return EXIT_OK


def cmd_report(args):
    """ Per-bin counts and per-direction car speeds from a track file. """
    cfg = _load_config(args)
    _prepare_out(args.out, cfg.to_dict())

    counts, velocities = report(dio.load_tracks(args.tracks), bin_minutes=cfg.report.bin_minutes)
    counts.to_csv(os.path.join(args.out, 'counts.csv'), index=False)
    velocities.to_csv(os.path.join(args.out, 'velocities.csv'), index=False)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='dastrack',
                                     description='Track and classify traffic in DAS strain data.')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='Log per-step detail.')
    verbosity.add_argument('--quiet', action='store_true', help='Log warnings and errors only.')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Simulate a scenario.')
    simulate.add_argument('scenario', help='Scenario JSON file.')
    simulate.add_argument('--out', required=True, help='Output directory.')
    simulate.add_argument('--seed', type=int, default=None, help='Override the scenario seed.')
    simulate.add_argument('--kind', choices=['picks', 'field', 'both'], default='both',
                          help='Write a pick CSV, a log-RMS strain file, or both.')
    simulate.set_defaults(func=cmd_simulate)

    extract = commands.add_parser('extract', help='Extract picks from a strain file.')
    extract.add_argument('strain', help='Strain file.')
    extract.add_argument('--kappa', type=int, default=None, help='Channel smoothing window.')
    extract.add_argument('--threshold', type=float, default=None, help='Log-RMS threshold A.')
    extract.add_argument('--epsilon', type=float, default=None, help='DBSCAN radius.')
    extract.add_argument('--batch-span', type=float, default=None, help='Batch length in seconds.')
    extract.set_defaults(func=cmd_extract)

    tune_cmd = commands.add_parser('tune', help='Grid search preprocessing and picking parameters.')
    tune_cmd.add_argument('strain', help='Strain file.')
    tune_cmd.add_argument('events', help='Event log CSV.')
    tune_cmd.add_argument('--fit-class-model', action='store_true',
                          help='Also fit class amplitudes at the reference site and write class_model.json.')
    tune_cmd.set_defaults(func=cmd_tune)

    track = commands.add_parser('track', help='Track objects in a pick CSV.')
    track.add_argument('picks', help='Pick CSV.')
    track.add_argument('--truth', default=None, help='Ground-truth CSV to score against.')
    track.add_argument('--N-init', dest='N_init', type=int, default=None,
                       help='Consecutive valid updates needed to confirm.')
    track.add_argument('--class-model', default=None, help='Class model JSON; overrides paths.class_model.')
    track.set_defaults(func=cmd_track)

    report_cmd = commands.add_parser('report', help='Count tracks and average speeds.')
    report_cmd.add_argument('tracks', help='Track JSON-lines file.')
    report_cmd.add_argument('--bin-minutes', type=float, default=None, help='Report bin width in minutes.')
    report_cmd.set_defaults(func=cmd_report)

    for sub in (extract, tune_cmd, track, report_cmd):
        sub.add_argument('--config', default=None, help='Run configuration JSON.')
        sub.add_argument('--out', required=True, help='Output directory.')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')

    try:
        return args.func(args)
    except _INVARIANT_ERRORS as err:
        logger.error(f'{err}')
        return EXIT_INVARIANT
    except _INPUT_ERRORS as err:
        logger.error(f'{err}')
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
