#!/usr/bin/env python3
# coding: utf-8
""" Grid search of (kappa, A, epsilon) against logged event times. """

# System-related libraries
import logging
from dataclasses import dataclass, field, replace

# Data-related libraries
import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError, DomainError, TuningError
from dastrack.core.dastrack_picker import PickerConfig, extract_picks_batched
from dastrack.core.dastrack_preprocess import PreprocessConfig, check_kappa, preprocess_raw, smooth_channels

logger = logging.getLogger(__name__)

SURFACE_COLUMNS = ['kappa', 'A', 'epsilon', 'score']


@dataclass
class TunerConfig:
    """ Grid search parameters.

    Parameters
    ----------
    kappa_grid : list of int
        Odd channel smoothing windows.
    A_grid : list of float
        Log-RMS thresholds.
    epsilon_grid : list of float
        Normalized DBSCAN radii.
    penalty_xi : float
        Weight of the pick-count mismatch term.
    reference_channel : int
        Channel index of the logging site.
    preprocess : PreprocessConfig
        Used when tuning on a raw batch.
    picker : PickerConfig
        Base picker configuration; threshold and radius are overridden per grid point.
    """
    kappa_grid: list = field(default_factory=lambda: [29, 31])
    A_grid: list = field(default_factory=lambda: [-9.4, -9.2, -9.0, -8.8, -8.6, -8.4, -8.2])
    epsilon_grid: list = field(default_factory=lambda: [0.03, 0.05, 0.07])
    penalty_xi: float = 10.0
    reference_channel: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    picker: PickerConfig = field(default_factory=PickerConfig)

    def __post_init__(self):
        if not self.kappa_grid or not self.A_grid or not self.epsilon_grid:
            raise ConfigError('[Dastrack] Tuning grids must be non-empty.')
        for kappa in self.kappa_grid:
            check_kappa(kappa)
        if any(not eps > 0 for eps in self.epsilon_grid):
            raise ConfigError(f'[Dastrack] epsilon_grid values must be > 0, got {self.epsilon_grid}.')
        if not self.penalty_xi >= 0:
            raise ConfigError(f'[Dastrack] penalty_xi must be >= 0, got {self.penalty_xi}.')
        if self.reference_channel < 0:
            raise ConfigError(f'[Dastrack] reference_channel must be >= 0, got {self.reference_channel}.')


@dataclass
class TuneResult:
    """ Outcome of `tune`.

    ``objective_surface`` maps ``(kappa, A, epsilon)`` to the penalized score.
    """
    best_kappa: int
    best_A: float
    best_epsilon: float
    objective_value: float
    objective_surface: dict

    def surface_frame(self):
        """ Surface as a table with columns ``kappa,A,epsilon,score``. """
        rows = [(kappa, A, eps, score) for (kappa, A, eps), score in self.objective_surface.items()]
        return pd.DataFrame(rows, columns=SURFACE_COLUMNS)

    def to_dict(self):
        return {'best_kappa': int(self.best_kappa),
                'best_A': float(self.best_A),
                'best_epsilon': float(self.best_epsilon),
                'objective_value': float(self.objective_value)}


def hausdorff(P, E):
    """ Hausdorff distance between two finite sets of times.

    Returns ``inf`` when either set is empty.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 1)
    E = np.asarray(E, dtype=float).reshape(-1, 1)
    if P.size == 0 or E.size == 0:
        return np.inf

    distance_matrix = cdist(P, E, metric='cityblock')
    max_dist_p_to_e = np.max(np.min(distance_matrix, axis=1))
    max_dist_e_to_p = np.max(np.min(distance_matrix, axis=0))
    return float(max(max_dist_p_to_e, max_dist_e_to_p))


def penalized_objective(P, E, xi):
    """ ``hausdorff(P, E) + xi * | |P| - |E| |``; ``inf`` for an empty pick set. """
    if len(E) == 0:
        raise DomainError('[Dastrack] Event set must be non-empty.')
    if len(P) == 0:
        return np.inf
    return hausdorff(P, E) + xi * abs(len(P) - len(E))


def reference_site(batch_meta, reference_channel, kappa):
    """ Fiber position of the reference channel and half the smoothing window around it. [m] """
    position = batch_meta.channel0_position + reference_channel * batch_meta.channel_spacing
    return position, 0.5 * kappa * batch_meta.channel_spacing


def reference_pick_times(picks, batch_meta, reference_channel, kappa):
    """ Times of picks within half a smoothing window of the reference channel. """
    reference_position, half_span = reference_site(batch_meta, reference_channel, kappa)
    return np.array([p.time for p in picks if abs(p.position - reference_position) <= half_span])


def _grid_order(cfg):
    """ Grid points in tie-break order: lexicographic on (A, epsilon, kappa). """
    return sorted(((kappa, A, eps) for kappa in cfg.kappa_grid for A in cfg.A_grid for eps in cfg.epsilon_grid),
                  key=lambda point: (point[1], point[2], point[0]))


def tune(batch, events, cfg):
    """ Select (kappa, A, epsilon) minimizing the penalized Hausdorff distance
    between reference-site pick times and logged event times.

    Parameters
    ----------
    batch : StrainBatch
        Raw strain or unsmoothed log-RMS batch.
    events : EventLog
        Logged events; each entry contributes one time regardless of its count.
    cfg : TunerConfig

    Returns
    -------
    result : TuneResult

    """

    if not 0 <= cfg.reference_channel < batch.meta.n_channels:
        raise DomainError(f'[Dastrack] reference_channel {cfg.reference_channel} outside '
                          f'{batch.meta.n_channels} channels.')
    span = (batch.meta.t0, batch.meta.t0 + (batch.meta.n_samples - 1) * batch.meta.sample_interval)
    in_span = events.sel(span)
    if len(in_span) < len(events):
        logger.info(f'[Dastrack] Ignoring {len(events) - len(in_span)} events outside the batch span {span}.')
    event_times = np.asarray(in_span.times, dtype=float)
    if event_times.size == 0:
        raise DomainError(f'[Dastrack] Tuning needs at least one logged event inside {span}.')

    log_batch = batch if batch.meta.is_log_rms else preprocess_raw(batch, cfg.preprocess)

    surface = {}
    smoothed = {}
    for kappa, A, eps in _grid_order(cfg):
        if kappa not in smoothed:
            smoothed[kappa] = smooth_channels(log_batch, kappa)
        picker_cfg = replace(cfg.picker, amplitude_threshold_A=A, dbscan_epsilon=eps)
        picks = extract_picks_batched(smoothed[kappa], picker_cfg)
        P = reference_pick_times(picks, log_batch.meta, cfg.reference_channel, kappa)
        surface[(kappa, A, eps)] = penalized_objective(P, event_times, cfg.penalty_xi)
        logger.debug(f'[Dastrack] kappa={kappa} A={A} eps={eps}: |P|={P.size} score={surface[(kappa, A, eps)]}')

    # Grid order already encodes the tie-break, so the first minimum wins.
    best_point = min(surface, key=lambda point: surface[point])
    best_score = surface[best_point]
    if not np.isfinite(best_score):
        raise TuningError(f'[Dastrack] Every grid point gave an empty pick set: {surface}', surface=surface)

    logger.info(f'[Dastrack] Best grid point kappa={best_point[0]} A={best_point[1]} '
                f'eps={best_point[2]} with score {best_score:.3f}.')
    return TuneResult(best_kappa=best_point[0], best_A=best_point[1], best_epsilon=best_point[2],
                      objective_value=best_score, objective_surface=surface)


def tuned_picks(batch, result, cfg):
    """ Picks of the whole batch at the grid point selected by `tune`.

    Parameters
    ----------
    batch : StrainBatch
        The batch given to `tune`.
    result : TuneResult
    cfg : TunerConfig

    Returns
    -------
    picks : list of Pick
    """
    log_batch = batch if batch.meta.is_log_rms else preprocess_raw(batch, cfg.preprocess)
    picker_cfg = replace(cfg.picker, amplitude_threshold_A=result.best_A, dbscan_epsilon=result.best_epsilon)
    return extract_picks_batched(smooth_channels(log_batch, result.best_kappa), picker_cfg)
