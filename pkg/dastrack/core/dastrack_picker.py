#!/usr/bin/env python3
# coding: utf-8
""" Threshold and DBSCAN-cluster a smoothed log-RMS batch into picks. """

# System-related libraries
import logging
from collections import deque
from dataclasses import dataclass, field

# Data-related libraries
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError, DomainError
from dastrack.core.dastrack_io import PICK_COLUMNS

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass
class PickerConfig:
    """ Picking parameters.

    Parameters
    ----------
    amplitude_threshold_A : float
        Log-RMS threshold; cells strictly above it are candidates.
    dbscan_epsilon : float
        Neighbourhood radius in batch-normalized (time, channel) units.
    min_pts : int
        Minimum neighbourhood size of a core point (the point itself included).
    batch_span_seconds : float
        Length of one processing batch. [s]
    """
    amplitude_threshold_A: float = -8.8
    dbscan_epsilon: float = 0.05
    min_pts: int = 1
    batch_span_seconds: float = 6.0

    def __post_init__(self):
        if not self.dbscan_epsilon > 0:
            raise ConfigError(f'[Dastrack] dbscan_epsilon must be > 0, got {self.dbscan_epsilon}.')
        if self.min_pts < 1:
            raise ConfigError(f'[Dastrack] min_pts must be >= 1, got {self.min_pts}.')
        if not self.batch_span_seconds > 0:
            raise ConfigError(f'[Dastrack] batch_span_seconds must be > 0, got {self.batch_span_seconds}.')


@dataclass(frozen=True)
class Pick:
    """ One clustered detection.

    Parameters
    ----------
    time : float
        Cluster mean time. [s]
    position : float
        Cluster mean fiber position. [m]
    log_amplitude : float
        Mean smoothed log-RMS of the cluster members.
    cluster_size : int
        Number of member cells.
    cluster_id : int
        Cluster label, unique within one extraction run.
    """
    time: float
    position: float
    log_amplitude: float
    cluster_size: int = 1
    cluster_id: int = 0


@dataclass
class LabeledPointSet:
    """ DBSCAN output: integer cells and their cluster labels (-1 for noise).

    ``points`` rows are ``(time_index, channel_index)``.
    """
    points: np.ndarray
    labels: np.ndarray
    core: np.ndarray = field(default=None)

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def clusters(self):
        """ Member indices of each cluster, ordered by label. """
        return [np.flatnonzero(self.labels == label) for label in range(self.n_clusters)]


def threshold_exceedances(batch, A):
    """ All ``(time_index, channel_index)`` cells with value strictly above ``A``. """
    return np.argwhere(np.asarray(batch.values) > A)


def normalize_points(points, n_time, n_channels):
    """ Scale integer cells by the batch extent: time by ``n_time``, channel by ``n_channels``. """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points / np.array([n_time, n_channels], dtype=float)


def dbscan(points, epsilon, min_pts):
    """ Density-based clustering with a strict ``dist < epsilon`` neighbourhood.

    Parameters
    ----------
    points : array_like
        [N, d] coordinates, already normalized.
    epsilon : float
        Neighbourhood radius.
    min_pts : int
        Core-point threshold on the neighbourhood size, point itself included.

    Returns
    -------
    labeled : LabeledPointSet
        Labels numbered in order of the lowest-index core point of each cluster.

    """

    coords = np.asarray(points, dtype=float)
    if coords.ndim == 1:
        coords = coords.reshape(-1, 1)
    n_points = coords.shape[0]
    labels = np.full(n_points, NOISE, dtype=int)

    if n_points == 0:
        return LabeledPointSet(points=coords, labels=labels, core=np.zeros(0, dtype=bool))

    # Closed-ball query at the largest float below epsilon gives the open ball.
    radius = np.nextafter(epsilon, 0.0)
    neighborhoods = cKDTree(coords).query_ball_point(coords, r=radius)
    is_core = np.array([len(nbrs) >= min_pts for nbrs in neighborhoods])

    cluster_id = 0
    for i in range(n_points):
        if labels[i] != NOISE or not is_core[i]:
            continue

        labels[i] = cluster_id
        queue = deque([i])
        while queue:
            current = queue.popleft()
            for neighbor in neighborhoods[current]:
                if labels[neighbor] != NOISE:
                    continue
                labels[neighbor] = cluster_id
                if is_core[neighbor]:
                    queue.append(neighbor)

        cluster_id += 1

    return LabeledPointSet(points=coords, labels=labels, core=is_core)


def extract_picks(batch, cfg, cluster_id_offset=0):
    """ One pick per DBSCAN cluster of threshold exceedances in one batch.

    Parameters
    ----------
    batch : StrainBatch
        Smoothed log-RMS batch covering one processing batch.
    cfg : PickerConfig
    cluster_id_offset : int, optional
        Added to the cluster labels stored on the picks.

    Returns
    -------
    picks : list of Pick
        Sorted by time, then position.

    """

    if not batch.meta.is_log_rms:
        raise DomainError('[Dastrack] Picking expects a log-RMS batch.')

    cells = threshold_exceedances(batch, cfg.amplitude_threshold_A)
    if cells.size == 0:
        return []

    coords = normalize_points(cells, batch.meta.n_samples, batch.meta.n_channels)
    labeled = dbscan(coords, cfg.dbscan_epsilon, cfg.min_pts)
    values = np.asarray(batch.values)

    picks = []
    for label, members in enumerate(labeled.clusters()):
        member_cells = cells[members]
        mean_t, mean_c = member_cells.mean(axis=0)
        picks.append(Pick(time=batch.meta.t0 + mean_t * batch.meta.sample_interval,
                          position=batch.meta.channel0_position + mean_c * batch.meta.channel_spacing,
                          log_amplitude=float(values[member_cells[:, 0], member_cells[:, 1]].mean()),
                          cluster_size=int(members.size),
                          cluster_id=cluster_id_offset + label))

    picks.sort(key=lambda p: (p.time, p.position))
    logger.debug(f'[Dastrack] {len(picks)} picks from {cells.shape[0]} exceedances at t0={batch.meta.t0:.2f}s.')
    return picks


def extract_picks_batched(batch, cfg, cluster_id_offset=0):
    """ Extract picks span by span; clusters are not merged across spans. """
    picks = []
    for sub_batch in batch.iter_batches(cfg.batch_span_seconds):
        new_picks = extract_picks(sub_batch, cfg, cluster_id_offset=cluster_id_offset)
        cluster_id_offset += len(new_picks)
        picks.extend(new_picks)
    return picks


def picks_to_frame(picks):
    """ Picks as a table with the pick CSV columns. """
    return pd.DataFrame([(p.time, p.position, p.log_amplitude, p.cluster_id) for p in picks],
                        columns=PICK_COLUMNS)


def picks_from_frame(frame):
    """ Picks from a table with the pick CSV columns. """
    return [Pick(time=float(t), position=float(x), log_amplitude=float(y), cluster_id=int(c))
            for t, x, y, c in frame[PICK_COLUMNS].itertuples(index=False, name=None)]
