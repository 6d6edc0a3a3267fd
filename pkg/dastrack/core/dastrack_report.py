#!/usr/bin/env python3
# coding: utf-8
""" Traffic counts and mean speeds from track records.

Direction follows the velocity sign: positive (increasing fiber distance) is north.
"""

# System-related libraries
import logging

# Data-related libraries
import numpy as np
import pandas as pd

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError
from dastrack.core.dastrack_io import CLASS_LABELS, DIRECTIONS, TRACK_FIELDS

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ['track_id', 'birth_time', 'confirmed', 'p_car', 'class_label', 'mean_velocity', 'direction']
COUNT_COLUMNS = ['bin_start_s'] + list(CLASS_LABELS)
VELOCITY_COLUMNS = ['bin_start_s', 'direction', 'mean_speed_kmh', 'n_tracks']
MS_TO_KMH = 3.6


def summarize_tracks(records):
    """ One row per track from a table of per-step track records.

    Parameters
    ----------
    records : pandas.DataFrame or list of TrackRecord

    Returns
    -------
    summary : pandas.DataFrame
        Columns ``track_id, birth_time, confirmed, p_car, class_label,
        mean_velocity, direction``. Mean velocity is taken over confirmed
        steps, or over all live steps of a never-confirmed track.

    """

    if not isinstance(records, pd.DataFrame):
        records = pd.DataFrame([r if isinstance(r, dict) else r.to_dict() for r in records], columns=TRACK_FIELDS)
    if records.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)

    rows = []
    for track_id, group in records.sort_values('t', kind='mergesort').groupby('track_id', sort=True):
        confirmed = bool((group['status'] == 'confirmed').any())
        live = group[group['status'] != 'deleted']
        live = live if not live.empty else group
        velocities = group.loc[group['status'] == 'confirmed', 'vel_mean'] if confirmed else live['vel_mean']
        mean_velocity = float(velocities.mean())
        p_car = float(group['p_car'].iloc[-1])
        rows.append((int(track_id), float(group['t'].iloc[0]), confirmed, p_car,
                     CLASS_LABELS[0] if p_car >= 0.5 else CLASS_LABELS[1],
                     mean_velocity, DIRECTIONS[0] if mean_velocity > 0 else DIRECTIONS[1]))

    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def _bin_starts(times, bin_minutes):
    if not bin_minutes > 0:
        raise ConfigError(f'[Dastrack] bin_minutes must be > 0, got {bin_minutes}.')
    width = 60.0 * bin_minutes
    return np.floor(np.asarray(times, dtype=float) / width) * width


def count_table(summary, bin_minutes=30):
    """ Confirmed tracks per time bin (by birth time) and final class. """
    confirmed = summary[summary['confirmed'].astype(bool)].copy()
    if confirmed.empty:
        _bin_starts([], bin_minutes)
        return pd.DataFrame(columns=COUNT_COLUMNS)

    confirmed['bin_start_s'] = _bin_starts(confirmed['birth_time'], bin_minutes)
    counts = pd.crosstab(confirmed['bin_start_s'], confirmed['class_label'])
    counts = counts.reindex(columns=list(CLASS_LABELS), fill_value=0).reset_index()
    counts.columns.name = None
    return counts[COUNT_COLUMNS]


def velocity_table(summary, bin_minutes=30):
    """ Mean speed in km/h of confirmed car tracks per time bin and direction. """
    cars = summary[summary['confirmed'].astype(bool) & (summary['class_label'] == CLASS_LABELS[0])].copy()
    if cars.empty:
        _bin_starts([], bin_minutes)
        return pd.DataFrame(columns=VELOCITY_COLUMNS)

    cars['bin_start_s'] = _bin_starts(cars['birth_time'], bin_minutes)
    cars['speed_kmh'] = cars['mean_velocity'].abs() * MS_TO_KMH
    table = cars.groupby(['bin_start_s', 'direction'], sort=True)['speed_kmh'].agg(['mean', 'size']).reset_index()
    table.columns = VELOCITY_COLUMNS
    return table


def report(records, bin_minutes=30):
    """ ``(counts, velocities)`` tables for a track-record table. """
    summary = summarize_tracks(records)
    counts = count_table(summary, bin_minutes)
    velocities = velocity_table(summary, bin_minutes)
    logger.info(f'[Dastrack] {int(summary["confirmed"].astype(bool).sum()) if len(summary) else 0} confirmed '
                f'tracks out of {len(summary)}.')
    return counts, velocities
