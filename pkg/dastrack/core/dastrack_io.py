#!/usr/bin/env python3
# coding: utf-8

# System-related libraries
import os
import json
import logging
from dataclasses import dataclass, asdict, replace, fields
from typing import NamedTuple

# Data-related libraries
import numpy as np
import pandas as pd
import xarray as xr

# Project-related libraries
from dastrack.core.dastrack_errors import DataError, DomainError, FormatError, ParseError

logger = logging.getLogger(__name__)

STRAIN_MAGIC = 'DASTRACK-STRAIN 1'
STRAIN_END_HEADER = 'end_header'
STRAIN_DTYPE = np.dtype('<f4')

EVENT_COLUMNS = ['time', 'class', 'direction', 'count']
PICK_COLUMNS = ['time_s', 'position_m', 'log_amplitude', 'cluster_id']
TRACK_FIELDS = ['track_id', 't', 'pos_mean', 'vel_mean', 'pos_var', 'vel_var', 'p_car', 'status']

CLASS_LABELS = ('car', 'train')
DIRECTIONS = ('north', 'south')

# Headings used in hand-written logs.
_DIRECTION_ALIASES = {'north': 'north', 'n': 'north', '0': 'north',
                      'south': 'south', 's': 'south', '180': 'south'}


@dataclass(frozen=True)
class StrainMeta:
    """ Spatial and temporal metadata of a strain matrix.

    Parameters
    ----------
    channel_spacing : float
        Distance between channels. [m]
    channel0_position : float
        Fiber distance of channel 0 from the interrogator. [m]
    sample_interval : float
        Time between samples. [s]
    t0 : float
        Time of sample 0, scenario-relative. [s]
    n_channels : int
        Number of channels.
    n_samples : int
        Number of time samples.
    gauge_length : float, optional
        Gauge length, informational only. [m]
    is_log_rms : bool, optional
        True when values are log-RMS amplitudes instead of raw strain.
    """
    channel_spacing: float
    channel0_position: float
    sample_interval: float
    t0: float
    n_channels: int
    n_samples: int
    gauge_length: float = 0.0
    is_log_rms: bool = False

    def __post_init__(self):
        if not self.channel_spacing > 0:
            raise DomainError(f'[Dastrack] channel_spacing must be > 0, got {self.channel_spacing}.')
        if not self.sample_interval > 0:
            raise DomainError(f'[Dastrack] sample_interval must be > 0, got {self.sample_interval}.')
        if self.n_channels < 1 or self.n_samples < 1:
            raise DomainError(f'[Dastrack] Need at least one channel and one sample, '
                              f'got {self.n_samples}x{self.n_channels}.')

    @property
    def sample_rate(self):
        return 1.0 / self.sample_interval

    @property
    def duration(self):
        """ Time spanned by the samples. [s] """
        return self.n_samples * self.sample_interval


class StrainBatch:
    """ Wrapper :py:class: for `xarray.DataArray` holding a DAS strain matrix.
    Values are organized time-major, with dims ``('time', 'channel')``,
    a ``time`` coordinate in seconds and a ``position`` coordinate in meters
    along the fiber.

    Parameters
    ----------
    values : array_like
        Matrix of shape [n_samples, n_channels], raw strain or log-RMS amplitude.
    meta : StrainMeta
        Metadata matching ``values``.

    Returns
    -------
    batch : StrainBatch
        `StrainBatch` instance.

    """

    def __repr__(self):
        """ Return string representation of object
        """
        kind = 'log-RMS' if self.meta.is_log_rms else 'raw'
        return f'[Dastrack] StrainBatch ({kind}) \n' + str(self._xr_data)

    def __init__(self, values, meta, _xr_data=None):
        """ Initializing object.

        Parameters
        ----------
        _xr_data : xarray.DataArray, optional
            Instance of xarray.DataArray object, use internally.
        """

        self.meta = meta

        if _xr_data is not None:
            assert isinstance(_xr_data, xr.DataArray), \
                TypeError('[Dastrack] Parameter _xr_data incorrect type.')
            self._xr_data = _xr_data
        else:
            values = np.asarray(values)
            if values.ndim != 2 or values.shape != (meta.n_samples, meta.n_channels):
                raise DomainError(f'[Dastrack] Matrix shape {values.shape} does not match '
                                  f'meta ({meta.n_samples}, {meta.n_channels}).')
            _check_finite(values)
            self._xr_data = xr.DataArray(values, dims=('time', 'channel'),
                                         coords=self._init_coords(),
                                         attrs=asdict(meta))

    @classmethod
    def from_array(cls, values, channel_spacing=1.0, channel0_position=0.0, sample_interval=1.0,
                   t0=0.0, gauge_length=0.0, is_log_rms=False):
        """ Build a batch from a [n_samples, n_channels] matrix, deriving the counts. """
        values = np.asarray(values)
        if values.ndim != 2:
            raise DomainError(f'[Dastrack] Expected a 2D matrix, got {values.ndim} dims.')
        meta = StrainMeta(channel_spacing=float(channel_spacing),
                          channel0_position=float(channel0_position),
                          sample_interval=float(sample_interval),
                          t0=float(t0),
                          n_channels=values.shape[1],
                          n_samples=values.shape[0],
                          gauge_length=float(gauge_length),
                          is_log_rms=bool(is_log_rms))
        return cls(values, meta)

    def _init_coords(self):
        """ Initialize time and position coordinates
        """
        return {'time': self.meta.t0 + self.meta.sample_interval * np.arange(self.meta.n_samples),
                'position': ('channel', self.meta.channel0_position
                             + self.meta.channel_spacing * np.arange(self.meta.n_channels))}

    @property
    def values(self):
        return self._xr_data.values

    @property
    def times(self):
        return self._xr_data['time'].values

    @property
    def positions(self):
        return self._xr_data['position'].values

    def with_values(self, values, **meta_changes):
        """ Return a new batch with ``values`` and updated metadata.
        Sample and channel counts follow the shape of ``values``.
        """
        values = np.asarray(values)
        meta = replace(self.meta, n_samples=values.shape[0], n_channels=values.shape[1], **meta_changes)
        return StrainBatch(values, meta)

    def _update_range(self, dim_name, dim_range, mode='loose'):
        """ Setup data selection range. Assert values are in order, within range and valid.
        """

        # Make sure range has correct format ( a list with two values).
        assert isinstance(dim_range, (list, tuple)), f'[Dastrack] The variable {dim_name} is not a list.'
        assert len(dim_range) == 2, '[Dastrack] Range size need to be equal to two.'
        dim_range = list(dim_range)

        # Make sure the range is ordered from lower to higher.
        if dim_range[0] > dim_range[1]:
            dim_range = [dim_range[1], dim_range[0]]

        full_range = self._full_range(dim_name)

        if 'rigid' in mode:
            # Only accepting values within range
            for value in dim_range:
                if value < full_range[0] or value > full_range[1]:
                    raise DomainError(f'[Dastrack] {dim_name} value {value} is out of range {full_range}')
        else:
            # Use edges if values outside range
            for side, pick in ((0, max), (1, min)):
                clamped = pick(dim_range[side], full_range[side])
                if clamped != dim_range[side]:
                    logger.warning(f'[Dastrack] {dim_name} using edge value {full_range[side]} '
                                   f'since given value {dim_range[side]} is out of bounds.')
                    dim_range[side] = clamped

        return dim_range

    def _full_range(self, dim_name):
        """ Full selectable range of a dimension. """
        if dim_name == 'time_index':
            return [0, self.meta.n_samples]
        if dim_name == 'channel_index':
            return [0, self.meta.n_channels]
        if dim_name == 'time':
            return [float(self.times[0]), float(self.times[-1])]
        if dim_name == 'position':
            return [float(self.positions[0]), float(self.positions[-1])]
        raise ValueError(f'[Dastrack] Unknown dimension {dim_name}.')

    def isel(self, time_range=None, channel_range=None, mode='loose'):
        """
        Returns a new `StrainBatch` indexed along the sample and channel axes,
        using half-open integer ranges ``[start, stop)``.

        Parameters
        ----------
        time_range : list
            Two element list containing start and stop sample indices.
        channel_range : list
            Two element list containing start and stop channel indices.
        mode : str
            'loose' clamps out-of-bounds values to the edges, 'rigid' raises.

        Returns
        -------
        out : StrainBatch
            Sub-batch with metadata shifted to the selection.

        """

        t_slice = slice(0, self.meta.n_samples)
        c_slice = slice(0, self.meta.n_channels)

        if time_range is not None:
            time_range = self._update_range('time_index', time_range, mode=mode)
            t_slice = slice(int(time_range[0]), int(time_range[1]))
        if channel_range is not None:
            channel_range = self._update_range('channel_index', channel_range, mode=mode)
            c_slice = slice(int(channel_range[0]), int(channel_range[1]))

        if t_slice.stop <= t_slice.start or c_slice.stop <= c_slice.start:
            raise DomainError(f'[Dastrack] Empty selection time={time_range} channel={channel_range}.')

        # Selection of xarray instance
        _xr_data = self._xr_data.isel(time=t_slice, channel=c_slice)
        meta = replace(self.meta,
                       t0=self.meta.t0 + t_slice.start * self.meta.sample_interval,
                       channel0_position=self.meta.channel0_position + c_slice.start * self.meta.channel_spacing,
                       n_samples=t_slice.stop - t_slice.start,
                       n_channels=c_slice.stop - c_slice.start)
        _xr_data.attrs = asdict(meta)

        return StrainBatch(None, meta, _xr_data=_xr_data)

    def sel(self, time_range=None, position_range=None, mode='loose'):
        """
        Returns a new `StrainBatch` holding the samples with time and the
        channels with position inside the given closed ranges.

        In contrast to `StrainBatch.isel`, indexers for this method use
        physical values, in seconds and meters.

        Parameters
        ----------
        time_range : list
            Two element list containing min and max time. [s]
        position_range : list
            Two element list containing min and max fiber position. [m]

        Returns
        -------
        out : StrainBatch

        """

        index_time, index_channel = None, None

        if time_range is not None:
            time_range = self._update_range('time', time_range, mode=mode)
            index_time = [int(np.searchsorted(self.times, time_range[0], side='left')),
                          int(np.searchsorted(self.times, time_range[1], side='right'))]
        if position_range is not None:
            position_range = self._update_range('position', position_range, mode=mode)
            index_channel = [int(np.searchsorted(self.positions, position_range[0], side='left')),
                             int(np.searchsorted(self.positions, position_range[1], side='right'))]

        return self.isel(time_range=index_time, channel_range=index_channel, mode='rigid')

    def iter_batches(self, span_seconds):
        """ Yield consecutive sub-batches covering ``span_seconds`` each (the last may be shorter). """
        step = samples_per_span(span_seconds, self.meta.sample_interval)
        for start in range(0, self.meta.n_samples, step):
            yield self.isel(time_range=[start, min(start + step, self.meta.n_samples)])


class Event(NamedTuple):
    time: float
    class_label: str
    direction: str
    count: int


class EventLog:
    """ Time-referenced list of logged cars and trains.

    Parameters
    ----------
    entries : iterable of Event
        Logged events; stored sorted by time.
    """

    def __repr__(self):
        return f'[Dastrack] EventLog with {len(self)} entries \n' + str(self.frame)

    def __init__(self, entries=()):
        entries = [Event(*entry) for entry in entries]
        frame = pd.DataFrame(entries, columns=['time', 'class_label', 'direction', 'count'])
        self.frame = frame.sort_values('time', kind='mergesort').reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    @property
    def entries(self):
        return [Event(float(time), class_label, direction, int(count))
                for time, class_label, direction, count in self.frame.itertuples(index=False, name=None)]

    @property
    def times(self):
        return self.frame['time'].to_numpy(dtype=float)

    def by_class(self, class_label):
        """ Times of the events of one class. """
        return self.frame.loc[self.frame['class_label'] == class_label, 'time'].to_numpy(dtype=float)

    def sel(self, time_range):
        """ New `EventLog` with events inside the closed time range. """
        mask = (self.frame['time'] >= time_range[0]) & (self.frame['time'] <= time_range[1])
        return EventLog(self.frame.loc[mask].itertuples(index=False, name=None))


def samples_per_span(span_seconds, sample_interval):
    """ Number of samples in a processing batch of ``span_seconds``. """
    if not span_seconds > 0:
        raise DomainError(f'[Dastrack] Batch span must be > 0, got {span_seconds}.')
    return max(1, int(round(span_seconds / sample_interval)))


def _check_finite(values, row_offset=0):
    """ Raise DataError at the first non-finite cell. """
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise DataError(f'[Dastrack] Non-finite value {values[row, col]} at (row {row + row_offset}, col {col}).',
                        row=row + row_offset, col=col)


def _format_header(meta):
    """ Header lines for a strain file. """
    lines = [STRAIN_MAGIC]
    for f in fields(meta):
        value = getattr(meta, f.name)
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        else:
            value = repr(value)
        lines.append(f'{f.name}={value}')
    lines.append(STRAIN_END_HEADER)
    return ('\n'.join(lines) + '\n').encode('ascii')


def _parse_header(fh, filename):
    """ Read the header of an open strain file, return `StrainMeta`. """

    magic = fh.readline().decode('ascii', errors='replace').strip()
    if magic != STRAIN_MAGIC:
        raise FormatError(f'[Dastrack] File {filename} is not a strain file (got header "{magic}").')

    raw = {}
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f'[Dastrack] File {filename} header has no "{STRAIN_END_HEADER}" line.')
        line = line.decode('ascii', errors='replace').strip()
        if line == STRAIN_END_HEADER:
            break
        if '=' not in line:
            raise FormatError(f'[Dastrack] Malformed header line "{line}" in {filename}.')
        key, value = line.split('=', 1)
        raw[key.strip()] = value.strip()

    converters = {'n_channels': int, 'n_samples': int, 'is_log_rms': _parse_bool}
    kwargs = {}
    for f in fields(StrainMeta):
        if f.name not in raw:
            if f.name in ('gauge_length', 'is_log_rms'):
                continue
            raise FormatError(f'[Dastrack] Header of {filename} is missing "{f.name}".')
        try:
            kwargs[f.name] = converters.get(f.name, float)(raw.pop(f.name))
        except ValueError:
            raise FormatError(f'[Dastrack] Header of {filename} has a bad value for "{f.name}".') from None
    if raw:
        raise FormatError(f'[Dastrack] Header of {filename} has unknown keys {sorted(raw)}.')

    try:
        return StrainMeta(**kwargs)
    except DomainError as err:
        raise FormatError(str(err)) from None


def _parse_bool(value):
    value = value.lower()
    if value in ('true', '1'):
        return True
    if value in ('false', '0'):
        return False
    raise ValueError(value)


def _read_rows(fh, meta, n_rows, row_offset, filename):
    """ Read ``n_rows`` time rows from the payload at the current position. """
    count = n_rows * meta.n_channels
    data = np.fromfile(fh, dtype=STRAIN_DTYPE, count=count)
    if data.size != count:
        bad_row = row_offset + data.size // meta.n_channels
        raise FormatError(f'[Dastrack] File {filename} payload ends inside row {bad_row}: '
                          f'header declares {meta.n_samples} rows of {meta.n_channels} values.')
    values = data.reshape(n_rows, meta.n_channels)
    _check_finite(values, row_offset=row_offset)
    return values


def load_strain(path):
    """ Load a strain file written by `save_strain`.

    Parameters
    ----------
    path : str
        Strain file path.

    Returns
    -------
    batch : StrainBatch
        Batch with float32 values.

    """

    if not os.path.isfile(path):
        raise FileNotFoundError(f'[Dastrack] File {path} not found.')

    with open(path, 'rb') as fh:
        meta = _parse_header(fh, path)
        values = _read_rows(fh, meta, meta.n_samples, 0, path)
        if fh.read(1):
            raise FormatError(f'[Dastrack] File {path} has data beyond the {meta.n_samples} declared rows.')

    logger.debug(f'[Dastrack] Loaded {path}: {meta.n_samples}x{meta.n_channels}.')
    return StrainBatch(values, meta)


def read_strain_batches(path, span_seconds):
    """ Stream a strain file as consecutive batches of ``span_seconds``.
    Only one batch is held in memory at a time.
    """

    if not os.path.isfile(path):
        raise FileNotFoundError(f'[Dastrack] File {path} not found.')

    with open(path, 'rb') as fh:
        meta = _parse_header(fh, path)
        step = samples_per_span(span_seconds, meta.sample_interval)
        for start in range(0, meta.n_samples, step):
            n_rows = min(step, meta.n_samples - start)
            values = _read_rows(fh, meta, n_rows, start, path)
            yield StrainBatch(values, replace(meta, t0=meta.t0 + start * meta.sample_interval, n_samples=n_rows))


def read_strain_meta(path):
    """ Header of a strain file, without reading the payload. """
    with open(path, 'rb') as fh:
        return _parse_header(fh, path)


def save_strain(batch, path):
    """ Save a batch as a header plus little-endian float32 payload.

    Values round-trip exactly when they are float32-representable.

    Parameters
    ----------
    batch : StrainBatch
    path : str

    """

    values = np.asarray(batch.values)
    payload = values.astype(STRAIN_DTYPE)
    _check_finite(payload)

    with open(path, 'wb') as fh:
        fh.write(_format_header(batch.meta))
        fh.write(np.ascontiguousarray(payload).tobytes(order='C'))


def load_events(path):
    """ Load a comma-separated event log with header ``time,class,direction,count``.

    Class and direction are parsed case-insensitively; headings 0/180 map to
    north/south.

    Returns
    -------
    log : EventLog
        Entries sorted by time.

    """

    if not os.path.isfile(path):
        raise FileNotFoundError(f'[Dastrack] File {path} not found.')
    if os.path.getsize(path) == 0:
        return EventLog()

    frame = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    frame.columns = [c.strip().lower() for c in frame.columns]
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f'[Dastrack] Event file {path} misses columns {missing}.')

    entries = []
    for idx, row in enumerate(frame[EVENT_COLUMNS].itertuples(index=False)):
        line = idx + 2  # header is line 1
        time, class_label, direction, count = (str(v).strip() for v in row)
        try:
            time = float(time)
            count = int(count)
        except ValueError:
            raise ParseError(f'[Dastrack] Bad time or count on line {line} of {path}.', line=line) from None
        class_label = class_label.lower()
        if class_label not in CLASS_LABELS:
            raise ParseError(f'[Dastrack] Unknown class "{class_label}" on line {line} of {path}.', line=line)
        if direction.lower() not in _DIRECTION_ALIASES:
            raise ParseError(f'[Dastrack] Unknown direction "{direction}" on line {line} of {path}.', line=line)
        if count < 1 or not np.isfinite(time):
            raise ParseError(f'[Dastrack] Invalid entry on line {line} of {path}.', line=line)
        entries.append(Event(time, class_label, _DIRECTION_ALIASES[direction.lower()], count))

    return EventLog(entries)


def save_events(log, path):
    """ Save an `EventLog` in the format read by `load_events`. """
    frame = log.frame.rename(columns={'class_label': 'class'})[EVENT_COLUMNS]
    frame.to_csv(path, index=False)


def save_picks(picks, path):
    """ Save picks as CSV ``time_s,position_m,log_amplitude,cluster_id``. """
    from dastrack.core.dastrack_picker import picks_to_frame

    picks_to_frame(picks).to_csv(path, index=False, float_format='%.17g')


def load_picks(path):
    """ Load picks written by `save_picks`, sorted by time. """
    from dastrack.core.dastrack_picker import picks_from_frame

    if not os.path.isfile(path):
        raise FileNotFoundError(f'[Dastrack] File {path} not found.')
    if os.path.getsize(path) == 0:
        return []

    frame = pd.read_csv(path)
    missing = [c for c in PICK_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f'[Dastrack] Pick file {path} misses columns {missing}.')
    _check_finite(frame[PICK_COLUMNS[:3]].to_numpy(dtype=float))

    return picks_from_frame(frame.sort_values(['time_s', 'position_m'], kind='mergesort'))


def write_tracks(records, path):
    """ Write track records as line-delimited JSON. """
    with open(path, 'w') as fh:
        for record in records:
            if not isinstance(record, dict):
                record = record.to_dict()
            fh.write(json.dumps({key: record[key] for key in TRACK_FIELDS}) + '\n')


def load_tracks(path):
    """ Load line-delimited JSON track records into a `pandas.DataFrame`. """

    if not os.path.isfile(path):
        raise FileNotFoundError(f'[Dastrack] File {path} not found.')
    if os.path.getsize(path) == 0:
        return pd.DataFrame(columns=TRACK_FIELDS)

    try:
        frame = pd.read_json(path, lines=True)
    except ValueError as err:
        raise FormatError(f'[Dastrack] Track file {path} is not valid JSON lines: {err}') from None
    missing = [c for c in TRACK_FIELDS if c not in frame.columns]
    if missing:
        raise FormatError(f'[Dastrack] Track file {path} misses fields {missing}.')
    return frame[TRACK_FIELDS]


def spatial_sampling_interval(delta_tau, n_g, c=2.998e8):
    """ Minimum spatial sampling interval of an interrogator.

    Parameters
    ----------
    delta_tau : float
        Sampling period of the backscatter receiver. [s]
    n_g : float
        Group refractive index of the fiber.
    c : float
        Speed of light in vacuum. [m/s]

    Returns
    -------
    ssi : float
        ``delta_tau * c / (2 * n_g)``. [m]

    """
    for name, value in (('delta_tau', delta_tau), ('n_g', n_g), ('c', c)):
        if not value > 0:
            raise DomainError(f'[Dastrack] {name} must be > 0, got {value}.')
    return delta_tau * c / (2.0 * n_g)
