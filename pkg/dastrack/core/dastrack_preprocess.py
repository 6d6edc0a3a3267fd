#!/usr/bin/env python3
# coding: utf-8
""" Raw strain to smoothed log-RMS batches. """

# System-related libraries
import logging
from dataclasses import dataclass

# Data-related libraries
import numpy as np
from scipy import ndimage, signal

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError, DomainError

logger = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    """ Preprocessing parameters.

    Parameters
    ----------
    target_rate : float
        Sampling rate after resampling. [Hz]
    band_low, band_high : float
        Bandpass edges. [Hz]
    rms_window : float
        Rolling RMS window length. [s]
    rms_overlap_fraction : float
        Overlap between consecutive RMS windows, in [0, 1).
    smoothing_window_kappa : int
        Odd number of channels in the moving average.
    log_floor : float
        Value used for log of zero, and lower clamp of the log transform.
    filter_order : int
        Butterworth order for the bandpass and the anti-alias filter.
    resample_cutoff : float
        Anti-alias lowpass corner used before decimation. [Hz]
    """
    target_rate: float = 1000.0
    band_low: float = 15.0
    band_high: float = 150.0
    rms_window: float = 0.4
    rms_overlap_fraction: float = 0.5
    smoothing_window_kappa: int = 31
    log_floor: float = -30.0
    filter_order: int = 4
    resample_cutoff: float = 400.0

    def __post_init__(self):
        if not 0 < self.band_low < self.band_high < self.target_rate / 2:
            raise ConfigError(f'[Dastrack] Need 0 < band_low < band_high < target_rate/2, got '
                              f'{self.band_low}, {self.band_high}, {self.target_rate}.')
        if not self.rms_window > 0:
            raise ConfigError(f'[Dastrack] rms_window must be > 0, got {self.rms_window}.')
        if not 0 <= self.rms_overlap_fraction < 1:
            raise ConfigError(f'[Dastrack] rms_overlap_fraction must be in [0, 1), got {self.rms_overlap_fraction}.')
        check_kappa(self.smoothing_window_kappa)
        if self.filter_order < 1:
            raise ConfigError(f'[Dastrack] filter_order must be >= 1, got {self.filter_order}.')
        if not 0 < self.resample_cutoff < self.target_rate / 2:
            raise ConfigError(f'[Dastrack] resample_cutoff must be in (0, target_rate/2), got {self.resample_cutoff}.')


def check_kappa(kappa, n_channels=None):
    if int(kappa) != kappa or kappa < 1 or kappa % 2 == 0:
        raise ConfigError(f'[Dastrack] Smoothing window kappa must be an odd positive integer, got {kappa}.')
    if n_channels is not None and kappa > n_channels:
        raise ConfigError(f'[Dastrack] Smoothing window kappa={kappa} exceeds {n_channels} channels.')


def _require_raw(batch, operation):
    if batch.meta.is_log_rms:
        raise DomainError(f'[Dastrack] {operation} expects a raw strain batch, got log-RMS.')


def decimation_factor(rate, cfg):
    """ Integer factor taking ``rate`` down to ``cfg.target_rate``. """
    ratio = rate / cfg.target_rate
    q = int(round(ratio))
    if q < 1 or not np.isclose(ratio, q, rtol=1e-9, atol=0):
        raise ConfigError(f'[Dastrack] Cannot decimate {rate} Hz to {cfg.target_rate} Hz by an integer factor.')
    return q


def resample(batch, cfg):
    """ Decimate a raw batch to ``cfg.target_rate``.

    An anti-alias Butterworth lowpass at ``cfg.resample_cutoff`` is applied
    forward-backward before keeping every q-th sample.

    Parameters
    ----------
    batch : StrainBatch
        Raw strain batch.
    cfg : PreprocessConfig

    Returns
    -------
    out : StrainBatch
        Batch sampled at ``cfg.target_rate``.

    """

    _require_raw(batch, 'resample')
    rate = batch.meta.sample_rate
    q = decimation_factor(rate, cfg)
    if q == 1:
        return batch

    sos = signal.butter(cfg.filter_order, cfg.resample_cutoff, btype='lowpass', fs=rate, output='sos')
    filtered = _sosfiltfilt(sos, batch.values)

    logger.debug(f'[Dastrack] Decimating {rate} Hz by {q}.')
    return batch.with_values(filtered[::q], sample_interval=batch.meta.sample_interval * q)


def detrend(batch):
    """ Remove the least-squares line over time from every channel. """

    _require_raw(batch, 'detrend')
    if batch.meta.n_samples < 2:
        raise DomainError('[Dastrack] Detrending needs at least 2 samples.')

    values = np.asarray(batch.values, dtype=float)
    return batch.with_values(signal.detrend(values, axis=0, type='linear'))


def bandpass(batch, cfg):
    """ Zero-phase Butterworth bandpass between ``cfg.band_low`` and ``cfg.band_high``.

    Parameters
    ----------
    batch : StrainBatch
        Detrended raw batch.
    cfg : PreprocessConfig

    Returns
    -------
    out : StrainBatch

    """

    _require_raw(batch, 'bandpass')
    nyquist = batch.meta.sample_rate / 2
    if not 0 < cfg.band_low < cfg.band_high < nyquist:
        raise ConfigError(f'[Dastrack] Band [{cfg.band_low}, {cfg.band_high}] Hz invalid '
                          f'for Nyquist {nyquist} Hz.')

    sos = signal.butter(cfg.filter_order, [cfg.band_low, cfg.band_high], btype='bandpass',
                        fs=batch.meta.sample_rate, output='sos')
    return batch.with_values(_sosfiltfilt(sos, batch.values))


def _sosfiltfilt(sos, values):
    """ Forward-backward SOS filtering along time. """
    values = np.asarray(values, dtype=float)
    try:
        return signal.sosfiltfilt(sos, values, axis=0)
    except ValueError as err:
        raise DomainError(f'[Dastrack] Batch of {values.shape[0]} samples too short to filter: {err}') from None


def rms_window_samples(cfg, sample_interval):
    """ Window and hop lengths, in samples, of the rolling RMS. """
    window = int(round(cfg.rms_window / sample_interval))
    hop = max(1, int(round(window * (1.0 - cfg.rms_overlap_fraction))))
    return window, hop


def rolling_rms(batch, cfg):
    """ Rolling root-mean-square along time, per channel.

    Window ``j`` covers samples ``[j*hop, j*hop + window)``; the output time
    stamp is the window centre.

    Parameters
    ----------
    batch : StrainBatch
        Raw (filtered) strain batch.
    cfg : PreprocessConfig

    Returns
    -------
    out : StrainBatch
        RMS batch with sample interval ``hop`` input samples (0.2 s for defaults).

    """

    _require_raw(batch, 'rolling_rms')
    dt = batch.meta.sample_interval
    window, hop = rms_window_samples(cfg, dt)

    if window < 2:
        raise ConfigError(f'[Dastrack] RMS window of {window} samples is shorter than 2 samples.')
    if batch.meta.n_samples < window:
        raise DomainError(f'[Dastrack] Batch of {batch.meta.n_samples} samples shorter than RMS window {window}.')

    squares = np.square(np.asarray(batch.values, dtype=float))
    windows = np.lib.stride_tricks.sliding_window_view(squares, window, axis=0)[::hop]
    rms = np.sqrt(windows.mean(axis=-1))

    return batch.with_values(rms,
                             t0=batch.meta.t0 + 0.5 * (window - 1) * dt,
                             sample_interval=hop * dt)


def log_transform(batch, floor=-30.0):
    """ Natural log of an RMS batch, clamped below at ``floor``. """

    if batch.meta.is_log_rms:
        raise DomainError('[Dastrack] Batch is already log-RMS.')
    values = np.asarray(batch.values, dtype=float)
    if (values < 0).any():
        row, col = (int(i) for i in np.argwhere(values < 0)[0])
        raise DomainError(f'[Dastrack] Negative RMS value at (row {row}, col {col}).')

    with np.errstate(divide='ignore'):
        logs = np.log(values)
    return batch.with_values(np.maximum(logs, floor), is_log_rms=True)


def smooth_channels(batch, kappa):
    """ Centered moving average over ``kappa`` channels at fixed time.
    Windows are truncated at the first and last channels.

    Parameters
    ----------
    batch : StrainBatch
        Log-RMS batch.
    kappa : int
        Odd window size in channels.

    Returns
    -------
    out : StrainBatch

    """

    check_kappa(kappa, batch.meta.n_channels)
    if kappa == 1:
        return batch

    values = np.asarray(batch.values, dtype=float)
    # Zero-padded window sums divided by the in-range channel count.
    sums = ndimage.uniform_filter1d(values, size=kappa, axis=1, mode='constant', cval=0.0)
    counts = ndimage.uniform_filter1d(np.ones(values.shape[1]), size=kappa, mode='constant', cval=0.0)
    return batch.with_values(sums / counts)


def preprocess_raw(batch, cfg):
    """ Resample, detrend, bandpass, rolling RMS and log transform a raw batch.
    Channel smoothing is left to the caller since its window is tuned.
    """

    logger.info(f'[Dastrack] Preprocessing {batch.meta.n_samples}x{batch.meta.n_channels} raw batch.')
    batch = resample(batch, cfg)
    batch = detrend(batch)
    batch = bandpass(batch, cfg)
    batch = rolling_rms(batch, cfg)
    return log_transform(batch, floor=cfg.log_floor)


def preprocess_stream(batches, cfg):
    """ Log-RMS batches from a stream of consecutive batches.

    Each raw batch is cut after its last complete RMS window; the remaining
    samples are carried into the next batch, so no window straddles a batch
    boundary. Samples at the end of the stream too few for one window are
    dropped. Log-RMS batches pass through unchanged.

    Parameters
    ----------
    batches : iterable of StrainBatch
        Consecutive batches of one recording.
    cfg : PreprocessConfig

    Yields
    ------
    batch : StrainBatch
        Log-RMS batch.

    """

    carry = None
    for batch in batches:
        if batch.meta.is_log_rms:
            yield batch
            continue
        if carry is not None:
            batch = carry.with_values(np.concatenate([carry.values, batch.values], axis=0))
            carry = None

        q = decimation_factor(batch.meta.sample_rate, cfg)
        window, hop = rms_window_samples(cfg, batch.meta.sample_interval * q)
        window, hop = window * q, hop * q
        n_samples = batch.meta.n_samples
        if n_samples < window:
            carry = batch
            continue

        n_windows = 1 + (n_samples - window) // hop
        used = (n_windows - 1) * hop + window
        yield preprocess_raw(batch.isel(time_range=[0, used]), cfg)
        if n_windows * hop < n_samples:
            carry = batch.isel(time_range=[n_windows * hop, n_samples])

    if carry is not None:
        logger.debug(f'[Dastrack] Dropped {carry.meta.n_samples} trailing samples shorter than one RMS window.')
