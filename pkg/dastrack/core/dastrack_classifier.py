#!/usr/bin/env python3
# coding: utf-8
""" Car/train class posteriors from pick amplitudes. """

# System-related libraries
import json
import logging
from dataclasses import asdict, dataclass, fields, replace

# Data-related libraries
import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError, FitError
from dastrack.core.dastrack_io import CLASS_LABELS

logger = logging.getLogger(__name__)

TAU2_FLOOR = 1e-4


@dataclass
class ClassModel:
    """ Two-class Gaussian amplitude model.

    Parameters
    ----------
    prior_pi : tuple
        Prior probabilities (car, train).
    alpha : tuple
        Mean log-amplitudes (car, train).
    tau2 : tuple
        Log-amplitude variances (car, train).
    use_amplitude_in_da : bool
        Scale association terms by the class-mixture amplitude likelihood.
    """
    prior_pi: tuple = (0.9, 0.1)
    alpha: tuple = (-8.0, -5.5)
    tau2: tuple = (0.25, 0.25)
    use_amplitude_in_da: bool = False

    def __post_init__(self):
        self.prior_pi = tuple(float(p) for p in self.prior_pi)
        self.alpha = tuple(float(a) for a in self.alpha)
        self.tau2 = tuple(float(t) for t in self.tau2)
        if len(self.prior_pi) != 2 or len(self.alpha) != 2 or len(self.tau2) != 2:
            raise ConfigError('[Dastrack] Class model needs exactly two classes.')
        if any(p < 0 for p in self.prior_pi) or abs(sum(self.prior_pi) - 1.0) > 1e-9:
            raise ConfigError(f'[Dastrack] Class priors must be non-negative and sum to 1, got {self.prior_pi}.')
        if any(not t > 0 for t in self.tau2):
            raise ConfigError(f'[Dastrack] Class variances must be > 0, got {self.tau2}.')

    @property
    def scale(self):
        return np.sqrt(np.asarray(self.tau2))

    @property
    def log_prior(self):
        with np.errstate(divide='ignore'):
            return np.log(np.asarray(self.prior_pi))

    def save(self, path):
        with open(path, 'w') as fh:
            json.dump(asdict(self), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f'[Dastrack] Class model {path} is not valid JSON: {err}') from None
        if not isinstance(raw, dict):
            raise ConfigError(f'[Dastrack] Class model {path} must be a JSON object.')
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f'[Dastrack] Unknown class model keys {sorted(unknown)}.')
        return cls(**raw)


def fit_class_model(events, picks, window=4.0, reference_position=None, position_halfwidth=None,
                    tau2_floor=TAU2_FLOOR):
    """ Estimate priors and amplitude moments from logged events.

    Each pick within ``window/2`` of a logged event is matched to the nearest
    such event and contributes its amplitude to that event's class.

    Parameters
    ----------
    events : EventLog
    picks : list of Pick
    window : float
        Matching window centred on each event. [s]
    reference_position : float, optional
        Only picks within ``position_halfwidth`` of this fiber position are used. [m]
    position_halfwidth : float, optional
        [m]
    tau2_floor : float
        Lower bound applied to positive sample variances.

    Returns
    -------
    model : ClassModel

    """

    if len(events) == 0:
        raise FitError('[Dastrack] Cannot fit a class model without logged events.')

    labels = events.frame['class_label'].to_numpy()
    event_times = events.times
    prior_car = events.by_class(CLASS_LABELS[0]).size / len(events)

    amplitudes = {label: [] for label in CLASS_LABELS}
    for pick in picks:
        if reference_position is not None and position_halfwidth is not None \
                and abs(pick.position - reference_position) > position_halfwidth:
            continue
        offsets = np.abs(event_times - pick.time)
        nearest = int(np.argmin(offsets))
        if offsets[nearest] <= window / 2:
            amplitudes[labels[nearest]].append(pick.log_amplitude)

    alpha, tau2 = [], []
    for label in CLASS_LABELS:
        values = np.asarray(amplitudes[label])
        if values.size < 2:
            raise FitError(f'[Dastrack] Class "{label}" has {values.size} matched picks, need at least 2.',
                           class_label=label)
        variance = float(np.var(values, ddof=1))
        if variance == 0:
            raise FitError(f'[Dastrack] Class "{label}" amplitudes have zero variance.', class_label=label)
        if variance < tau2_floor:
            logger.warning(f'[Dastrack] Class "{label}" variance {variance:.2e} raised to floor {tau2_floor}.')
            variance = tau2_floor
        alpha.append(float(values.mean()))
        tau2.append(variance)
        logger.info(f'[Dastrack] Class "{label}": {values.size} picks, alpha={alpha[-1]:.3f}, tau2={variance:.3f}.')

    return ClassModel(prior_pi=(prior_car, 1.0 - prior_car), alpha=tuple(alpha), tau2=tuple(tau2))


def class_loglik(amplitudes, model):
    """ [m, 2] log-likelihood of each amplitude under each class. """
    y = np.asarray(amplitudes, dtype=float).reshape(-1, 1)
    return norm.logpdf(y, loc=np.asarray(model.alpha), scale=model.scale)


def update_class_posterior(track, amplitudes, beta, model):
    """ Bayes update of a track's class posterior.

    The likelihood of class ``l`` is ``beta[0] + sum_j beta[j] * phi(y_j; alpha_l, tau2_l)``,
    evaluated in log space.

    Parameters
    ----------
    track : Track
    amplitudes : array_like
        Log-amplitudes of the ``m`` picks of this step.
    beta : array_like
        Association row of length ``m + 1``, index 0 for "undetected".
    model : ClassModel

    Returns
    -------
    track : Track
        Copy with updated ``log_class_posterior``.

    """

    beta = np.asarray(beta, dtype=float)
    if beta[0] >= 1.0:
        return track

    with np.errstate(divide='ignore'):
        log_beta = np.log(beta)
    log_terms = np.vstack([np.full(2, log_beta[0]),
                           log_beta[1:, None] + class_loglik(amplitudes, model)])
    log_posterior = track.log_class_posterior + logsumexp(log_terms, axis=0)
    return replace(track, log_class_posterior=log_posterior - logsumexp(log_posterior))


def amplitude_factors(amplitudes, posterior, model):
    """ Class-mixture amplitude likelihood ``sum_l p_l * phi(y; alpha_l, tau2_l)`` per pick. """
    log_mix = class_loglik(amplitudes, model) + np.log(np.clip(posterior, 1e-300, None))
    return np.exp(logsumexp(log_mix, axis=1))


def amplitude_refined_beta(base_terms, amplitudes, posterior, model):
    """ Association row with detection terms scaled by the amplitude mixture likelihood.

    Parameters
    ----------
    base_terms : array_like
        Unnormalized row ``[1 - P_D, P_D * phi_1 / lambda, ...]``.
    amplitudes : array_like
        Log-amplitudes of the picks, one per detection term.
    posterior : array_like
        Class posterior (p_car, p_train) of the previous step.
    model : ClassModel

    Returns
    -------
    beta : np.ndarray
        Normalized row.

    """

    terms = np.array(base_terms, dtype=float)
    if terms.size > 1:
        terms[1:] *= amplitude_factors(amplitudes, posterior, model)
    total = terms.sum()
    if total <= 0:
        terms = np.zeros_like(terms)
        terms[0] = 1.0
        return terms
    return terms / total


def final_label(track):
    """ Class with the largest posterior; ties go to car. """
    return CLASS_LABELS[int(np.argmax(track.class_posterior))]
