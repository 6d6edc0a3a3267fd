#!/usr/bin/env python3
# coding: utf-8
""" JPDA multi-object tracker on a 1D fiber segment.

Constant-velocity Kalman prediction and update, chi-square gating, exact
enumeration of valid data associations, moment-matched JPDA updates and
FOV-based track initiation, confirmation and deletion.
"""

# System-related libraries
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

# Data-related libraries
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import chi2, norm

# Project-related libraries
from dastrack.core.dastrack_classifier import (ClassModel, amplitude_factors, amplitude_refined_beta,
                                               update_class_posterior)
from dastrack.core.dastrack_errors import ConfigError, HypothesisOverflow, InvariantError, NumericError

logger = logging.getLogger(__name__)

UNDETECTED = 0


class TrackStatus(str, Enum):
    HOLDING = 'holding'
    CONFIRMED = 'confirmed'
    DELETED = 'deleted'


# Allowed lifecycle transitions.
_TRANSITIONS = {TrackStatus.HOLDING: {TrackStatus.CONFIRMED, TrackStatus.DELETED},
                TrackStatus.CONFIRMED: {TrackStatus.DELETED},
                TrackStatus.DELETED: set()}


@dataclass
class MotionModel:
    """ Constant-velocity state model with position-only measurements.

    Parameters
    ----------
    dt : float
        Time step. [s]
    sigma_q2 : float
        Process noise intensity.
    sigma_r2 : float
        Measurement noise variance. [m^2]
    """
    dt: float = 0.2
    sigma_q2: float = 1.0
    sigma_r2: float = 15.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f'[Dastrack] dt must be > 0, got {self.dt}.')
        if not self.sigma_q2 >= 0:
            raise ConfigError(f'[Dastrack] sigma_q2 must be >= 0, got {self.sigma_q2}.')
        if not self.sigma_r2 > 0:
            raise ConfigError(f'[Dastrack] sigma_r2 must be > 0, got {self.sigma_r2}.')

    @property
    def G(self):
        return np.array([[1.0, self.dt],
                         [0.0, 1.0]])

    @property
    def Q(self):
        dt = self.dt
        return self.sigma_q2 * np.array([[dt ** 3 / 3, dt ** 2 / 2],
                                         [dt ** 2 / 2, dt]])

    @property
    def H(self):
        return np.array([1.0, 0.0])


@dataclass
class GaussianState:
    """ Mean (position, velocity) and 2x2 covariance. """
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)

    def symmetrized(self):
        return GaussianState(self.mean, 0.5 * (self.cov + self.cov.T))


@dataclass
class Track:
    """ One tracked object.

    ``state`` holds the predicted state between prediction and update inside
    a tracker step, and the filtered state otherwise.
    """
    track_id: int
    state: GaussianState
    status: TrackStatus = TrackStatus.HOLDING
    update_count: int = 0
    update_streak: int = 0
    log_class_posterior: np.ndarray = field(default_factory=lambda: np.log(np.array([0.5, 0.5])))
    birth_time: float = 0.0
    direction_hint: str = 'north'
    confirmed_time: float = None

    @property
    def class_posterior(self):
        """ (p_car, p_train) """
        return np.exp(self.log_class_posterior)

    @property
    def is_active(self):
        return self.status != TrackStatus.DELETED

    def with_status(self, status, time=None):
        """ Copy moved to ``status``; only forward lifecycle moves are allowed. """
        if status == self.status:
            return self
        if status not in _TRANSITIONS[self.status]:
            raise InvariantError(f'[Dastrack] Track {self.track_id} cannot go from {self.status.value} '
                                 f'to {status.value}.')
        changes = {'status': status}
        if status == TrackStatus.CONFIRMED:
            changes['confirmed_time'] = time
        return replace(self, **changes)


@dataclass
class TrackerConfig:
    """ Tracker parameters.

    Parameters
    ----------
    P_D : float
        Probability of detection.
    clutter_intensity_lambda : float
        Clutter picks per meter per step.
    fov : tuple
        (V_a, V_b) fiber positions bounding the field of view. [m]
    init_zone_delta : float
        Width of the initiation zones at both FOV ends. [m]
    init_velocity_mean : float
        Initial speed; positive from the lower zone, negative from the upper. [m/s]
    init_pos_var, init_vel_var : float
        Initial variances sigma_1 [m^2] and sigma_2 [(m/s)^2].
    cov_trace_threshold : float
        Tracks whose predicted covariance trace exceeds this are deleted.
    N_init : int
        Consecutive valid updates needed to confirm a holding track inside an
        initiation zone.
    valid_update_mass : float
        An update is valid when the track's total detection probability
        1 - beta_0 exceeds this.
    gate_probability : float
        Gate coverage probability (chi-square, 1 dof).
    da_mode : str
        'joint' or 'per_target'.
    max_hypotheses : int
        Enumeration cap per cluster before falling back to per-target.
    """
    P_D: float = 0.9
    clutter_intensity_lambda: float = 1 / 200
    fov: tuple = (3963.0, 4167.0)
    init_zone_delta: float = 60.0
    init_velocity_mean: float = 10.0
    init_pos_var: float = 10.0
    init_vel_var: float = 2.0
    cov_trace_threshold: float = 150.0
    N_init: int = 5
    valid_update_mass: float = 0.5
    gate_probability: float = 0.99
    da_mode: str = 'joint'
    max_hypotheses: int = 10_000

    def __post_init__(self):
        self.fov = tuple(float(v) for v in self.fov)
        if not 0 < self.P_D <= 1:
            raise ConfigError(f'[Dastrack] P_D must be in (0, 1], got {self.P_D}.')
        if not self.clutter_intensity_lambda > 0:
            raise ConfigError(f'[Dastrack] Clutter intensity must be > 0, got {self.clutter_intensity_lambda}.')
        if len(self.fov) != 2 or not self.fov[0] < self.fov[1]:
            raise ConfigError(f'[Dastrack] FOV must satisfy V_a < V_b, got {self.fov}.')
        if not 0 < self.init_zone_delta < (self.fov[1] - self.fov[0]) / 2:
            raise ConfigError(f'[Dastrack] init_zone_delta must be in (0, FOV/2), got {self.init_zone_delta}.')
        if not (self.init_pos_var > 0 and self.init_vel_var > 0):
            raise ConfigError('[Dastrack] Initial variances must be > 0.')
        if self.N_init < 0:
            raise ConfigError(f'[Dastrack] N_init must be >= 0, got {self.N_init}.')
        if not 0 <= self.valid_update_mass < 1:
            raise ConfigError(f'[Dastrack] valid_update_mass must be in [0, 1), got {self.valid_update_mass}.')
        if not 0 < self.gate_probability < 1:
            raise ConfigError(f'[Dastrack] gate_probability must be in (0, 1), got {self.gate_probability}.')
        if self.da_mode not in ('joint', 'per_target'):
            raise ConfigError(f'[Dastrack] da_mode must be "joint" or "per_target", got {self.da_mode}.')
        if self.max_hypotheses < 1:
            raise ConfigError(f'[Dastrack] max_hypotheses must be >= 1, got {self.max_hypotheses}.')

    @property
    def gate_threshold(self):
        """ Squared Mahalanobis gate size. """
        return float(chi2.ppf(self.gate_probability, df=1))

    def in_init_zone(self, position):
        V_a, V_b = self.fov
        return position <= V_a + self.init_zone_delta or position >= V_b - self.init_zone_delta


class AssociationHypothesis(NamedTuple):
    """ Per-track measurement index (0 = undetected, j = pick j-1) and weight. """
    assignment: tuple
    weight: float = 0.0


@dataclass
class TrackRecord:
    track_id: int
    t: float
    pos_mean: float
    vel_mean: float
    pos_var: float
    vel_var: float
    p_car: float
    status: str

    @classmethod
    def from_track(cls, track, time):
        return cls(track_id=int(track.track_id), t=float(time),
                   pos_mean=float(track.state.mean[0]), vel_mean=float(track.state.mean[1]),
                   pos_var=float(track.state.cov[0, 0]), vel_var=float(track.state.cov[1, 1]),
                   p_car=float(track.class_posterior[0]), status=track.status.value)

    def to_dict(self):
        return {'track_id': self.track_id, 't': self.t, 'pos_mean': self.pos_mean, 'vel_mean': self.vel_mean,
                'pos_var': self.pos_var, 'vel_var': self.vel_var, 'p_car': self.p_car, 'status': self.status}


def _positions(picks):
    """ Pick positions as an array; plain numbers are taken as positions. """
    return np.array([getattr(p, 'position', p) for p in picks], dtype=float)


def _amplitudes(picks):
    return np.array([getattr(p, 'log_amplitude', np.nan) for p in picks], dtype=float)


def kf_predict(state, model):
    """ Kalman prediction: ``G mean`` and ``G cov G^T + Q``. """
    G = model.G
    return GaussianState(G @ state.mean, G @ state.cov @ G.T + model.Q)


def innovation_moments(state, model):
    """ Predicted measurement ``H mean`` and innovation variance ``S``. """
    H = model.H
    return float(H @ state.mean), float(H @ state.cov @ H + model.sigma_r2)


def kf_update(state, z, model):
    """ Kalman update of a predicted state with one position measurement.

    Parameters
    ----------
    state : GaussianState
        Predicted state.
    z : float
        Measured position. [m]
    model : MotionModel

    Returns
    -------
    state : GaussianState
        Filtered state.

    """

    z_pred, S = innovation_moments(state, model)
    if not S > 0:
        raise NumericError(f'[Dastrack] Innovation variance {S} is not positive.')

    H = model.H
    K = state.cov @ H / S
    mean = state.mean + K * (z - z_pred)
    cov = state.cov - np.outer(K, H @ state.cov)
    return GaussianState(mean, cov)


def gate(track, picks, cfg, model):
    """ Indices of picks inside the chi-square gate of a predicted track. """
    z_pred, S = innovation_moments(track.state, model)
    d2 = (_positions(picks) - z_pred) ** 2 / S
    return [int(j) for j in np.flatnonzero(d2 <= cfg.gate_threshold)]


def enumerate_valid_das(n_tracks, gated_sets, max_hypotheses=10_000):
    """ All assignments where each track takes one of its gated picks or none,
    and no pick goes to two tracks.

    Parameters
    ----------
    n_tracks : int
    gated_sets : list of list of int
        0-based gated pick indices per track.
    max_hypotheses : int
        Cap on the number of hypotheses.

    Returns
    -------
    hypotheses : list of AssociationHypothesis
        Unweighted; assignment entries are 0 (undetected) or 1-based pick indices.

    Raises
    ------
    HypothesisOverflow
        When the count exceeds ``max_hypotheses``.

    """

    hypotheses = []
    assignment = [UNDETECTED] * n_tracks
    used = set()

    def recurse(i):
        if i == n_tracks:
            if len(hypotheses) >= max_hypotheses:
                raise HypothesisOverflow(f'[Dastrack] More than {max_hypotheses} association hypotheses.')
            hypotheses.append(AssociationHypothesis(tuple(assignment)))
            return
        assignment[i] = UNDETECTED
        recurse(i + 1)
        for j in gated_sets[i]:
            if j in used:
                continue
            used.add(j)
            assignment[i] = j + 1
            recurse(i + 1)
            used.discard(j)
        assignment[i] = UNDETECTED

    recurse(0)
    return hypotheses


def association_terms(tracks, picks, cfg, model, gated_sets=None):
    """ Unnormalized association terms, shape [n_tracks, m + 1].

    Column 0 is ``1 - P_D``; column ``j + 1`` is ``P_D * phi(z_j) / lambda``
    for gated picks and 0 otherwise.
    """
    positions = _positions(picks)
    if gated_sets is None:
        gated_sets = [gate(track, picks, cfg, model) for track in tracks]

    terms = np.zeros((len(tracks), positions.size + 1))
    terms[:, 0] = 1.0 - cfg.P_D
    for i, (track, gated) in enumerate(zip(tracks, gated_sets)):
        if not gated:
            continue
        z_pred, S = innovation_moments(track.state, model)
        terms[i, np.asarray(gated) + 1] = cfg.P_D * norm.pdf(positions[gated], loc=z_pred, scale=np.sqrt(S)) \
            / cfg.clutter_intensity_lambda
    return terms


def _normalize_rows(terms):
    """ Normalize rows to sum to one; all-zero rows become 'undetected'. """
    beta = np.array(terms, dtype=float)
    totals = beta.sum(axis=1)
    empty = totals <= 0
    beta[empty] = 0.0
    beta[empty, 0] = 1.0
    beta[~empty] /= totals[~empty, None]
    return beta


def _track_clusters(n_tracks, gated_sets):
    """ Groups of tracks linked through shared gated picks. """
    links = {}
    rows, cols = [], []
    for i, gated in enumerate(gated_sets):
        for j in gated:
            if j in links:
                rows.append(links[j])
                cols.append(i)
            else:
                links[j] = i
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_tracks, n_tracks))
    n_clusters, labels = connected_components(graph, directed=False)
    return [np.flatnonzero(labels == c) for c in range(n_clusters)]


def _joint_beta(terms, gated_sets, max_hypotheses):
    """ Marginal association probabilities from weighted valid hypotheses. """
    n_tracks = terms.shape[0]
    beta = np.zeros_like(terms)

    for cluster in _track_clusters(n_tracks, gated_sets):
        cluster_gated = [gated_sets[i] for i in cluster]
        hypotheses = enumerate_valid_das(len(cluster), cluster_gated, max_hypotheses=max_hypotheses)
        cluster_terms = terms[cluster]
        weights = np.array([np.prod(cluster_terms[np.arange(len(cluster)), list(h.assignment)])
                            for h in hypotheses])
        total = weights.sum()
        if not total > 0:
            beta[cluster] = _normalize_rows(cluster_terms)
            continue
        weights /= total
        for h, w in zip(hypotheses, weights):
            beta[cluster, list(h.assignment)] += w

    return beta


def association_probabilities(tracks, picks, cfg, model, class_model=None):
    """ Marginal association probabilities ``beta[i][j]``, ``j = 0..m``.

    Parameters
    ----------
    tracks : list of Track
        Tracks holding their predicted states.
    picks : list of Pick
    cfg : TrackerConfig
    model : MotionModel
    class_model : ClassModel, optional
        When given with ``use_amplitude_in_da``, detection terms are scaled by
        the class-mixture amplitude likelihood.

    Returns
    -------
    beta : np.ndarray
        [n_tracks, m + 1] rows summing to one; out-of-gate entries are 0.

    """

    n_picks = len(picks)
    if not tracks:
        return np.zeros((0, n_picks + 1))

    gated_sets = [gate(track, picks, cfg, model) for track in tracks]
    terms = association_terms(tracks, picks, cfg, model, gated_sets=gated_sets)
    refine = class_model is not None and class_model.use_amplitude_in_da and n_picks > 0
    amplitudes = _amplitudes(picks) if refine else None

    if cfg.da_mode == 'joint':
        joint_terms = terms.copy()
        if refine:
            for i, track in enumerate(tracks):
                joint_terms[i, 1:] *= amplitude_factors(amplitudes, track.class_posterior, class_model)
        # A track without gated picks is undetected in every hypothesis.
        for i, gated in enumerate(gated_sets):
            if not gated:
                joint_terms[i, 0] = 1.0
        try:
            return _joint_beta(joint_terms, gated_sets, cfg.max_hypotheses)
        except HypothesisOverflow as err:
            logger.warning(f'{err} Falling back to per-target association.')

    if refine:
        return np.vstack([amplitude_refined_beta(terms[i], amplitudes, track.class_posterior, class_model)
                          for i, track in enumerate(tracks)])
    return _normalize_rows(terms)


def jpda_update(track, picks, beta, model):
    """ Moment-matched JPDA update of a predicted track.

    Parameters
    ----------
    track : Track
        Track holding its predicted state.
    picks : list of Pick
    beta : array_like
        Normalized association row of length ``m + 1``.
    model : MotionModel

    Returns
    -------
    track : Track
        Copy with the filtered state.

    """

    beta = np.asarray(beta, dtype=float)
    if beta.size == 1 or beta[0] >= 1.0:
        return track

    predicted = track.state
    z_pred, S = innovation_moments(predicted, model)
    if not S > 0:
        raise NumericError(f'[Dastrack] Innovation variance {S} is not positive.')

    H = model.H
    K = predicted.cov @ H / S
    innovations = _positions(picks) - z_pred
    weights = beta[1:]
    combined = weights @ innovations

    mean = predicted.mean + K * combined
    cov_updated = predicted.cov - np.outer(K, H @ predicted.cov)
    spread = weights @ innovations ** 2 - combined ** 2
    cov = beta[0] * predicted.cov + (1.0 - beta[0]) * cov_updated + spread * np.outer(K, K)

    return replace(track, state=GaussianState(mean, cov).symmetrized())


def init_candidates(picks, cfg, model=None, existing_tracks=(), time=0.0, class_model=None, next_id=0):
    """ Holding tracks started from picks in the two initiation zones.

    One track per zone per step, at the mean position of the zone picks that
    are not inside the gate of an existing track. No track is started when an
    existing track's gate covers that mean.

    Parameters
    ----------
    picks : list of Pick
    cfg : TrackerConfig
    model : MotionModel, optional
    existing_tracks : list of Track
        Active tracks, used for duplicate suppression.
    time : float
        Birth time of the new tracks. [s]
    class_model : ClassModel, optional
        Supplies the class prior.
    next_id : int
        Id of the first new track.

    Returns
    -------
    tracks : list of Track

    """

    model = model if model is not None else MotionModel()
    class_model = class_model if class_model is not None else ClassModel()
    positions = _positions(picks)
    V_a, V_b = cfg.fov
    delta = cfg.init_zone_delta
    existing = [track for track in existing_tracks if track.is_active]

    covered = np.zeros(positions.size, dtype=bool)
    for track in existing:
        covered[gate(track, positions, cfg, model)] = True

    zones = ((V_a, V_a + delta, +1.0, 'north'),
             (V_b - delta, V_b, -1.0, 'south'))

    new_tracks = []
    for lower, upper, sign, direction in zones:
        in_zone = (positions >= lower) & (positions <= upper) & ~covered
        if not in_zone.any():
            continue
        zone_mean = float(positions[in_zone].mean())
        if any(gate(track, [zone_mean], cfg, model) for track in existing):
            continue

        state = GaussianState([zone_mean, sign * cfg.init_velocity_mean],
                              np.diag([cfg.init_pos_var, cfg.init_vel_var]))
        new_tracks.append(Track(track_id=next_id + len(new_tracks), state=state,
                                log_class_posterior=class_model.log_prior.copy(),
                                birth_time=float(time), direction_hint=direction))
        logger.debug(f'[Dastrack] Holding track {new_tracks[-1].track_id} at {zone_mean:.1f} m, t={time:.1f} s.')

    return new_tracks


def group_picks_by_step(picks, dt, t0=0.0):
    """ Yield ``(step_time, picks)`` for every step from ``t0`` to the last pick,
    empty steps included. A pick at time t belongs to step ``floor((t - t0) / dt)``.
    """
    if not picks:
        return
    picks = sorted(picks, key=lambda p: p.time)
    # Tolerance keeps picks stamped exactly on a step boundary in that step.
    steps = np.floor((np.array([p.time for p in picks]) - t0) / dt + 1e-6).astype(int)
    if steps[0] < 0:
        raise ConfigError(f'[Dastrack] Pick at {picks[0].time} s precedes the step clock origin {t0} s.')

    start = 0
    for k in range(steps[-1] + 1):
        stop = start
        while stop < len(picks) and steps[stop] == k:
            stop += 1
        yield t0 + k * dt, picks[start:stop]
        start = stop


class Tracker:
    """ JPDA tracker over a stream of per-step pick lists.

    Parameters
    ----------
    cfg : TrackerConfig, optional
    model : MotionModel, optional
    class_model : ClassModel, optional

    """

    def __repr__(self):
        return (f'[Dastrack] Tracker: {len(self.tracks)} active, {len(self.finished)} finished, '
                f'FOV {self.cfg.fov}, mode {self.cfg.da_mode}')

    def __init__(self, cfg=None, model=None, class_model=None):
        self.cfg = cfg if cfg is not None else TrackerConfig()
        self.model = model if model is not None else MotionModel()
        self.class_model = class_model if class_model is not None else ClassModel()
        self.tracks = []
        self.finished = []
        self._next_id = 0

    def _in_fov(self, picks):
        V_a, V_b = self.cfg.fov
        return [p for p in picks if V_a <= p.position <= V_b]

    def _should_delete(self, track):
        V_a, V_b = self.cfg.fov
        position = track.state.mean[0]
        return position < V_a or position > V_b or np.trace(track.state.cov) > self.cfg.cov_trace_threshold

    def step(self, picks, time):
        """ Run one recursion step.

        Parameters
        ----------
        picks : list of Pick
            Picks of this step; picks outside the FOV are ignored.
        time : float
            Step time. [s]

        Returns
        -------
        records : list of TrackRecord
            State of every track alive at this step, and of tracks deleted at it.

        """

        picks = self._in_fov(picks)
        records = []

        # Predict, then delete on the predicted state.
        survivors = []
        for track in self.tracks:
            track = replace(track, state=kf_predict(track.state, self.model))
            if self._should_delete(track):
                track = track.with_status(TrackStatus.DELETED)
                self.finished.append(track)
                records.append(TrackRecord.from_track(track, time))
                logger.debug(f'[Dastrack] Deleted track {track.track_id} at t={time:.1f} s.')
            else:
                survivors.append(track)

        # Associate and update.
        beta = association_probabilities(survivors, picks, self.cfg, self.model, self.class_model)
        amplitudes = _amplitudes(picks)
        updated = []
        for track, row in zip(survivors, beta):
            valid = 1.0 - row[0] > self.cfg.valid_update_mass
            track = jpda_update(track, picks, row, self.model)
            track = update_class_posterior(track, amplitudes, row, self.class_model)
            if valid:
                track = replace(track, update_count=track.update_count + 1, update_streak=track.update_streak + 1)
            else:
                track = replace(track, update_streak=0)
            # Confirmation depends on the update history and position only, never on status.
            if (track.status == TrackStatus.HOLDING and track.update_streak >= self.cfg.N_init
                    and self.cfg.in_init_zone(track.state.mean[0])):
                track = track.with_status(TrackStatus.CONFIRMED, time=time)
                logger.debug(f'[Dastrack] Confirmed track {track.track_id} at t={time:.1f} s.')
            updated.append(track)

        # Start new holding tracks.
        born = init_candidates(picks, self.cfg, self.model, existing_tracks=updated, time=time,
                               class_model=self.class_model, next_id=self._next_id)
        self._next_id += len(born)

        self.tracks = updated + born
        records.extend(TrackRecord.from_track(track, time) for track in self.tracks)
        return records

    def run(self, picks, t0=None):
        """ Group a pick stream into ``dt`` steps and run the recursion over all of them.

        Parameters
        ----------
        picks : list of Pick
        t0 : float, optional
            Time of the first step; defaults to the start of the step holding
            the earliest pick, on a grid anchored at 0.

        Returns
        -------
        records : list of TrackRecord
        """
        dt = self.model.dt
        if t0 is None:
            t0 = dt * np.floor(min(p.time for p in picks) / dt + 1e-6) if picks else 0.0
        records = []
        n_steps = 0
        for step_time, step_picks in group_picks_by_step(picks, dt, t0=t0):
            records.extend(self.step(step_picks, step_time))
            n_steps += 1
        logger.info(f'[Dastrack] Tracked {n_steps} steps: {self._next_id} tracks started, '
                    f'{sum(t.confirmed_time is not None for t in self.tracks + self.finished)} confirmed.')
        return records
