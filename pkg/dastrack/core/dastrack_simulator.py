#!/usr/bin/env python3
# coding: utf-8
""" Ground-truth traffic scenarios at pick level and at log-RMS field level,
and scoring of tracker output against them.
"""

# System-related libraries
import json
import logging
from dataclasses import asdict, dataclass, field, fields

# Data-related libraries
import numpy as np
import pandas as pd

# Project-related libraries
from dastrack.core.dastrack_errors import ConfigError, DomainError, FormatError
from dastrack.core.dastrack_io import CLASS_LABELS, TRACK_FIELDS, StrainBatch
from dastrack.core.dastrack_picker import Pick
from dastrack.core.dastrack_tracker import MotionModel

logger = logging.getLogger(__name__)

ENTRY_SIDES = ('lower', 'upper')
TRUTH_COLUMNS = ['object_id', 't', 'position', 'velocity', 'class_label', 'direction']
MATCH_DISTANCE = 20.0


@dataclass
class ScenarioObject:
    """ One simulated object entering the FOV at ``birth_time``.

    ``entry_side='lower'`` enters at V_a moving north (positive velocity),
    ``'upper'`` enters at V_b moving south.
    """
    birth_time: float
    entry_side: str
    speed: float
    class_label: str = 'car'

    def __post_init__(self):
        if self.entry_side not in ENTRY_SIDES:
            raise ConfigError(f'[Dastrack] entry_side must be one of {ENTRY_SIDES}, got {self.entry_side}.')
        if not self.speed > 0:
            raise ConfigError(f'[Dastrack] Object speed must be > 0, got {self.speed}.')
        if self.class_label not in CLASS_LABELS:
            raise ConfigError(f'[Dastrack] Unknown class "{self.class_label}".')

    @property
    def direction(self):
        return 'north' if self.entry_side == 'lower' else 'south'

    @property
    def velocity(self):
        return self.speed if self.entry_side == 'lower' else -self.speed


@dataclass
class Scenario:
    """ Simulated traffic on one FOV.

    Parameters
    ----------
    objects : list of ScenarioObject
    fov : tuple
        (V_a, V_b). [m]
    duration : float
        Simulated time span. [s]
    seed : int
        Seed of the only random generator used.
    dt : float
        Step length of the pick stream and of the field rows. [s]
    clutter_lambda : float
        Clutter picks per meter per step.
    P_D : float
        Detection probability per object per step.
    sigma_r2 : float
        Pick position noise variance. [m^2]
    process_noise_q2 : float
        Process noise intensity of the true trajectories; 0 gives exact constant velocity.
    alpha, tau2 : tuple
        Per-class (car, train) log-amplitude mean and variance.
    clutter_threshold_A : float
        Clutter amplitudes are drawn from N(A + 0.3, 0.04).
    channel_spacing : float
        Field channel spacing. [m]
    blob_width : tuple
        Per-class spatial Gaussian width of the field bump. [channels]
    blob_duration : float
        Temporal Gaussian width of the field bump. [s]
    noise_floor, noise_sigma : float
        Background log-RMS level and spread of the field.
    field_margin : float
        Extra fiber simulated on both sides of the FOV in the field, so ridges
        enter and leave the FOV at full strength. [m]
    """
    objects: list = field(default_factory=list)
    fov: tuple = (3963.0, 4167.0)
    duration: float = 600.0
    seed: int = 0
    dt: float = 0.2
    clutter_lambda: float = 1 / 200
    P_D: float = 0.9
    sigma_r2: float = 15.0
    process_noise_q2: float = 0.0
    alpha: tuple = (-8.0, -5.5)
    tau2: tuple = (0.25, 0.25)
    clutter_threshold_A: float = -8.8
    channel_spacing: float = 1.0
    blob_width: tuple = (12.0, 20.0)
    blob_duration: float = 0.2
    noise_floor: float = -10.0
    noise_sigma: float = 0.3
    field_margin: float = 100.0

    def __post_init__(self):
        self.objects = [obj if isinstance(obj, ScenarioObject) else ScenarioObject(**obj) for obj in self.objects]
        self.fov = tuple(float(v) for v in self.fov)
        self.alpha = tuple(float(a) for a in self.alpha)
        self.tau2 = tuple(float(t) for t in self.tau2)
        self.blob_width = tuple(float(w) for w in self.blob_width)

        if len(self.fov) != 2 or not self.fov[0] < self.fov[1]:
            raise ConfigError(f'[Dastrack] Scenario FOV must satisfy V_a < V_b, got {self.fov}.')
        if not (self.duration > 0 and self.dt > 0):
            raise ConfigError('[Dastrack] Scenario duration and dt must be > 0.')
        for obj in self.objects:
            if not 0 <= obj.birth_time <= self.duration:
                raise ConfigError(f'[Dastrack] Birth time {obj.birth_time} outside [0, {self.duration}].')
        if not 0 <= self.P_D <= 1:
            raise ConfigError(f'[Dastrack] P_D must be in [0, 1], got {self.P_D}.')
        if self.clutter_lambda < 0 or self.sigma_r2 < 0 or self.process_noise_q2 < 0:
            raise ConfigError('[Dastrack] clutter_lambda, sigma_r2 and process_noise_q2 must be >= 0.')
        if any(not t > 0 for t in self.tau2) or any(not w > 0 for w in self.blob_width):
            raise ConfigError('[Dastrack] Class variances and blob widths must be > 0.')
        if not self.field_margin >= 0:
            raise ConfigError(f'[Dastrack] field_margin must be >= 0, got {self.field_margin}.')
        if not (self.channel_spacing > 0 and self.blob_duration > 0 and self.noise_sigma >= 0):
            raise ConfigError('[Dastrack] Invalid field parameters.')

    @property
    def n_steps(self):
        return int(np.floor(self.duration / self.dt + 1e-9)) + 1

    @property
    def step_times(self):
        return self.dt * np.arange(self.n_steps)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f'[Dastrack] Unknown scenario keys {sorted(unknown)}.')
        try:
            return cls(**raw)
        except TypeError as err:
            raise ConfigError(f'[Dastrack] Bad scenario: {err}') from None

    def to_json(self, path):
        with open(path, 'w') as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f'[Dastrack] Scenario file {path} is not valid JSON: {err}') from None
        return cls.from_dict(raw)

    @classmethod
    def with_random_objects(cls, n_cars, n_trains, car_speed=(8.0, 14.0), train_speed=(15.0, 20.0), **kwargs):
        """ Scenario with objects born at evenly spread, jittered times.

        Sides, speeds and jitter are drawn from the scenario seed.
        """
        scn = cls(**kwargs)
        rng = np.random.default_rng(scn.seed)
        n_objects = n_cars + n_trains
        labels = ['car'] * n_cars + ['train'] * n_trains
        rng.shuffle(labels)
        # Keep the last births early enough for the object to cross the FOV.
        span = 0.8 * scn.duration
        slots = span / max(n_objects, 1)
        objects = []
        for k, label in enumerate(labels):
            low, high = car_speed if label == 'car' else train_speed
            objects.append(ScenarioObject(birth_time=float(k * slots + rng.uniform(0, 0.5 * slots)),
                                          entry_side=str(rng.choice(ENTRY_SIDES)),
                                          speed=float(rng.uniform(low, high)),
                                          class_label=label))
        scn.objects = objects
        return scn


@dataclass
class GroundTruth:
    """ True trajectories and the origin of every simulated pick.

    ``trajectories`` has one row per object per in-FOV step, with columns
    ``object_id,t,position,velocity,class_label,direction``. ``origins[k]``
    lists, for each pick of step ``k``, its object id or -1 for clutter.
    """
    trajectories: pd.DataFrame
    origins: list = field(default_factory=list)
    dt: float = 0.2

    @property
    def n_objects(self):
        return int(self.trajectories['object_id'].nunique())

    def object_classes(self):
        first = self.trajectories.drop_duplicates('object_id')
        return dict(zip(first['object_id'], first['class_label']))

    def to_frame(self):
        return self.trajectories.copy()

    def to_csv(self, path):
        self.trajectories.to_csv(path, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, path, dt=0.2):
        """ Trajectories written by `to_csv`; pick origins are not stored. """
        frame = pd.read_csv(path)
        missing = [c for c in TRUTH_COLUMNS if c not in frame.columns]
        if missing:
            raise FormatError(f'[Dastrack] Ground-truth file {path} misses columns {missing}.')
        return cls(trajectories=frame[TRUTH_COLUMNS], dt=dt)


def _trajectories(scn, rng, margin=0.0):
    """ True per-step states of all objects while within ``margin`` of the FOV.

    Every object passes its entry end of the FOV at its birth time.
    """
    V_a, V_b = scn.fov
    lower, upper = V_a - margin - 1e-9, V_b + margin + 1e-9
    motion = MotionModel(dt=scn.dt, sigma_q2=max(scn.process_noise_q2, 0.0), sigma_r2=1.0)
    G = motion.G
    times = scn.step_times
    rows = []

    for object_id, obj in enumerate(scn.objects):
        start_time = max(obj.birth_time - margin / obj.speed, 0.0)
        first_step = int(np.ceil(start_time / scn.dt - 1e-9))
        start = V_a if obj.entry_side == 'lower' else V_b
        state = np.array([start + obj.velocity * (first_step * scn.dt - obj.birth_time), obj.velocity])
        for k in range(first_step, scn.n_steps):
            if not lower <= state[0] <= upper:
                break
            rows.append((object_id, times[k], state[0], state[1], obj.class_label, obj.direction))
            state = G @ state
            if scn.process_noise_q2 > 0:
                state = state + rng.multivariate_normal(np.zeros(2), motion.Q)

    return pd.DataFrame(rows, columns=TRUTH_COLUMNS)


def simulate_picks(scn):
    """ Pick-level simulation under the tracker's own measurement model.

    Each in-FOV object is detected per step with probability ``P_D`` at its
    true position plus N(0, sigma_r2), with a class amplitude N(alpha_l, tau2_l).
    Clutter counts are Poisson(lambda * (V_b - V_a)) per step, uniform over the FOV.

    Parameters
    ----------
    scn : Scenario

    Returns
    -------
    truth : GroundTruth
    steps : list of (float, list of Pick)
        Step time and picks of every step, picks sorted by position.

    """

    rng = np.random.default_rng(scn.seed)
    trajectories = _trajectories(scn, rng)
    V_a, V_b = scn.fov
    clutter_mean = scn.clutter_lambda * (V_b - V_a)
    class_index = {label: i for i, label in enumerate(CLASS_LABELS)}
    by_step = {}
    for object_id, t, position, label in trajectories[['object_id', 't', 'position', 'class_label']].itertuples(
            index=False, name=None):
        by_step.setdefault(int(round(t / scn.dt)), []).append((object_id, position, label))

    steps, origins = [], []
    cluster_id = 0
    for k, t in enumerate(scn.step_times):
        step_picks = []
        for object_id, position, label in by_step.get(k, ()):
            if rng.random() >= scn.P_D:
                continue
            ci = class_index[label]
            step_picks.append((float(position + rng.normal(0.0, np.sqrt(scn.sigma_r2))),
                               float(rng.normal(scn.alpha[ci], np.sqrt(scn.tau2[ci]))), int(object_id)))

        n_clutter = rng.poisson(clutter_mean)
        positions = rng.uniform(V_a, V_b, size=n_clutter)
        amplitudes = rng.normal(scn.clutter_threshold_A + 0.3, 0.2, size=n_clutter)
        step_picks.extend((float(x), float(y), -1) for x, y in zip(positions, amplitudes))

        step_picks.sort(key=lambda item: item[0])
        picks = []
        for position, amplitude, _ in step_picks:
            picks.append(Pick(time=float(t), position=position, log_amplitude=amplitude, cluster_id=cluster_id))
            cluster_id += 1
        steps.append((float(t), picks))
        origins.append([origin for _, _, origin in step_picks])

    logger.info(f'[Dastrack] Simulated {len(steps)} steps, {len(scn.objects)} objects, {cluster_id} picks.')
    return GroundTruth(trajectories=trajectories, origins=origins, dt=scn.dt), steps


def flatten_steps(steps):
    """ All picks of a per-step list in one time-ordered list. """
    return [pick for _, picks in steps for pick in picks]


def simulate_field(scn):
    """ Synthetic log-RMS field with one Gaussian ridge per object.

    Background is N(noise_floor, noise_sigma^2) per cell. Every object step adds
    a bump of spatial width ``blob_width`` (class dependent) and temporal width
    ``blob_duration``, scaled so its peak reaches the class amplitude; bumps and
    background combine by maximum.

    Parameters
    ----------
    scn : Scenario
        Every object must have a positive speed.

    Returns
    -------
    batch : StrainBatch
        Log-RMS batch with rows every ``scn.dt`` and channels covering the FOV
        widened by ``field_margin`` on both sides.

    """

    for obj in scn.objects:
        if not obj.speed > 0:
            raise DomainError('[Dastrack] Field simulation needs moving objects.')

    rng = np.random.default_rng(scn.seed)
    trajectories = _trajectories(scn, rng, margin=scn.field_margin)
    V_a, V_b = scn.fov
    first_channel = V_a - scn.field_margin
    n_channels = int(np.floor((V_b - V_a + 2 * scn.field_margin) / scn.channel_spacing + 1e-9)) + 1
    n_rows = scn.n_steps
    channel_positions = first_channel + scn.channel_spacing * np.arange(n_channels)

    field_values = scn.noise_floor + scn.noise_sigma * rng.standard_normal((n_rows, n_channels))
    class_index = {label: i for i, label in enumerate(CLASS_LABELS)}
    reach = int(np.ceil(3 * scn.blob_duration / scn.dt))

    for _, track in trajectories.groupby('object_id'):
        ci = class_index[track['class_label'].iloc[0]]
        rows = np.rint(track['t'].to_numpy() / scn.dt).astype(int)
        width = scn.blob_width[ci] * scn.channel_spacing
        spatial = np.exp(-0.5 * ((channel_positions[None, :] - track['position'].to_numpy()[:, None]) / width) ** 2)

        bump = np.zeros((n_rows, n_channels))
        for offset in range(-reach, reach + 1):
            target = rows + offset
            valid = (target >= 0) & (target < n_rows)
            temporal = np.exp(-0.5 * (offset * scn.dt / scn.blob_duration) ** 2)
            np.maximum.at(bump, target[valid], temporal * spatial[valid])

        signal = scn.noise_floor + (scn.alpha[ci] - scn.noise_floor) * bump
        field_values = np.maximum(field_values, signal)

    logger.info(f'[Dastrack] Simulated {n_rows}x{n_channels} log-RMS field with {len(scn.objects)} objects.')
    return StrainBatch.from_array(field_values, channel_spacing=scn.channel_spacing, channel0_position=first_channel,
                                  sample_interval=scn.dt, t0=0.0, is_log_rms=True)


@dataclass
class TrackingMetrics:
    """ Tracker output scored against ground truth.

    ``class_accuracy`` is None when no track was matched. ``mean_speed`` maps a
    direction to ``(estimated, true)`` mean speed in m/s.
    """
    n_confirmed: int
    n_objects: int
    n_matched: int
    class_accuracy: float = None
    position_rmse: float = np.nan
    velocity_error: float = np.nan
    mean_speed: dict = field(default_factory=dict)

    def to_dict(self):
        return {'n_confirmed': self.n_confirmed, 'n_objects': self.n_objects, 'n_matched': self.n_matched,
                'class_accuracy': self.class_accuracy, 'position_rmse': float(self.position_rmse),
                'velocity_error': float(self.velocity_error),
                'mean_speed': {k: [float(v) for v in pair] for k, pair in self.mean_speed.items()}}


def _as_frame(tracks):
    if isinstance(tracks, pd.DataFrame):
        return tracks
    return pd.DataFrame([t if isinstance(t, dict) else t.to_dict() for t in tracks], columns=TRACK_FIELDS)


def score_tracking(truth, tracks, max_distance=MATCH_DISTANCE):
    """ Compare confirmed tracks with true trajectories.

    Tracks are matched one-to-one to objects greedily by increasing mean
    position distance over their common steps, accepting pairs within
    ``max_distance``.

    Parameters
    ----------
    truth : GroundTruth
    tracks : list of TrackRecord or pandas.DataFrame
        Track records on the same time base as ``truth``.
    max_distance : float
        [m]

    Returns
    -------
    metrics : TrackingMetrics

    """

    frame = _as_frame(tracks)
    confirmed_ids = frame.loc[frame['status'] == 'confirmed', 'track_id'].unique()
    estimates = frame[frame['track_id'].isin(confirmed_ids) & (frame['status'] == 'confirmed')].copy()
    if estimates.empty or truth.trajectories.empty:
        return TrackingMetrics(n_confirmed=int(len(confirmed_ids)), n_objects=truth.n_objects, n_matched=0)
    estimates['step'] = np.rint(estimates['t'].to_numpy(dtype=float) / truth.dt).astype(int)
    true_rows = truth.trajectories.copy()
    true_rows['step'] = np.rint(true_rows['t'].to_numpy(dtype=float) / truth.dt).astype(int)

    joined = estimates.merge(true_rows, on='step', suffixes=('', '_true'))
    joined['distance'] = (joined['pos_mean'] - joined['position']).abs()
    candidates = joined.groupby(['track_id', 'object_id'])['distance'].mean().sort_values(kind='mergesort')

    matches = {}
    used_objects = set()
    for (track_id, object_id), distance in candidates.items():
        if distance > max_distance:
            break
        if track_id in matches or object_id in used_objects:
            continue
        matches[track_id] = object_id
        used_objects.add(object_id)

    metrics = TrackingMetrics(n_confirmed=int(len(confirmed_ids)), n_objects=truth.n_objects,
                              n_matched=len(matches))
    if not matches:
        return metrics

    pairs = pd.DataFrame(list(matches.items()), columns=['track_id', 'object_id'])
    matched = joined.merge(pairs, on=['track_id', 'object_id'])
    errors = matched['pos_mean'] - matched['position']
    metrics.position_rmse = float(np.sqrt(np.mean(errors ** 2)))
    metrics.velocity_error = float(np.mean(matched['vel_mean'] - matched['velocity']))

    classes = truth.object_classes()
    # End-of-track label: the last record of each track, deletion row included.
    last = frame.sort_values('t', kind='mergesort').groupby('track_id').tail(1).set_index('track_id')
    correct = [(CLASS_LABELS[0] if last.loc[track_id, 'p_car'] >= 0.5 else CLASS_LABELS[1]) == classes[object_id]
               for track_id, object_id in matches.items()]
    metrics.class_accuracy = float(np.mean(correct))

    for direction, group in matched.groupby('direction'):
        estimated = group.groupby('track_id')['vel_mean'].mean().abs().mean()
        true_speed = group.groupby('object_id')['velocity'].mean().abs().mean()
        metrics.mean_speed[direction] = (float(estimated), float(true_speed))

    return metrics
