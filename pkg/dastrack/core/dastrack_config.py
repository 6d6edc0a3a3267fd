#!/usr/bin/env python3
# coding: utf-8
""" Run configuration: one JSON document with a section per pipeline stage. """

# System-related libraries
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

# Project-related libraries
from dastrack.core.dastrack_classifier import ClassModel
from dastrack.core.dastrack_errors import ConfigError
from dastrack.core.dastrack_picker import PickerConfig
from dastrack.core.dastrack_preprocess import PreprocessConfig
from dastrack.core.dastrack_tracker import MotionModel, TrackerConfig
from dastrack.core.dastrack_tuner import TunerConfig

logger = logging.getLogger(__name__)

# Tuner keys that come from their own top-level sections instead.
_TUNER_SHARED = ('preprocess', 'picker')


@dataclass
class ReportConfig:
    bin_minutes: float = 30.0

    def __post_init__(self):
        if not self.bin_minutes > 0:
            raise ConfigError(f'[Dastrack] bin_minutes must be > 0, got {self.bin_minutes}.')


@dataclass
class PathsConfig:
    """ Files a run reads besides its inputs.

    Parameters
    ----------
    class_model : str, optional
        Fitted class model JSON; replaces the ``classifier`` section when set.
    """
    class_model: str = None

    def __post_init__(self):
        if self.class_model is not None and not isinstance(self.class_model, str):
            raise ConfigError(f'[Dastrack] paths.class_model must be a file path, got {self.class_model!r}.')


@dataclass
class RunConfig:
    """ Configuration of every pipeline stage, with defaults for each.

    Parameters
    ----------
    preprocess : PreprocessConfig
    picker : PickerConfig
    tuner : TunerConfig
        Its preprocess and picker parts always mirror the sections above.
    tracker : TrackerConfig
    motion : MotionModel
    classifier : ClassModel
    report : ReportConfig
    paths : PathsConfig
    """
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    picker: PickerConfig = field(default_factory=PickerConfig)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    motion: MotionModel = field(default_factory=MotionModel)
    classifier: ClassModel = field(default_factory=ClassModel)
    report: ReportConfig = field(default_factory=ReportConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        self.tuner = replace(self.tuner, preprocess=self.preprocess, picker=self.picker)

    @classmethod
    def from_dict(cls, raw):
        """ Build from a mapping of sections; missing sections and keys keep their defaults. """
        if not isinstance(raw, dict):
            raise ConfigError('[Dastrack] Configuration must be a JSON object.')
        sections = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f'[Dastrack] Unknown configuration sections {sorted(unknown)}.')

        built = {}
        for name, values in raw.items():
            section_type = sections[name].default_factory
            if not isinstance(values, dict):
                raise ConfigError(f'[Dastrack] Section "{name}" must be a JSON object.')
            allowed = {f.name for f in fields(section_type)}
            if section_type is TunerConfig:
                allowed -= set(_TUNER_SHARED)
            bad_keys = set(values) - allowed
            if bad_keys:
                raise ConfigError(f'[Dastrack] Unknown keys {sorted(bad_keys)} in section "{name}".')
            try:
                built[name] = section_type(**values)
            except TypeError as err:
                raise ConfigError(f'[Dastrack] Bad section "{name}": {err}') from None
        return cls(**built)

    @classmethod
    def load(cls, path=None):
        """ Load a JSON configuration file; ``None`` gives the defaults. """
        if path is None:
            return cls()
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f'[Dastrack] Configuration {path} is not valid JSON: {err}') from None
        logger.debug(f'[Dastrack] Loaded configuration from {path}.')
        return cls.from_dict(raw)

    def class_model(self, path=None):
        """ Class model loaded from ``path`` or ``paths.class_model``, else the ``classifier`` section. """
        path = path if path is not None else self.paths.class_model
        if path is None:
            return self.classifier
        logger.info(f'[Dastrack] Loading class model from {path}.')
        return ClassModel.load(path)

    def to_dict(self):
        out = {f.name: asdict(getattr(self, f.name)) for f in fields(self)}
        for key in _TUNER_SHARED:
            out['tuner'].pop(key)
        return out

    def save(self, path):
        with open(path, 'w') as fh:
            json.dump(self.to_dict(), fh, indent=2)
