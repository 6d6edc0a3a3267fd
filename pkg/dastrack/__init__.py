from .core.dastrack_io import StrainBatch, EventLog, load_strain, save_strain, load_events, load_picks, save_picks
from .core.dastrack_picker import Pick, PickerConfig, extract_picks
from .core.dastrack_preprocess import PreprocessConfig, preprocess_raw, preprocess_stream
from .core.dastrack_tuner import TunerConfig, tune
from .core.dastrack_tracker import MotionModel, Tracker, TrackerConfig
from .core.dastrack_classifier import ClassModel, fit_class_model
from .core.dastrack_simulator import Scenario, simulate_field, simulate_picks, score_tracking
from .core.dastrack_config import RunConfig
