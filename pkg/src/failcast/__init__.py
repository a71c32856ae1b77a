"""failcast: two-stage machine-failure forecasting over datacenter traces.

Stages: trace ingestion into 5-minute intervals, failure pairing and
categorization, lag-window feature construction, a one-class SVM anomaly
filter feeding a random-forest classifier, and an evaluation harness.
"""

from .features import DatasetConfig, FeatureConfig, Instance, pacf
from .forest import ForestModel, ForestParams
from .ingestion import MachineSeries, UsageRecord
from .labeling import LabelingConfig, LabelTrack
from .ocsvm import OcsvmModel, OcsvmParams
from .pipeline import CascadeModel, GridSpec
from .synth import SynthConfig
from .trace_model import (
    INTERVAL_US,
    FailureEvent,
    FailureType,
    IntervalUsage,
    MachineEvent,
    MachineEventKind,
    ResourceKind,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeModel",
    "DatasetConfig",
    "FailureEvent",
    "FailureType",
    "FeatureConfig",
    "ForestModel",
    "ForestParams",
    "GridSpec",
    "INTERVAL_US",
    "Instance",
    "IntervalUsage",
    "LabelTrack",
    "LabelingConfig",
    "MachineEvent",
    "MachineEventKind",
    "MachineSeries",
    "OcsvmModel",
    "OcsvmParams",
    "ResourceKind",
    "SynthConfig",
    "UsageRecord",
    "pacf",
    "__version__",
]
