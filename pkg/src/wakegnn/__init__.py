"""Graph neural network surrogates for wind turbine wake fields."""

from .errors import (ConfigError, DataError, DomainError, FormatError,
                     NumericalError, WakeGnnError)
from .meshgraph import (BoundaryTag, FieldSnapshot, GlobalConditions, Graph,
                        MeshSpec, NormalizationStats, Sample,
                        assemble_features, build_graded_mesh, mesh_to_graph,
                        validate_graph)
from .mgf import read_graph, read_sample, write_graph, write_sample
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .gnn import GnnModel, ModelConfig, count_params, model_forward
from .gad import (AirfoilPolar, BladeElement, PowerCurve, RotorSpec,
                  load_rotor_file, power_from_curve, rotor_integrate,
                  source_terms)
from .wakesynth import (ConditionRanges, WakeParams, default_mesh_spec,
                        gen_dataset, synth_wake_field)
from .train import (Dataset, MetricsReport, TrainRunConfig, evaluate,
                    predict_fields, split_dataset, train_loop)
from .farm import (AnalyticWakePredictor, FarmLayout, GnnWakePredictor,
                   Turbine, farm_power, load_farm_layout,
                   rotor_averaged_velocity, sos_superpose)

__version__ = "0.1.0"

__all__ = [
    "AirfoilPolar", "AnalyticWakePredictor", "BladeElement", "BoundaryTag",
    "Checkpoint", "ConditionRanges", "ConfigError", "DataError", "Dataset",
    "DomainError", "FarmLayout", "FieldSnapshot", "FormatError",
    "GlobalConditions", "GnnModel", "GnnWakePredictor", "Graph", "MeshSpec",
    "MetricsReport", "ModelConfig", "NormalizationStats", "NumericalError",
    "PowerCurve", "RotorSpec", "Sample", "TrainRunConfig", "Turbine",
    "WakeGnnError", "WakeParams", "assemble_features", "build_graded_mesh",
    "count_params", "default_mesh_spec", "evaluate", "farm_power",
    "gen_dataset", "load_checkpoint", "load_farm_layout", "load_rotor_file",
    "mesh_to_graph", "model_forward", "power_from_curve", "predict_fields",
    "read_graph", "read_sample", "rotor_averaged_velocity",
    "rotor_integrate", "save_checkpoint", "sos_superpose", "source_terms",
    "split_dataset", "synth_wake_field", "train_loop", "validate_graph",
    "write_graph", "write_sample",
]
