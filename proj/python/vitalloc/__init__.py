"""Python bindings for the vitalloc monitoring-device allocation toolkit."""

from ._vitalloc import (
    Direction,
    Error,
    ExperimentConfig,
    FitResult,
    Gaussian,
    Mixture,
    Model,
    PatientModel,
    Policy,
    VitalSignSpec,
    aggregate,
    default_planted_mixture,
    denormalize,
    evaluate,
    fit_mixture,
    method_names,
    normalize,
    penalty,
    prepare_model,
    preset_specs,
    reward,
    run_experiment,
    synth,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
