"""Python bindings for the fedme federated-learning core."""

from ._fedme import (
    Activation,
    ArchitectureSpec,
    ConfigError,
    DivergenceError,
    Model,
    assign_exchanges,
    average_params,
    cross_entropy,
    deserialize_model,
    dml_losses_and_grads,
    forward,
    init_model,
    kl_divergence,
    kmeans,
    load_model,
    logits,
    partition,
    run_experiment,
    serialize_model,
    tuning_rule,
)

__all__ = [
    "Activation",
    "ArchitectureSpec",
    "ConfigError",
    "DivergenceError",
    "Model",
    "assign_exchanges",
    "average_params",
    "cross_entropy",
    "deserialize_model",
    "dml_losses_and_grads",
    "forward",
    "init_model",
    "kl_divergence",
    "kmeans",
    "load_model",
    "logits",
    "partition",
    "run_experiment",
    "serialize_model",
    "tuning_rule",
]
