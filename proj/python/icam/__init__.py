"""Instance-conditioned constructive solver for TSP/CVRP.

Thin wrapper over the C++ core; see `icam._icam` for the full surface.
"""

from ._icam import (
    CheckpointDtype,
    IcamError,
    Instance,
    Model,
    SizeError,
    __version__,
    augment_x8,
    bench_attention,
    distance_matrix,
    exact_cvrp,
    exact_tsp,
    gap,
    generate,
    instance_from_json,
    nn_two_opt,
    parse_cvrplib,
    scale_cvrplib,
    serialize_cvrplib,
    tour_length,
    train,
    training_presets,
)

__all__ = [
    "CheckpointDtype",
    "IcamError",
    "Instance",
    "Model",
    "SizeError",
    "__version__",
    "augment_x8",
    "bench_attention",
    "distance_matrix",
    "exact_cvrp",
    "exact_tsp",
    "gap",
    "generate",
    "instance_from_json",
    "nn_two_opt",
    "parse_cvrplib",
    "scale_cvrplib",
    "serialize_cvrplib",
    "tour_length",
    "train",
    "training_presets",
]
