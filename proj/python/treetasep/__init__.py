from ._core import (
    BoundsModel,
    EventLog,
    OffspringLaw,
    RateFamily,
    Tree,
    build_env,
    config_hash,
    exp_sum_tail,
    flow_generator_identity,
    passage_table,
    run_experiment,
    simulate,
    slowed_passage_times,
    stationary_marginals,
)

__all__ = [
    "BoundsModel",
    "EventLog",
    "OffspringLaw",
    "RateFamily",
    "Tree",
    "build_env",
    "config_hash",
    "exp_sum_tail",
    "flow_generator_identity",
    "passage_table",
    "run_experiment",
    "simulate",
    "slowed_passage_times",
    "stationary_marginals",
]
