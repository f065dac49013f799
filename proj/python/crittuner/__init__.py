"""APJN measurement and auxiliary-scalar tuning for critical initialization."""

from ._crittuner import (
    Activation,
    ConfigError,
    CritError,
    DivergenceError,
    Loss,
    NetworkSpec,
    apjn_profile,
    bn_apjn_limit,
    eta_bound,
    eta_one_step,
    eta_zero,
    forward,
    jkl,
    jll,
    jsl,
    load_cifar10,
    mlp,
    network_from_text,
    prebn_resmlp,
    relu_dynamics,
    relu_kernel_map,
    resmlp_apjn,
    resmlp_toy,
    run_command,
    run_suite,
    suite_names,
    tune,
)

__version__ = "0.1.0"
