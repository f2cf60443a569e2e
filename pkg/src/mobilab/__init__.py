"""mobilab: simulation and estimation toolkit for regional inter- and
multigenerational mobility statistics."""

__version__ = "0.1.0"

from .synthkit import (  # noqa: F401
    GeneratorConfig, RegionParams, PanelConfig, Drift,
    generate_population, apply_categorical_education, generate_earnings_panel,
    sweden_preset, demo_preset,
)
from .earnings import fit_fe_model, predict_at_40, rank_within_cells  # noqa: F401
from .mobility import (  # noqa: F401
    EstimatorSpec, MobilityEstimate, estimate_region, estimate_by_region,
    generational_average, p25_upward_mobility, cef_bins, cross_measure_matrix,
)
from .latent import (  # noqa: F401
    DeltaTest, LatentEstimate, delta_test, delta_tests_by_region,
    reject_shares, recover_latent, recover_by_region, latent_regression,
)
from .gatsby import gini, inequality_by_region, gatsby_correlation  # noqa: F401
from .harness import (  # noqa: F401
    PlaceboConfig, placebo_reshuffle, subsample_replicates, recovery_experiment,
)
