"""diffexc: temporal point processes as excursion lengths of a latent diffusion.

Fit the drift of a latent unit-volatility diffusion from observed arrival
times via a Girsanov change-of-measure objective over sampled Brownian
excursions, and sample arrival times from a fitted drift by simulating the
diffusion and extracting delta-filtered zero crossings.
"""
from ._backend import NUMBA_ENABLED, backend_name
from .core import (MarkedArrivals, Path, RngSeed, TimeGrid,
                   interarrivals_from_arrivals, merge_by_time,
                   per_mark_interarrivals, read_arrivals_csv, split_by_mark,
                   write_arrivals_csv)
from .drift import (DriftSpec, ParamVector, delta_gradient, drift_vjp,
                    eval_drift, init_params, param_count)
from .excursions import (AcceptanceError, ExcursionBatch, sample_pinned_bridges,
                         sample_signed_excursions, sample_unit_bridge,
                         scale_to_length, vervaat_excursion)
from .inference import (CheckpointError, FitConfig, FitDivergedError, FitReport,
                        fit, fit_baseline_bridge, fit_joint, load_checkpoint,
                        save_checkpoint, write_checkpoint)
from .likelihood import (JointExcursionBatch, LogDensityEstimate,
                         SaturatedIntensityError, build_joint_excursion,
                         bridge_log_density, conditional_intensity,
                         conditional_intensity_from_density, elbo,
                         excursion_log_density, expressiveness_bound,
                         girsanov_log_weights, joint_log_density,
                         lamperti_1d, levy_cdf, levy_delta_mle,
                         levy_excursion_density, levy_excursion_log_density,
                         log_girsanov_weight, ou_fht_cdf, ou_fht_density,
                         recurrence_mass, recurrence_penalty, scale_function)
from .metrics import (drift_relative_mse, gen_renewal, ks_statistic, qq_points,
                      renewal_reference, w1_distance)
from .sde import (CensoredSampleError, SimulationDivergedError, detect_crossings,
                  euler_maruyama, filter_min_height, first_hitting_time,
                  sample_arrivals, sample_arrivals_multidim,
                  sample_arrivals_until, sample_fht)

__version__ = "0.1.0"
