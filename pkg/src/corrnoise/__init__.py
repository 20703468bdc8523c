"""corrnoise: ODE parameter inference under autocorrelated measurement noise.

Fits dynamical models to time series whose errors follow IID, AR(1),
MA(1) or general ARMA processes, quantifies how wrongly assuming
independence inflates confidence (variance inflation ratios), and
provides a residual-diagnosis workflow for choosing a noise model.
"""

from .series import TimeSeries
from .noise import (NoiseModel, LagPolynomials, simulate_noise, process_variance,
                    autocovariances, theoretical_acf, sample_acf)
from .odes import (DynamicalModel, Trajectory, VoltageProtocol, IntegrationError,
                   integrate, sensitivities, constant_model, logistic_model,
                   logistic_analytic, herg_model, demo_step_protocol)
from .likelihood import (LogLikelihood, ObservationModel, StateSpaceForm,
                         loglik_iid, loglik_ar1_conditional,
                         loglik_arma11_conditional, kalman_loglik,
                         kalman_innovations, exact_mvn_loglik, arma_statespace,
                         loglik_auto)
from .fisher import (FisherMatrix, VirReport, fim_constant_ar1, vir_ar1, vir_ma1,
                     vir_arma11, vir_arma_pq_constant, vir_nonlinear_single,
                     fim_multiparam, vir_multiparam_exact, fim_initial_state_block,
                     vir_initial_state_aware, nuisance_orthogonality_check)
from .infer import (Prior, FitResult, parameter_transforms, optimize_map,
                    sample_posterior, rhat)
from .workflow import (ResidualSeries, AcfReport, AicTable, Recommendation,
                       compute_residuals, acf_diagnostic, arma_grid_search,
                       recommend, innovation_residuals)
from .experiments import (ExperimentConfig, ReplicateRecord, run_experiment,
                          vir_surface, logistic_study, ma1_study, arma11_study,
                          herg_recovery_study, synthetic_data)

__version__ = "0.1.0"
