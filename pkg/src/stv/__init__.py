"""Secure multi-party time-series forecasting over vertically partitioned data.

The package trains and serves two forecaster families on additively
secret-shared data: a linear lag-polynomial model fitted by direct
(normal-equation) or iterative (gradient-descent) least squares, and
gradient-boosted autoregressive trees — with serverless inference and
per-message communication accounting.
"""

from .backend import Backend, ELEMENT_BYTES, ring_mul_truncate
from .errors import (ConfigError, DivergenceError, EncodingRangeError,
                     NumericalError, ProtocolError, ShareMismatchError,
                     SingularMatrixError, StvError)
from .linalg import secure_inverse, secure_matmul, secure_transpose
from .linear import (CoefficientShares, FitConfig, LinearForecaster,
                     fit_direct, fit_iterative, forecast_linear, share_design,
                     two_step_fit)
from .runtime import (COORDINATOR, CommLedger, Message, PartyId, Session,
                      spawn_session)
from .sharing import (BeaverTriple, ShareMatrix, SharedArray, add_local,
                      add_shared, audit_reconstruct, beaver_mul,
                      coordinator_issue_triples, issue_triple, open_at,
                      reconstruct, scale_shared, share, sub_local, sub_shared,
                      zeros_shared)
from .timeseries import (Column, DesignMatrix, ExoColumn, PolynomialSpec,
                         SeriesTransform, acf_pacf, build_design,
                         inverse_transform, suggest_orders, transform)
from .tree import (DistributedEnsemble, DistributedTree, TreeForecaster,
                   TreeParams, fit_art_ensemble, forecast_tree, predict_art,
                   secure_build)
from .evaluation import (MetricsReport, PrequentialPlan, ScalingReport,
                         SessionConfig, run_eval, run_scalability)

__version__ = "0.1.0"
