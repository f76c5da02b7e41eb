"""Numerical laboratory for KPZ scaling exponents in Liouville quantum gravity.

The package samples discrete Gaussian free fields, builds the regularized
quantum area measure, measures Euclidean and quantum scaling exponents of
fractal test sets, and cross-checks everything against the closed-form
exponent algebra (the KPZ map and its gamma-duality) and the one-dimensional
first-passage reduction.
"""

__version__ = "0.1.0"

from .analytics import (
    GammaParams,
    ScalingExponents,
    DualityReport,
    gamma_params,
    kpz_x_of_delta,
    kpz_delta_of_x,
    gamma_of_central_charge,
    duality_report,
)
from .gff import (
    Grid,
    GridField,
    GreenTable,
    CircleAverage,
    build_green_table,
    sample_gff,
    circle_average,
)
from .measure import (
    QuantumDensity,
    QuantumBallResult,
    ball_mass,
    quantum_ball_radius,
    build_quantum_density,
    sample_quantum_point,
    expected_density_check,
)
from .brownian import (
    StoppingTimeSample,
    MartingaleEstimate,
    simulate_stopping_time,
    simulate_stopping_times,
    martingale_estimate,
    inverse_gaussian_pdf,
    density_fit,
)
from .fractal import (
    FractalMask,
    ExponentEstimate,
    make_fractal,
    euclidean_exponent,
    quantum_exponent,
    kpz_verify,
)
from .boundary import (
    BoundaryMask,
    BoundaryDensity,
    sample_free_gff,
    semicircle_average,
    make_boundary_fractal,
    boundary_quantum_exponent,
)
