//! Linear stability of a phototactic suspension lit by collimated and
//! diffuse radiation, with isotropic scattering.
//!
//! The pipeline runs radiation ([`radiation`]) into the basic state
//! ([`basic_state`]), then the perturbed radiation ([`perturbation`]) and
//! the neutral-curve solver ([`stability`]).

pub mod error;
pub mod quadrature;
pub mod radiation;
pub mod taxis;
pub mod basic_state;
pub mod fd;
pub mod perturbation;
pub mod stability;

pub use num_complex::Complex64;

pub use basic_state::{
    local_maxima, max_concentration, solve_basic_state, sublayer_locations, BasicState, BcMode, SuspensionParams,
    Tolerances,
};
pub use error::{BioconError, Result};
pub use perturbation::{
    check_gamma_consistency, check_gamma_consistency_with, gamma_coefficients, solve_perturbed_diffuse,
    AngularBasis, GammaCoefficients, GammaForm, PerturbedRadiation, RadiationResponse, TestProfile,
};
pub use quadrature::{exp_integral, gauss_legendre, QuadratureRule};
pub use radiation::{
    collimated_intensity, radiative_flux, solve_intensity_fie, IntensitySolution, RadiationParams, RefractionMode,
};
pub use stability::{
    geometric_k_grid, BranchClass, BranchPoint, CriticalPoint, EigenSolution, NeutralBranch, StabilityOptions,
    StabilityProblem,
};
pub use taxis::TaxisVariant;
