//! DPMSolver++ samplers, constant-model-output inversion, and
//! latent-intervention fusion, with analytic denoisers for desk-scale
//! verification.

pub mod denoiser;
pub mod error;
pub mod fusion;
pub mod inversion;
pub mod lab;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stats;

pub use denoiser::{
    guided_noise, model_output, predict_noise, Condition, ConditionTag, DenoiserOracle, Latent,
    NoisePredictor, OracleConfig, OracleKind,
};
pub use error::{Error, Result};
pub use fusion::{fuse, sweep_intervention, Distances, FusionConfig, FusionResult, SweepRow};
pub use inversion::{
    derive_noise_map, invert, invert_forward_diffusion, invert_ode, invert_sde,
    invert_stochastic_retained, reconstruct_exact, InversionRecord, InversionVariant,
    NoiseMapReplay,
};
pub use sampler::{
    ddim_step, ode_step_order1, sample, sde_step_order1, step_order2, step_order3, HistoryPolicy,
    SamplerConfig, SolverMode, Trajectory,
};
pub use schedule::{NoiseSchedule, ScheduleKind, StepGap};
