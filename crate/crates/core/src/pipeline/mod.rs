//! Closed-loop execution, evaluation, ablation and run configuration.

mod config;
mod rollout;
mod run;

pub use config::{
    DataSection, DynamicsSection, ModelSection, Overrides, PlannerSection, Profile, RolloutSection, RunConfig, Seeds,
    Variant, WorldSection,
};
pub use rollout::{
    closed_loop_rollout, write_trace, BankPredictor, LabelPlanner, Planner, PlannerCadence, PlannerDecision,
    Predictor, RolloutOptions, RolloutTrace, ScriptedPredictor, SeedSource,
};
pub use run::{
    attention_edges, build_bank, build_planner, evaluate, fit_bank, fit_planner, held_out_spawns, read_losses_csv,
    run_ablation, training_dataset, write_ablation_csv, write_attention_csv, write_losses_csv, AblationRow,
    AttentionEdge,
};
