//! Simulation toolkit for consistent price systems under proportional
//! transaction costs: path generation, first-exit ladders, an explicit
//! martingale measure for the retired walk, event-probability estimation and
//! simple arbitrage scans.

pub mod arbitrage;
pub mod error;
pub mod events;
pub mod extent;
pub mod measure;
pub mod par;
pub mod pathgen;
pub mod retirement;
pub mod stats;
pub mod transforms;

pub use arbitrage::{
    evaluate_strategy, scan_threshold_strategies, PnlReport, PnlVerdict, PriceMap, ScanReport, StrategySpec,
    ThresholdLattice, TradeRule,
};
pub use error::{Error, Result};
pub use events::{
    cfs_violation_witness, check_condition_a, check_na_condition, estimate_event, event_member, ConditionReport,
    EventEstimate, EventLattice, EventSpec, TauRule, Verdict,
};
pub use extent::Extent;
pub use measure::{expected_terminal, make_chain_measure, reweight_ensemble, ChainMeasure, PathWeight};
pub use pathgen::{
    Driver, Ensemble, ModelKind, ModelSpec, PathGenerator, PathSource, ReplayInfo, SamplePath, TimeGrid,
};
pub use retirement::{
    build_ladder, effective_epsilon, validate_sandwich, CrossingMode, LadderParams, LadderResult, SandwichReport,
};
pub use transforms::{TransformRegistry, TransformSpec};
