use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gfm-bess",
    version,
    about = "Battery-fed grid-forming converter experiments"
)]
pub struct Cli {
    /// Config file. Defaults to $GFM_BESS_CONFIG_DIR/default.cfg when that
    /// variable is set, otherwise the built-in parameters.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,

    /// Worker threads for parallel runs. Never changes results.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load-step simulation: trajectory.csv, summary.txt, manifest.json.
    Simulate(ScenarioArgs),
    /// DC voltage of several battery orders on one time grid.
    CompareOrders {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Battery orders to compare.
        #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
        orders: Vec<u8>,
    },
    /// Eigenvalues, damping and the feasibility verdict: modes.txt.
    Linearize {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        criteria: CriteriaArgs,
    },
    /// Grid search over the four DC/DC gains: tuning.csv, tuning_summary.txt.
    Tune {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        criteria: CriteriaArgs,
        /// Grid spacing.
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Lower gain bound.
        #[arg(long, default_value_t = 0.0)]
        k_min: f64,
        /// Upper gain bound.
        #[arg(long, default_value_t = 10.0)]
        k_max: f64,
        /// Screen at twice the step first, then refine around survivors.
        #[arg(long)]
        coarse_to_fine: bool,
    },
    /// Parameter sweeps with fixed DC/DC gains.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Predictor gain sweep: kpred.csv. Values must include 0.
    Kpred {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated K_pred values.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,2.5,3")]
        values: Vec<f64>,
    },
    /// DC-link capacitance sweep: cdc.csv.
    Cdc {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated capacitances with unit suffix (F, mF, uF, nF).
        #[arg(long, value_delimiter = ',', default_value = "0.5mF,1mF,2mF,4mF")]
        values: Vec<String>,
        /// K_pred of the second curve.
        #[arg(long, default_value_t = 2.0)]
        kpred: f64,
    },
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Battery model order (0, 2 or 4). Defaults to the config value.
    #[arg(long)]
    pub order: Option<u8>,
    /// Load step magnitude (pu).
    #[arg(long, default_value_t = 0.5)]
    pub dp: f64,
    /// Pre-step active load (pu). Defaults to the config value.
    #[arg(long)]
    pub p_load: Option<f64>,
    /// Pre-step reactive load (pu). Defaults to the config value.
    #[arg(long)]
    pub q_load: Option<f64>,
    /// Step time (s).
    #[arg(long, default_value_t = 0.05)]
    pub t_step: f64,
    /// Horizon (s).
    #[arg(long, default_value_t = 0.5)]
    pub t_end: f64,
    /// Record spacing (s).
    #[arg(long, default_value_t = 1e-4)]
    pub stride: f64,
    /// DC/DC gains `kp_vdc,ki_vdc,kp_ib,ki_ib` (pu). Defaults to the config.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub gains: Option<Vec<f64>>,
    /// Predictor gain. Defaults to the config value.
    #[arg(long)]
    pub k_pred: Option<f64>,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct CriteriaArgs {
    /// Largest admissible eigenvalue real part (1/s).
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub lambda_crit: f64,
    /// Smallest admissible damping ratio.
    #[arg(long, default_value_t = 0.35)]
    pub zeta_crit: f64,
}
