use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spinchannel::config::{parse_config, RunConfig};
use spinchannel::run::execute;
use spinchannel::{Error, Result};

/// Entanglement distribution between NV centers through impurity spin
/// chains and ladders.
///
/// Flags override values read from --config. Physical inputs use nm, MHz,
/// kHz and µs.
#[derive(Parser, Debug)]
#[command(name = "spinchannel", version)]
struct Cli {
    /// Configuration file in sectioned key = value format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// chain or ladder.
    #[arg(long)]
    geometry: Option<String>,
    /// Number of channel sites.
    #[arg(long)]
    n: Option<String>,
    #[arg(long = "separation-nm")]
    separation_nm: Option<String>,
    /// Fixed inter-spin spacing; overrides the separation.
    #[arg(long = "spacing-nm")]
    spacing_nm: Option<String>,
    #[arg(long = "gamma-nv-khz")]
    gamma_nv_khz: Option<String>,
    #[arg(long = "gamma-c-khz")]
    gamma_c_khz: Option<String>,
    #[arg(long = "epsilon-mhz")]
    epsilon_mhz: Option<String>,
    /// dense, tebd or auto.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long = "dt-us")]
    dt_us: Option<String>,
    #[arg(long = "t-max-us")]
    t_max_us: Option<String>,
    #[arg(long = "sample-every")]
    sample_every: Option<String>,
    /// Single bond dimension, run without a convergence check.
    #[arg(long = "chi-max")]
    chi_max: Option<String>,
    /// Comma-separated increasing bond dimensions for convergence control.
    #[arg(long = "chi-schedule")]
    chi_schedule: Option<String>,
    #[arg(long)]
    cutoff: Option<String>,
    /// dynamics, length_sweep, missing or disorder.
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated channel lengths for length_sweep.
    #[arg(long = "n-list")]
    n_list: Option<String>,
    /// Comma-separated channel decay rates for length_sweep.
    #[arg(long = "gamma-c-list-khz")]
    gamma_c_list_khz: Option<String>,
    /// Comma-separated missing-spin probabilities.
    #[arg(long = "p-grid")]
    p_grid: Option<String>,
    /// Disorder standard deviation(s), comma-separated.
    #[arg(long = "sigma-mhz")]
    sigma_mhz: Option<String>,
    /// Read sigma as a multiple of the ideal coupling.
    #[arg(long = "sigma-relative")]
    sigma_relative: bool,
    /// Also randomize the NV-channel couplings.
    #[arg(long = "randomize-g")]
    randomize_g: bool,
    #[arg(long)]
    realizations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Missing channel spins as a 0/1 string in channel order.
    #[arg(long = "missing-mask")]
    missing_mask: Option<String>,
    #[arg(long)]
    output: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long = "print-config")]
    print_config: bool,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&str, &Option<String>); 21] = [
            ("geometry", &self.geometry),
            ("n", &self.n),
            ("separation_nm", &self.separation_nm),
            ("spacing_nm", &self.spacing_nm),
            ("gamma_nv_khz", &self.gamma_nv_khz),
            ("gamma_c_khz", &self.gamma_c_khz),
            ("epsilon_mhz", &self.epsilon_mhz),
            ("solver", &self.solver),
            ("dt_us", &self.dt_us),
            ("t_max_us", &self.t_max_us),
            ("sample_every", &self.sample_every),
            ("chi_schedule", &self.chi_max),
            ("chi_schedule", &self.chi_schedule),
            ("cutoff", &self.cutoff),
            ("experiment", &self.experiment),
            ("n_list", &self.n_list),
            ("gamma_c_list_khz", &self.gamma_c_list_khz),
            ("p_grid", &self.p_grid),
            ("sigma_mhz", &self.sigma_mhz),
            ("realizations", &self.realizations),
            ("seed", &self.seed),
        ];
        let mut out: Vec<(&'static str, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if let Some(m) = &self.missing_mask {
            out.push(("missing_mask", m.clone()));
        }
        if let Some(o) = &self.output {
            out.push(("output", o.clone()));
        }
        if self.sigma_relative {
            out.push(("sigma_relative", "true".into()));
        }
        if self.randomize_g {
            out.push(("randomize_g", "true".into()));
        }
        out
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if self.chi_max.is_some() && self.chi_schedule.is_some() {
            return Err(Error::Usage("give either --chi-max or --chi-schedule".into()));
        }
        for (key, value) in self.overrides() {
            cfg.set(key, &value, 0)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.resolve().and_then(|cfg| {
        if cli.print_config {
            print!("{}", cfg.emit());
            return Ok(());
        }
        for path in execute(&cfg)? {
            println!("{}", path.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spinchannel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
