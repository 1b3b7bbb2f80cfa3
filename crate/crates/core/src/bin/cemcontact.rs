use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cemcontact::experiment::{basis_decay, run_experiment, sweep, ExperimentConfig, Preset, Setup, SweepParam, Variant};
use cemcontact::grid::GridHierarchy;
use cemcontact::medium::{MediumStyle, PermeabilityField, WeightMode};
use cemcontact::metrics::sci;
use cemcontact::source::ScalarFunction;
use cemcontact::{Error, Result};

#[derive(Parser)]
#[command(name = "cemcontact", version, about = "Multiscale active-set solvers for Signorini contact problems")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated permeability field.
    GenerateMedium {
        #[arg(long, default_value_t = 200)]
        nx: usize,
        #[arg(long, default_value = "A")]
        style: MediumStyle,
        #[arg(long, default_value_t = 1e3)]
        contrast: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run the configured solver variants and write tables and field dumps.
    Run(ConfigArgs),
    /// Rerun the multiscale variant over a list of layer or eigenvector counts.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// layers (m) or eigvecs (l).
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Write basis functions for several oversampling depths and their
    /// energy distance to the global basis function.
    DumpBasis {
        #[command(flatten)]
        config: ConfigArgs,
        /// Coarse element index.
        #[arg(long, default_value_t = 0)]
        element: usize,
        /// Eigenvector index within the element.
        #[arg(long, default_value_t = 0)]
        eigvec: usize,
        #[arg(long = "depths", value_delimiter = ',', default_value = "1,2,3,4")]
        depths: Vec<usize>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in parameter set used when no file is given.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    nx: Option<usize>,
    /// Coarse elements per axis.
    #[arg(long)]
    coarse: Option<usize>,
    #[arg(long)]
    style: Option<MediumStyle>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Permeability file instead of a generated medium.
    #[arg(long)]
    medium: Option<PathBuf>,
    /// f1, f2, a constant or an expression in x and y.
    #[arg(long)]
    source: Option<ScalarFunction>,
    /// Neumann data p.
    #[arg(long)]
    neumann: Option<ScalarFunction>,
    /// fine, cem or oracle; repeatable.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Oversampling layers m.
    #[arg(long, short = 'm')]
    layers: Option<usize>,
    /// Eigenvectors per coarse element.
    #[arg(long, short = 'l')]
    eigvecs: Option<usize>,
    #[arg(long)]
    weight: Option<WeightMode>,
    /// Rebuild every basis function at each active-set change.
    #[arg(long)]
    full_rebuild: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::preset(self.preset),
        };
        if let Some(v) = self.nx {
            c.grid.nx = v;
        }
        if let Some(v) = self.coarse {
            c.grid.coarse = v;
        }
        if let Some(v) = self.style {
            c.medium.style = v;
        }
        if let Some(v) = self.contrast {
            c.medium.contrast = v;
        }
        if let Some(v) = self.seed {
            c.medium.seed = v;
        }
        if self.medium.is_some() {
            c.medium.file = self.medium;
        }
        if let Some(v) = self.source {
            c.data.source = v;
        }
        if let Some(v) = self.neumann {
            c.data.neumann = v;
        }
        if !self.variants.is_empty() {
            c.variants = self.variants;
        }
        if let Some(v) = self.c {
            c.solver.c = v;
        }
        if let Some(v) = self.max_iter {
            c.solver.max_iter = v;
        }
        if let Some(v) = self.layers {
            c.multiscale.layers = v;
        }
        if let Some(v) = self.eigvecs {
            c.multiscale.eigvecs = v;
        }
        if let Some(v) = self.weight {
            c.multiscale.weight = v;
        }
        if self.full_rebuild {
            c.multiscale.incremental = false;
        }
        if let Some(v) = self.output {
            c.output = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenerateMedium {
            nx,
            style,
            contrast,
            seed,
            output,
        } => {
            let g = GridHierarchy::new(nx, nx)?;
            let k = PermeabilityField::generate(&g, style, contrast, seed)?;
            k.write(&output)?;
            println!("wrote {}×{} medium (contrast {}) to {}", nx, nx, k.contrast(), output.display());
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let s = run_experiment(&cfg)?;
            for o in &s.outcomes {
                println!("{:<7} iterations {:>3}  active nodes {:>5}", o.variant.name(), o.iterations, o.n_active);
            }
            if let Some((el, ea)) = s.terminal_errors {
                println!("terminal E_L {}  E_a {}", sci(el), sci(ea));
            }
            println!("output in {}", s.output.display());
        }
        Command::Sweep { config, param, values } => {
            let cfg = config.resolve()?;
            println!("{:>6} {:>5} {:>12} {:>12}", param.name(), "iters", "E_L", "E_a");
            for (v, s) in sweep(&cfg, param, &values)? {
                let (el, ea) = s.terminal_errors.unwrap_or((f64::NAN, f64::NAN));
                let it = s.outcome(Variant::Cem).map_or(0, |o| o.iterations);
                println!("{v:>6} {it:>5} {:>12} {:>12}", sci(el), sci(ea));
            }
        }
        Command::DumpBasis {
            config,
            element,
            eigvec,
            depths,
        } => {
            let cfg = config.resolve()?;
            let setup = Setup::new(&cfg)?;
            let mut b = setup.builder(&cfg.multiscale, &cfg.data.neumann)?;
            let prof = basis_decay(&mut b, element, eigvec, &depths, Some(&cfg.output))?;
            println!("{:>3} {:>12} {:>12}", "m", "|psi-glo|_a", "relative");
            for (m, e) in prof.layers.iter().zip(&prof.errors) {
                println!("{m:>3} {:>12} {:>12}", sci(*e), sci(e / prof.global_norm));
            }
            println!("fitted ratio per layer {:.3}", prof.fitted_ratio());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonTermination { oscillating, .. } = e.root() {
                eprintln!("oscillating contact nodes: {oscillating:?}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
