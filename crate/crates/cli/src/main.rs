use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use framenet::experiment::{
    cond_report, init_demo, precision_experiment, report, run_training, sample_parameters, sci, summarize,
    write_cond_csv, write_init_csv, write_precision_csv, ExperimentConfig, Preconditioning,
};
use framenet::fem::{solve_reference, DiffusionField, DyadicMesh};
use framenet::nn::ArchKind;
use framenet::optim::OptimizerKind;
use framenet::ScalarKind;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "framenet", version, about = "Frame-preconditioned neural surrogates for a 1D parametric diffusion problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a TOML configuration.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the configuration.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a configuration preset as TOML.
    Template {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long, default_value = "adam")]
        optimizer: String,
        #[arg(long, default_value = "frame_stable")]
        preconditioning: Preconditioning,
        #[arg(long, default_value = "f32")]
        precision: ScalarKind,
    },
    /// Finite element reference solution `(x, u, sigma)` for one parameter.
    Reference {
        /// Four comma-separated coefficients in [0.5, 1.5].
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        #[arg(long = "J", default_value_t = 10)]
        levels: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Condition numbers of the nodal, preconditioned and factored operators.
    Cond {
        #[arg(long, default_value_t = 3)]
        jmin: usize,
        #[arg(long, default_value_t = 8)]
        jmax: usize,
        /// Random parameters in addition to `a = 1`.
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "cond.csv")]
        output: PathBuf,
    },
    /// Quadratic-form errors of both evaluation paths in f16, f32 and f64.
    Precision {
        #[arg(long = "J", default_value_t = 10)]
        levels: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "precision.csv")]
        output: PathBuf,
    },
    /// Initial fields with and without the frame representation.
    InitDemo {
        #[arg(long, default_value = "full")]
        arch: ArchKind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long = "J", default_value_t = 10)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        output: PathBuf,
    },
    /// Render all `summary.csv` files below a directory as a markdown table.
    Report { dir: PathBuf },
}

fn optimizer(name: &str) -> Result<OptimizerKind> {
    Ok(match name {
        "sgd" => OptimizerKind::Sgd,
        "adam" => OptimizerKind::Adam,
        "lbfgs" => OptimizerKind::Lbfgs,
        "ngd" => OptimizerKind::Ngd,
        other => bail!("unknown optimizer '{other}' (sgd, adam, lbfgs, ngd)"),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, output } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if output.is_some() {
                cfg.output_dir = output;
            }
            let r = run_training(&cfg)?;
            let last = r.last();
            println!(
                "{}: {} parameters, epoch {}, test loss {:.3e}, MRE {:.3e}, MSE {:.3e}{}",
                cfg.name,
                r.param_count,
                last.epoch,
                last.test_loss,
                last.mre,
                last.mse,
                if r.diverged { " (diverged)" } else { "" }
            );
            if let Some(dir) = &cfg.output_dir {
                println!("outputs in {}", dir.display());
            }
        }
        Command::Template { preset, optimizer: name, preconditioning, precision } => {
            let opt = optimizer(&name)?;
            let cfg = match preset {
                Preset::Desk => ExperimentConfig::desk(opt, preconditioning, precision),
                Preset::Paper => ExperimentConfig::paper(opt, preconditioning, precision),
            };
            print!("{}", cfg.to_toml()?);
        }
        Command::Reference { y, levels, output } => {
            let Ok(y) = <[f64; 4]>::try_from(y.as_slice()) else { bail!("--y takes exactly four values") };
            let field = DiffusionField::new(y)?;
            let sol = solve_reference(&field, levels, 1.0)?;
            let mesh = DyadicMesh::new(levels)?;
            let mut out: Box<dyn Write> = match &output {
                Some(p) => Box::new(std::fs::File::create(p)?),
                None => Box::new(std::io::stdout().lock()),
            };
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["x", "u", "sigma"])?;
            let last = mesh.elements();
            for (i, x) in mesh.nodes().into_iter().enumerate() {
                let u = if i == 0 || i == last { 0.0 } else { sol.u[i - 1] };
                w.write_record([sci(x), sci(u), sci(sol.sigma[i])])?;
            }
            w.flush()?;
        }
        Command::Cond { jmin, jmax, samples, seed, output } => {
            if jmin < 2 || jmax > 8 || jmin > jmax {
                bail!("levels must satisfy 2 <= jmin <= jmax <= 8");
            }
            let rows = cond_report(jmin, jmax, &sample_parameters(samples, seed))?;
            write_cond_csv(&output, &rows)?;
            println!("{:>2} {:>12} {:>12} {:>12} {:>12}", "J", "max cond A", "max HᵀAH", "max DᵀCD", "max C");
            for j in jmin..=jmax {
                let sel: Vec<_> = rows.iter().filter(|r| r.levels == j).collect();
                let max = |f: fn(&framenet::experiment::CondRow) -> f64| sel.iter().map(|r| f(r)).fold(0.0, f64::max);
                println!(
                    "{j:>2} {:>12.4e} {:>12.4} {:>12.4} {:>12.4}",
                    max(|r| r.cond_a),
                    max(|r| r.cond_hah),
                    max(|r| r.cond_dcd),
                    max(|r| r.cond_c)
                );
            }
            println!("wrote {}", output.display());
        }
        Command::Precision { levels, trials, seed, output } => {
            let rows = precision_experiment(levels, trials, seed)?;
            write_precision_csv(&output, &rows)?;
            for s in summarize(&rows) {
                println!(
                    "{:<9} {:<3}  median stable {:.3e}  unstable {:.3e}  ratio {:.1}",
                    s.draw,
                    s.precision,
                    s.median_stable,
                    s.median_unstable,
                    s.ratio()
                );
            }
            println!("wrote {}", output.display());
        }
        Command::InitDemo { arch, count, levels, seed, output } => {
            let draws = init_demo(arch, levels, count, seed)?;
            std::fs::create_dir_all(&output)?;
            let (fields, norms) = (output.join("init_fields.csv"), output.join("init_norms.csv"));
            write_init_csv(&fields, &norms, &draws)?;
            let mut ratios: Vec<f64> = draws.iter().map(|d| d.raw_h1 / d.frame_h1).collect();
            println!("median H1 ratio raw/frame: {:.2}", framenet::experiment::median(&mut ratios));
            println!("wrote {} and {}", fields.display(), norms.display());
        }
        Command::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}
