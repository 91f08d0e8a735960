use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polmem::error::Result;
use polmem::exec::with_workers;
use polmem::pipeline::{cmd_benchmark, cmd_echo, cmd_sweep, cmd_tomo, RunConfig};

#[derive(Parser)]
#[command(name = "polmem", version, about = "Dual-rail AFC memory for polarization qubits: simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical-memory fidelity bound for a set of efficiencies
    Benchmark(Common),
    /// Transmitted pulse and AFC echo detection histogram
    Echo(Common),
    /// Tomography of the six cardinal inputs plus analyzer fringe scans
    Tomo(Common),
    /// Average fidelity versus mean photon number against the classical bound
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (defaults apply to missing keys)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip SVG plots
    #[arg(long)]
    no_plot: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Benchmark(c) | Command::Echo(c) | Command::Tomo(c) | Command::Sweep(c) => c,
    };
    let cfg = common.config()?;
    let plot = !common.no_plot;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config_used.toml"), cfg.to_toml_string()?)?;
    with_workers(cfg.workers, || match cli.command {
        Command::Benchmark(_) => {
            let r = cmd_benchmark(&cfg, plot)?;
            for (eta, curve) in cfg.eta_lines.iter().zip(&r.curves) {
                let last = curve.last().expect("non-empty grid");
                println!("eta = {eta:<6}  f_class(mu = {:.3e}) = {:.6}", last.mu, last.f_class);
            }
            print_files(&r.files);
            Ok(())
        }
        Command::Echo(_) => {
            let r = cmd_echo(&cfg, plot)?;
            match r.echo_delay_s {
                Some(t) => println!("echo delay {:.1} ns, efficiency {:.4}", t * 1e9, r.echo_efficiency),
                None => println!("no echo (empty pit)"),
            }
            print_files(&r.files);
            Ok(())
        }
        Command::Tomo(_) => {
            let r = cmd_tomo(&cfg, plot)?;
            println!("input  F_raw     ±err     F_dark_sub");
            for res in &r.results {
                println!(
                    "{:<6} {:.4}   {:.4}   {:.4}",
                    res.input, res.fidelity_raw, res.fidelity_err, res.fidelity_dark_subtracted
                );
            }
            println!("mean   {:.4}   {:.4}   {:.4}", r.mean_fidelity, r.mean_fidelity_err, r.mean_dark_subtracted);
            for f in &r.fringes {
                println!("fringe {:<6} V = {:.4} ± {:.4}", f.name, f.fit.visibility, f.fit.visibility_err);
            }
            print_files(&r.files);
            Ok(())
        }
        Command::Sweep(_) => {
            let r = cmd_sweep(&cfg, plot)?;
            print!("mu        F_raw    F_dark_sub");
            for (eta, _) in &r.benchmarks {
                print!("  F_class({eta})");
            }
            println!();
            for (k, p) in r.points.iter().enumerate() {
                print!("{:<9} {:.4}   {:.4}    ", p.mu, p.fidelity_raw, p.fidelity_dark_subtracted);
                for (_, curve) in &r.benchmarks {
                    print!("  {:.4}       ", curve[k].f_class);
                }
                println!();
            }
            print_files(&r.files);
            Ok(())
        }
    })
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
