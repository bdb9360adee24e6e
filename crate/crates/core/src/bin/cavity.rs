use std::path::PathBuf;
use std::process::ExitCode;

use boussinesq::bench::{emit_csv, run_sweep, BenchmarkCase, Method};
use boussinesq::{LineSearchKind, MeshSpec, Result};
use clap::{Args, Parser, Subcommand};

/// Differentially heated cavity benchmark.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one case from a `key = value` file, flags override the file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        args: CaseArgs,
    },
    /// Run every combination of the listed Ra, m and beta values.
    Sweep {
        /// Base case file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: CaseArgs,
        /// Run cases one after another.
        #[arg(long)]
        serial: bool,
    },
    /// Write the mesh as text.
    Mesh {
        #[arg(long, default_value_t = MeshSpec::DESK.n)]
        mesh_n: usize,
        #[arg(long, default_value_t = MeshSpec::DESK.boundary_layers)]
        layers: usize,
        #[arg(long)]
        no_alfeld: bool,
        /// Output file, stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct CaseArgs {
    #[arg(long)]
    mesh_n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ra: Vec<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    /// `m_small,m_large,threshold`
    #[arg(long)]
    two_stage: Option<String>,
    #[arg(long)]
    linesearch: Option<LineSearchKind>,
    /// Look-ahead damping factors, comma separated.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Directory for the CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CaseArgs {
    fn apply(&self, case: &mut BenchmarkCase) -> Result<()> {
        if let Some(n) = self.mesh_n {
            case.mesh_n = n;
        }
        if let Some(m) = self.method {
            case.method = m;
        }
        if let Some(v) = &self.two_stage {
            case.set("two_stage", v)?;
        }
        if let Some(ls) = self.linesearch {
            case.linesearch = ls;
        }
        if let Some(v) = &self.beta_grid {
            case.set("beta_grid", v)?;
        }
        if let Some(t) = self.tol {
            case.tol = t;
        }
        if let Some(n) = self.max_iters {
            case.max_iters = n;
        }
        Ok(())
    }

    fn expand(&self, base: &BenchmarkCase) -> Vec<BenchmarkCase> {
        let ras = if self.ra.is_empty() {
            vec![base.ra()]
        } else {
            self.ra.clone()
        };
        let ms = if self.m.is_empty() {
            vec![base.m]
        } else {
            self.m.clone()
        };
        let betas = if self.beta.is_empty() {
            vec![base.beta]
        } else {
            self.beta.clone()
        };
        boussinesq::bench::grid(base, &ras, &ms, &betas)
    }
}

fn base_case(config: Option<&PathBuf>, args: &CaseArgs) -> Result<BenchmarkCase> {
    let mut case = match config {
        Some(p) => BenchmarkCase::from_file(p)?,
        None => BenchmarkCase::default(),
    };
    if config.is_none() && args.method == Some(Method::Newton) {
        case.max_iters = 200;
    }
    args.apply(&mut case)?;
    Ok(case)
}

fn sweep(
    cases: Vec<BenchmarkCase>,
    out: Option<&PathBuf>,
    parallel: bool,
    verbose: bool,
) -> Result<bool> {
    let table = run_sweep(&cases, parallel);
    let mut all_ok = true;
    for r in &table.results {
        if verbose {
            for row in &r.record.rows {
                println!("{}", row.log_line(""));
            }
        }
        let rec = &r.record;
        println!(
            "{} status={} iterations={} seconds={:.3}{}",
            rec.label,
            rec.status,
            rec.iterations,
            rec.seconds,
            rec.message
                .as_deref()
                .map(|m| format!(" message=\"{m}\""))
                .unwrap_or_default()
        );
        all_ok &= rec.message.is_none();
    }
    if let Some(dir) = out {
        for p in emit_csv(&table, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, args } => {
            if args.ra.len() > 1 || args.m.len() > 1 || args.beta.len() > 1 {
                return Err(boussinesq::Error::InvalidArgument(
                    "run takes single values; use sweep for lists".into(),
                ));
            }
            let base = base_case(Some(&config), &args)?;
            sweep(args.expand(&base), args.out.as_ref(), false, true)
        }
        Command::Sweep {
            config,
            args,
            serial,
        } => {
            let base = base_case(config.as_ref(), &args)?;
            sweep(args.expand(&base), args.out.as_ref(), !serial, false)
        }
        Command::Mesh {
            mesh_n,
            layers,
            no_alfeld,
            out,
        } => {
            let mesh = MeshSpec {
                n: mesh_n,
                boundary_layers: layers,
                alfeld: !no_alfeld,
            }
            .build()?;
            match out {
                Some(p) => mesh.write_text(&p)?,
                None => print!("{}", mesh.to_text()),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
