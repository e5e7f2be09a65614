use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;

use nwfpp::cmbp::{self, BpStop, RootStart};
use nwfpp::experiments;
use nwfpp::format::f17;
use nwfpp::fpp::{self, Color};
use nwfpp::mgf::{self, SolverConfig};
use nwfpp::nwgraph::{generate, GraphConfig, WeightedGraph};
use nwfpp::rng;
use nwfpp::theory::constants;

#[derive(Parser)]
#[command(name = "nwfpp", version, about = "First passage percolation on Newman-Watts small worlds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a verification campaign from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the model constants for `rho` as JSON.
    Constants {
        #[arg(long)]
        rho: f64,
    },
    /// Generate a graph and dump it as CSV plus a JSON sidecar.
    Graph {
        #[command(flatten)]
        g: GraphArgs,
        /// CSV path; the sidecar goes to `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Fpp(FppCmd),
    #[command(subcommand)]
    Bp(BpCmd),
    #[command(subcommand)]
    Mgf(MgfCmd),
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GraphArgs {
    fn build(&self) -> Result<WeightedGraph> {
        Ok(generate(&GraphConfig::new(self.n, self.rho, self.seed))?)
    }
}

#[derive(Args)]
struct OutArg {
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn open(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

#[derive(Subcommand)]
enum FppCmd {
    /// Weights and hopcounts between random vertex pairs.
    Distance {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long, default_value_t = 1)]
        pairs: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fraction of vertices within distance t of a source.
    Epidemic {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long, default_value_t = 0)]
        source: usize,
        /// `t0:t1:dt`
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Collision log between two vertices, relative to the freeze time.
    Collide {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long)]
        u: Option<usize>,
        #[arg(long)]
        v: Option<usize>,
        /// Freeze time; defaults to log(n) / (2 lambda).
        #[arg(long)]
        tfreeze: Option<f64>,
        /// Growth of SWT^V past the freeze time.
        #[arg(long)]
        horizon: f64,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RootArg {
    Blue,
    Red,
}

impl From<RootArg> for Color {
    fn from(r: RootArg) -> Color {
        match r {
            RootArg::Blue => Color::Blue,
            RootArg::Red => Color::Red,
        }
    }
}

#[derive(Subcommand)]
enum BpCmd {
    /// Samples of the martingale limit W.
    SampleW {
        #[arg(long)]
        rho: f64,
        #[arg(long, value_enum, default_value = "blue")]
        root: RootArg,
        /// Defaults to 10 / lambda.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Give the root an Exp(1) lifetime instead of splitting at time 0.
        #[arg(long)]
        living: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Split-by-split trace of one process.
    Diag {
        #[arg(long)]
        rho: f64,
        #[arg(long, value_enum, default_value = "blue")]
        root: RootArg,
        #[arg(long)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Subcommand)]
enum MgfCmd {
    /// Solve the MGF fixed point and write the table.
    Solve {
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 10.0)]
        theta_max: f64,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// The limiting epidemic curve f(t).
    Fcurve {
        #[arg(long)]
        rho: f64,
        /// `t0:t1:dt`
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value_t = 200.0)]
        theta_max: f64,
        #[arg(long, default_value_t = 2048)]
        grid_points: usize,
        #[command(flatten)]
        out: OutArg,
    },
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("grid `{s}` must be t0:t1:dt"))?;
    let [t0, t1, dt] = parts[..] else {
        bail!("grid `{s}` must be t0:t1:dt");
    };
    if !(t0 <= t1 && dt > 0.0) {
        bail!("grid `{s}` needs t0 <= t1 and dt > 0");
    }
    let steps = ((t1 - t0) / dt + 1e-9).floor() as usize;
    Ok((0..=steps).map(|i| t0 + dt * i as f64).collect())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { config, workers } => {
            let s = experiments::run_campaign(&config, workers)?;
            for r in &s.reports {
                eprintln!("{:<10} {}  ({:.1} s)", r.experiment, if r.pass { "PASS" } else { "FAIL" }, r.runtime_s);
                for f in &r.failed_reps {
                    eprintln!("  failed rep n={} rep={}: {}", f.n, f.rep, f.error);
                }
            }
            return Ok(s.all_pass);
        }
        Cmd::Constants { rho } => {
            let k = constants(rho)?;
            println!("{}", serde_json::to_string_pretty(&k.report())?);
        }
        Cmd::Graph { g, out } => {
            let graph = g.build()?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            graph.write_csv(&mut w)?;
            w.flush()?;
            let mut side = out.clone().into_os_string();
            side.push(".json");
            let meta = serde_json::json!({"n": g.n, "rho": g.rho, "seed": g.seed});
            std::fs::write(&side, format!("{meta}\n"))?;
        }
        Cmd::Fpp(c) => fpp_cmd(c)?,
        Cmd::Bp(c) => bp_cmd(c)?,
        Cmd::Mgf(c) => mgf_cmd(c)?,
    }
    Ok(true)
}

fn fpp_cmd(c: FppCmd) -> Result<()> {
    match c {
        FppCmd::Distance { g, pairs, out } => {
            let graph = g.build()?;
            let mut r = rng::stream(g.seed, "cli/fpp/pairs", &[]);
            let mut w = out.open()?;
            writeln!(w, "pair_id,u,v,weight,hopcount")?;
            for i in 0..pairs {
                let u = r.random_range(0..g.n);
                let v = loop {
                    let v = r.random_range(0..g.n);
                    if v != u {
                        break v;
                    }
                };
                let p = fpp::distance(&graph, u, v)?;
                writeln!(w, "{},{},{},{},{}", i, u, v, f17(p.weight), p.hopcount)?;
            }
            w.flush()?;
        }
        FppCmd::Epidemic { g, source, grid, out } => {
            let graph = g.build()?;
            let grid = parse_grid(&grid)?;
            let curve = fpp::epidemic_curve(&graph, source, &grid)?;
            let mut w = out.open()?;
            writeln!(w, "t,I_n")?;
            for (t, i) in grid.iter().zip(curve) {
                writeln!(w, "{},{}", f17(*t), f17(i))?;
            }
            w.flush()?;
        }
        FppCmd::Collide { g, u, v, tfreeze, horizon, out } => {
            let graph = g.build()?;
            let mut r = rng::stream(g.seed, "cli/fpp/collide", &[]);
            let u = u.unwrap_or_else(|| r.random_range(0..g.n));
            let v = v.unwrap_or_else(|| (u + 1 + r.random_range(0..g.n - 1)) % g.n);
            let t = match tfreeze {
                Some(t) => t,
                None => constants(g.rho)?.t_n(g.n),
            };
            let c = fpp::collision_connect(&graph, u, v, t, Some(horizon))?;
            let mut w = out.open()?;
            writeln!(w, "s,color_pair,remaining_lifetime")?;
            for x in c.log.collisions.iter().filter(|x| x.primary && !x.duplicate) {
                writeln!(w, "{},{},{}", f17(x.s), x.pair().label(), f17(x.remaining))?;
            }
            w.flush()?;
            eprintln!("u={u} v={v} weight={} hopcount={}", f17(c.path.weight), c.path.hopcount);
        }
    }
    Ok(())
}

fn bp_cmd(c: BpCmd) -> Result<()> {
    match c {
        BpCmd::SampleW { rho, root, horizon, reps, seed, living, out } => {
            let k = constants(rho)?;
            let h = horizon.unwrap_or_else(|| cmbp::default_horizon(&k));
            let start = if living { RootStart::Living } else { RootStart::Immediate };
            let ws = cmbp::sample_w(&k, root.into(), start, h, reps, seed)?;
            let mut w = out.open()?;
            writeln!(w, "rep,W")?;
            for (i, x) in ws.iter().enumerate() {
                writeln!(w, "{},{}", i, f17(*x))?;
            }
            w.flush()?;
        }
        BpCmd::Diag { rho, root, splits, seed, out } => {
            let traj = cmbp::simulate(rho, root.into(), BpStop::AtSplits(splits), seed)?;
            let mut w = out.open()?;
            writeln!(w, "i,T_i,parent_type,d_R,d_B,S_i")?;
            for (i, s) in traj.splits.iter().enumerate() {
                writeln!(w, "{},{},{},{},{},{}", i + 1, f17(s.t), s.parent.letter(), s.d_r, s.d_b, s.alive)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn mgf_cmd(c: MgfCmd) -> Result<()> {
    match c {
        MgfCmd::Solve { rho, theta_max, grid_points, out } => {
            let k = constants(rho)?;
            let cfg = SolverConfig { theta_max, grid_points, ..SolverConfig::default() };
            let table = mgf::solve(&k, &cfg)?;
            let mut w = out.open()?;
            table.write_csv(&mut w)?;
            w.flush()?;
            eprintln!("converged in {} iterations, residual {:e}", table.history.len(), table.residual);
        }
        MgfCmd::Fcurve { rho, grid, theta_max, grid_points, out } => {
            let k = constants(rho)?;
            let grid = parse_grid(&grid)?;
            let cfg = SolverConfig { theta_max, grid_points, ..SolverConfig::default() };
            let table = mgf::solve(&k, &cfg)?;
            let mut w = out.open()?;
            writeln!(w, "t,x,f")?;
            for t in grid {
                let f = table.f_curve(t)?;
                writeln!(w, "{},{},{}", f17(t), f17(k.epidemic_x(t)), f17(f))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
