use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtdd::harness::{self, Experiment, MetricsReport, RateStats, RunOptions, Schemes};
use dtdd::{Error, Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dtdd", version, about = "Dynamic TDD scheduling for mmWave relay networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo experiment over seeded drops.
    Run(Common),
    /// One drop with topology, schedule, problem and move-log dumps.
    Drop {
        #[command(flatten)]
        common: Common,
        /// Drop index (selects the random stream).
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Greedy versus exhaustive search (defaults to the 4-subframe preset).
    Brute {
        #[command(flatten)]
        common: Common,
        /// Enumerate every schedule instead of one per subframe permutation class.
        #[arg(long)]
        unreduced: bool,
    },
    /// Static LTE-TDD configurations only.
    SweepStatic(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Dtdd,
    Static,
    Brute,
    All,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped scenario: case1, case2 or brute.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; drop k uses stream k of it.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    drops: Option<usize>,
    /// Subframes available to the dynamic and exhaustive schedulers.
    #[arg(long, value_name = "N")]
    subframes: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Schemes to run (default: dynamic and static, plus exhaustive when the scenario enables it).
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Write the greedy search move log.
    #[arg(long)]
    trace: bool,
}

impl Common {
    fn scenario(&self, default_preset: &str) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ScenarioConfig::load(p)?,
            (None, Some(name)) => {
                ScenarioConfig::preset(name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?
            }
            (None, None) => ScenarioConfig::preset(default_preset).expect("default preset exists"),
        };
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(d) = self.drops {
            cfg.experiment.drops = d;
        }
        if let Some(n) = self.subframes {
            cfg.frame.usable_subframes = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn schemes(&self, fallback: Schemes) -> Schemes {
        match self.scheme {
            None => fallback,
            Some(SchemeArg::All) => Schemes::ALL,
            Some(SchemeArg::Dtdd) => Schemes { dtdd: true, static_sweep: false, brute: false },
            Some(SchemeArg::Static) => Schemes { dtdd: false, static_sweep: true, brute: false },
            Some(SchemeArg::Brute) => Schemes { dtdd: false, static_sweep: false, brute: true },
        }
    }
}

fn mbps(s: &Option<RateStats>) -> String {
    match s {
        Some(s) => format!("{:>9.2} {:>9.2} {:>9.3}", s.mean / 1e6, s.median / 1e6, s.edge / 1e6),
        None => format!("{:>9} {:>9} {:>9}", "-", "-", "-"),
    }
}

fn summary_text(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "seed {} | {} drops ({} skipped) | {} relays, {} users | {} dynamic subframes",
        r.seed,
        r.drops,
        r.skipped.len(),
        r.n_rn,
        r.n_ue,
        r.dynamic_subframes
    );
    let _ = writeln!(s, "{:<12} {:>29} | {:>29}", "Mbps", "DL mean / median / edge", "UL mean / median / edge");
    for m in &r.schemes {
        let _ = writeln!(s, "{:<12} {} | {}", m.scheme, mbps(&m.dl), mbps(&m.ul));
    }
    if let Some(g) = &r.gains {
        let _ = writeln!(
            s,
            "{:<12} {:>8.2}x {:>8.2}x {:>8.2}x | {:>8.2}x {:>8.2}x {:>8.2}x",
            "gain", g.dl.mean, g.dl.median, g.dl.edge, g.ul.mean, g.ul.median, g.ul.edge
        );
    }
    let ls = &r.link_states;
    let _ = writeln!(s, "user link states: LOS {:.3}  NLOS {:.3}  outage {:.3}", ls.los, ls.nlos, ls.outage);
    if let Some(it) = &r.iterations {
        let _ = writeln!(
            s,
            "inner solves per drop: mean {:.2}, max {} | accepted moves {:.2} | max KKT residual {:.2e}",
            it.mean_inner_calls, it.max_inner_calls, it.mean_accepted_moves, it.max_kkt_residual
        );
    }
    if let Some(ratio) = r.mean_brute_ratio() {
        let worst = r.brute.iter().map(|b| b.ratio).fold(f64::INFINITY, f64::min);
        let evaluated = r.brute.iter().map(|b| b.brute_evaluated).max().unwrap_or(0);
        let _ = writeln!(
            s,
            "greedy/exhaustive utility: mean {ratio:.5}, worst {worst:.5} | {evaluated} schedules per exhaustive search"
        );
    }
    for k in &r.skipped {
        let _ = writeln!(s, "drop {} skipped ({}): {}", k.drop, k.category, k.message);
    }
    s
}

fn run_and_emit(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<Experiment> {
    let exp = harness::run_experiment(cfg, opts)?;
    let paths = harness::emit_outputs(&exp, out)?;
    print!("{}", summary_text(&exp.report));
    println!("wrote {} and {}", paths.flows_csv.display(), paths.summary_json.display());
    Ok(exp)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn single_drop(cfg: &ScenarioConfig, common: &Common, index: usize) -> Result<()> {
    let mut opts = RunOptions::new(common.schemes(Schemes::from_config(cfg)));
    opts.trace = true;
    let patterns = harness::static_patterns(cfg)?;
    let o = harness::run_drop(cfg, index, &opts, &patterns)?;
    let out = &common.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let topo = &o.topology;
    write(&out.join("topology.json"), &harness::topology_json(topo)?)?;
    println!("drop {index}: {}", harness::describe(topo));
    if let Some(st) = &o.dtdd {
        let solver = harness::solver_for(cfg);
        write(&out.join("problem.txt"), &solver.problem(topo, &st.schedule).to_text())?;
        write(&out.join("schedule.txt"), &st.schedule.to_string())?;
        write(&out.join("trace.txt"), &st.trace_text())?;
        println!(
            "dtdd: utility {:.6} after {} inner solves, schedule {}",
            st.utility,
            st.inner_calls,
            st.schedule.access_string(topo)
        );
    }
    if let Some(sw) = &o.static_sweep {
        let mut t = String::from("# config utility\n");
        for c in &sw.outcomes {
            let _ = writeln!(t, "{} {:.9}", c.config.label(), c.utility);
        }
        write(&out.join("static.txt"), &t)?;
        println!("static: {} configurations, best {} ({:.6})", sw.outcomes.len(), sw.best().config.label(), sw.best().utility);
    }
    if let Some(b) = &o.brute {
        println!("exhaustive: utility {:.6} over {} schedules", b.utility, b.evaluated);
    }
    let json = serde_json::to_string_pretty(&o.samples).map_err(|e| Error::Serde(e.to_string()))?;
    write(&out.join("flows.json"), &json)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.scenario("case1")?;
            let mut opts = RunOptions::new(c.schemes(Schemes::from_config(&cfg)));
            opts.trace = c.trace;
            run_and_emit(&cfg, &opts, &c.out).map(|_| ())
        }
        Command::Drop { common, index } => {
            let cfg = common.scenario("case1")?;
            single_drop(&cfg, &common, index)
        }
        Command::Brute { common, unreduced } => {
            let cfg = common.scenario("brute")?;
            let mut opts = RunOptions::new(common.schemes(Schemes { dtdd: true, static_sweep: false, brute: true }));
            opts.trace = common.trace;
            opts.brute_unreduced = unreduced;
            run_and_emit(&cfg, &opts, &common.out).map(|_| ())
        }
        Command::SweepStatic(c) => {
            let cfg = c.scenario("case1")?;
            let mut opts = RunOptions::new(c.schemes(Schemes { dtdd: false, static_sweep: true, brute: false }));
            opts.trace = c.trace;
            run_and_emit(&cfg, &opts, &c.out).map(|_| ())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Parse { .. } => 3,
        Error::Io { .. } => 4,
        Error::Deployment(_) => 5,
        Error::TooLarge(_) => 6,
        Error::Schedule(_) => 7,
        Error::Infeasible(_) => 8,
        Error::Serde(_) => 9,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
