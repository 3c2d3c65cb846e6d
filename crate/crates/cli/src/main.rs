use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use holosim_core::holarchy::{holon_timeline, timeline_csv, HolonChange};
use holosim_core::probability::{
    closed_form, mc_estimate, p_any_triple, p_bound, p_favorite, p_triple, within_three_sigma,
    McEvent, ProbParams,
};
use holosim_core::scenario::{export_tables, reference_example, TableKind};
use holosim_core::trace::{best0_csv, remaining_csv};
use holosim_core::{parse_scenario, run, EventTrace, Scenario};

const EXIT_INPUT: u8 = 1;
const EXIT_ENGINE: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "holosim", version, about = "Holon formation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the bundled example and compare its tables with the goldens.
    Replay {
        #[arg(long, value_enum, default_value = "all")]
        tables: Tables,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replay this scenario instead of the bundled one.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Print the holon timeline of a trace.
    Holons {
        #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
        trace: Option<PathBuf>,
        /// Use the bundled example and check its expected timeline.
        #[arg(long)]
        builtin: bool,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Closed-form probabilities.
    Prob {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        c: u32,
        #[arg(long, default_value_t = 1)]
        k: u32,
    },
    /// Monte Carlo estimates against the closed forms.
    Mc {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        c: u32,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Project tables out of a stored trace.
    Export {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        tables: Tables,
        #[arg(long, default_value_t = 1)]
        from: u64,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Tables {
    Best0,
    Best,
    Remaining,
    All,
}

impl Tables {
    fn kinds(self) -> Vec<TableKind> {
        match self {
            Tables::Best0 => vec![TableKind::Best0],
            Tables::Best => vec![TableKind::Best],
            Tables::Remaining => vec![TableKind::Remaining],
            Tables::All => TableKind::ALL.to_vec(),
        }
    }
}

struct Failure {
    code: u8,
    msg: String,
}

fn fail(code: u8, msg: impl Into<String>) -> Failure {
    Failure {
        code,
        msg: msg.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("holosim: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run {
            scenario,
            seed,
            horizon,
            format,
            out,
        } => cmd_run(&scenario, seed, horizon, format, out.as_deref()),
        Cmd::Replay {
            tables,
            out,
            scenario,
        } => cmd_replay(tables, out.as_deref(), scenario.as_deref()),
        Cmd::Holons { trace, builtin, k } => cmd_holons(trace.as_deref(), builtin, k),
        Cmd::Prob { n, c, k } => cmd_prob(n, c, k),
        Cmd::Mc {
            n,
            c,
            k,
            trials,
            seed,
        } => cmd_mc(n, c, k, trials, seed),
        Cmd::Export {
            trace,
            tables,
            from,
            to,
            out,
        } => cmd_export(&trace, tables, from, to, out.as_deref()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn load_trace(path: &Path) -> Result<EventTrace, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    EventTrace::from_jsonl(&text).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            fs::write(p, text).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(
    scenario: &Scenario,
    seed: Option<u64>,
    horizon: Option<u64>,
) -> Result<(EventTrace, u64), Failure> {
    let mut cfg = scenario
        .config()
        .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    let trace = run(&cfg, scenario).map_err(|e| fail(EXIT_ENGINE, e.to_string()))?;
    Ok((trace, cfg.horizon))
}

fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    horizon: Option<u64>,
    format: Format,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = load_scenario(path)?;
    let (trace, horizon) = simulate(&scenario, seed, horizon)?;
    let text = match format {
        Format::Jsonl => trace.to_jsonl(),
        Format::Csv => format!(
            "{}\n{}",
            best0_csv(&trace, 1, horizon),
            remaining_csv(&trace, 1, horizon)
        ),
    };
    emit(out, &text)
}

/// First differing line of two CSV tables, as (row key, column, expected, actual).
fn first_diff(expected: &str, actual: &str) -> Option<(String, String, String, String)> {
    let exp: Vec<&str> = expected.lines().collect();
    let act: Vec<&str> = actual.lines().collect();
    let header: Vec<&str> = exp
        .first()
        .map(|h| h.split(',').collect())
        .unwrap_or_default();
    for i in 0..exp.len().max(act.len()) {
        let (e, a) = (
            exp.get(i).copied().unwrap_or(""),
            act.get(i).copied().unwrap_or(""),
        );
        if e == a {
            continue;
        }
        let ec: Vec<&str> = e.split(',').collect();
        let ac: Vec<&str> = a.split(',').collect();
        let key = ec.first().or(ac.first()).copied().unwrap_or("").to_string();
        for j in 0..ec.len().max(ac.len()) {
            let (x, y) = (
                ec.get(j).copied().unwrap_or(""),
                ac.get(j).copied().unwrap_or(""),
            );
            if x != y {
                let col = header.get(j).copied().unwrap_or("?").to_string();
                return Some((key, col, x.to_string(), y.to_string()));
            }
        }
    }
    None
}

fn cmd_replay(tables: Tables, out: Option<&Path>, scenario: Option<&Path>) -> Result<(), Failure> {
    let scenario = match scenario {
        Some(p) => load_scenario(p)?,
        None => reference_example(),
    };
    let (trace, _) = simulate(&scenario, None, None)?;
    let mut text = String::new();
    let mut mismatch = None;
    for kind in tables.kinds() {
        let actual = export_tables(&trace, 1..=50, kind);
        if mismatch.is_none() {
            if let Some(d) = first_diff(kind.golden(), &actual) {
                mismatch = Some((kind, d));
            }
        }
        if tables == Tables::All {
            text.push_str(&format!("# {}\n", kind.name()));
        }
        text.push_str(&actual);
    }
    emit(out, &text)?;
    match mismatch {
        None => Ok(()),
        Some((kind, (row, col, exp, act))) => Err(fail(
            EXIT_MISMATCH,
            format!(
                "{} differs from golden at row {row}, column {col}: expected {exp}, got {act}",
                kind.name()
            ),
        )),
    }
}

fn expected_timeline() -> Vec<(u64, HolonChange)> {
    vec![
        (14, HolonChange::Emerged("α".into())),
        (36, HolonChange::Dissolved("α".into())),
        (46, HolonChange::Emerged("β".into())),
        (49, HolonChange::Emerged("γ".into())),
    ]
}

fn cmd_holons(trace: Option<&Path>, builtin: bool, k: usize) -> Result<(), Failure> {
    if k == 0 {
        return Err(fail(EXIT_USAGE, "--k must be at least 1"));
    }
    let trace = match trace {
        Some(p) => load_trace(p)?,
        None => simulate(&reference_example(), None, None)?.0,
    };
    let timeline = holon_timeline(&trace, k);
    print!("{}", timeline_csv(&timeline));
    if builtin && timeline != expected_timeline() {
        return Err(fail(
            EXIT_MISMATCH,
            "timeline differs from the expected one",
        ));
    }
    Ok(())
}

fn params(n: u64, c: u32, k: u32) -> Result<ProbParams, Failure> {
    ProbParams::new(n, c, k).map_err(|e| fail(EXIT_USAGE, e.to_string()))
}

fn cmd_prob(n: u64, c: u32, k: u32) -> Result<(), Failure> {
    let p = params(n, c, k)?;
    let usage = |e: holosim_core::ProbError| fail(EXIT_USAGE, e.to_string());
    let fav = p_favorite(n, c).map_err(usage)?;
    let tri = p_triple(&p).map_err(usage)?;
    let any = p_any_triple(&p).map_err(usage)?;
    let bound = p_bound(&p).map_err(usage)?;
    println!("N = {n}, C = {c}, K = {k}");
    println!("p_favorite    = {} ~ {:e}", fav.fraction(), fav.to_f64());
    println!("p_triple      = {} ~ {:e}", tri.fraction(), tri.to_f64());
    let flag = if any.to_f64() > 1.0 {
        " (exceeds 1: bound, not a probability)"
    } else {
        ""
    };
    println!(
        "p_any_triple  = {} ~ {:e}{flag}",
        any.fraction(),
        any.to_f64()
    );
    println!(
        "bound         = {} ~ {:e}",
        bound.middle.fraction(),
        bound.middle.to_f64()
    );
    println!(
        "approximation = {n}^-{} ~ {:e}",
        bound.exponent,
        bound.approx.to_f64()
    );
    Ok(())
}

fn cmd_mc(n: u64, c: u32, k: u32, trials: u64, seed: u64) -> Result<(), Failure> {
    let p = params(n, c, k)?;
    if trials == 0 {
        return Err(fail(EXIT_USAGE, "--trials must be at least 1"));
    }
    let mut all_pass = true;
    for event in [McEvent::Favorite, McEvent::Triple] {
        let exact = closed_form(&p, event)
            .map_err(|e| fail(EXIT_USAGE, e.to_string()))?
            .to_f64();
        let mc =
            mc_estimate(&p, event, trials, seed).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
        let ok = within_three_sigma(&mc, exact);
        all_pass &= ok;
        let name = match event {
            McEvent::Favorite => "favorite",
            McEvent::Triple => "triple",
        };
        println!(
            "{name}: estimate {} +- {:.3e} vs exact {exact:e} ({} trials): {}",
            mc.estimate,
            mc.stderr,
            mc.trials,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("verdict: {}", if all_pass { "PASS" } else { "FAIL" });
    Ok(())
}

fn cmd_export(
    path: &Path,
    tables: Tables,
    from: u64,
    to: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let trace = load_trace(path)?;
    let to = to.unwrap_or_else(|| trace.last_tick());
    if from > to {
        return Err(fail(EXIT_USAGE, "--from is after --to"));
    }
    let mut text = String::new();
    for kind in tables.kinds() {
        if tables == Tables::All {
            text.push_str(&format!("# {}\n", kind.name()));
        }
        text.push_str(&export_tables(&trace, from..=to, kind));
    }
    emit(out, &text)
}
