// SPDX-License-Identifier: Apache-2.0

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use damq_noc::config::{build_config, read_settings, ConfigError, Setting};
use damq_noc::report::{
    cmd_run, cmd_sweep, compare, load_records, write_records, Field, Metric, RunRecord, SweepSpec,
};

#[derive(Parser)]
#[command(name = "damqsim", version, about = "Mesh NoC buffer-scheme simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and emit one CSV row.
    Run(RunArgs),
    /// Run the cartesian product of comma-separated value lists.
    Sweep(SweepArgs),
    /// Aggregate CSV files into a table, ratios and plot series.
    Compare(CompareArgs),
}

#[derive(Args)]
struct KeyArgs {
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    height: Option<String>,
    #[arg(long = "vc_count")]
    vc_count: Option<String>,
    #[arg(long = "packet_len")]
    packet_len: Option<String>,
    #[arg(long)]
    vb: Option<String>,
    #[arg(long = "shared_size")]
    shared_size: Option<String>,
    #[arg(long = "injection_rate")]
    injection_rate: Option<String>,
    #[arg(long = "fault_rate")]
    fault_rate: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "warmup_cycles")]
    warmup_cycles: Option<String>,
    #[arg(long = "measure_cycles")]
    measure_cycles: Option<String>,
    #[arg(long = "drain_limit_cycles")]
    drain_limit_cycles: Option<String>,
    #[arg(long)]
    traffic: Option<String>,
    #[arg(long = "misroute_budget")]
    misroute_budget: Option<String>,
}

impl KeyArgs {
    fn settings(&self) -> Vec<Setting> {
        [
            ("scheme", &self.scheme),
            ("width", &self.width),
            ("height", &self.height),
            ("vc_count", &self.vc_count),
            ("packet_len", &self.packet_len),
            ("vb", &self.vb),
            ("shared_size", &self.shared_size),
            ("injection_rate", &self.injection_rate),
            ("fault_rate", &self.fault_rate),
            ("seed", &self.seed),
            ("warmup_cycles", &self.warmup_cycles),
            ("measure_cycles", &self.measure_cycles),
            ("drain_limit_cycles", &self.drain_limit_cycles),
            ("traffic", &self.traffic),
            ("misroute_budget", &self.misroute_budget),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| Setting::new(k, v.clone())))
        .collect()
    }
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: KeyArgs,
    /// Append the row to this CSV file instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: KeyArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    #[arg(long, default_value = "throughput")]
    metric: Metric,
    #[arg(long = "group_by", default_value = "scheme")]
    group_by: Field,
    /// Series axis.
    #[arg(long, default_value = "injection_rate")]
    x: Field,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_RUN: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("damqsim: {msg}");
    ExitCode::from(code)
}

fn file_settings(path: Option<&Path>) -> Result<Vec<Setting>, ConfigError> {
    path.map_or(Ok(Vec::new()), read_settings)
}

fn emit(out: Option<&Path>, records: &[RunRecord], append: bool) -> io::Result<()> {
    let csv_err = |e: damq_noc::report::ReportError| io::Error::new(io::ErrorKind::Other, e.to_string());
    match out {
        None => write_records(io::stdout().lock(), records, true).map_err(csv_err),
        Some(p) if append => {
            let fresh = std::fs::metadata(p).map_or(true, |m| m.len() == 0);
            let f = OpenOptions::new().create(true).append(true).open(p)?;
            write_records(f, records, fresh).map_err(csv_err)
        }
        Some(p) => write_records(File::create(p)?, records, true).map_err(csv_err),
    }
}

fn run_cmd(args: RunArgs) -> ExitCode {
    let cfg = match file_settings(args.config.as_deref())
        .and_then(|file| build_config(&file, &args.keys.settings()))
    {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    match cmd_run(&cfg) {
        Ok(record) => match emit(args.out.as_deref(), &[record], true) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(EXIT_RUN, e),
        },
        Err(e) => fail(EXIT_RUN, e),
    }
}

fn sweep_cmd(args: SweepArgs) -> ExitCode {
    let file = match file_settings(args.config.as_deref()) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let mut spec = SweepSpec::default();
    let mut overrides = Vec::new();
    for s in args.keys.settings() {
        match spec.add(&s.key, &s.value) {
            Ok(Some(plain)) => overrides.push(plain),
            Ok(None) => {
                // The template takes the first value; expansion replaces it.
                let first = s.value.split(',').next().unwrap_or("").trim().to_string();
                overrides.push(Setting::new(s.key, first));
            }
            Err(e) => return fail(EXIT_USAGE, e),
        }
    }
    let configs = match build_config(&file, &overrides).and_then(|t| spec.expand(&t)) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let results = cmd_sweep(&configs, args.jobs);
    let mut rows = Vec::with_capacity(results.len());
    for (i, (cfg, r)) in configs.iter().zip(results).enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => eprintln!(
                "damqsim: row {i} ({} rate={} fr={} seed={}) failed: {e}",
                cfg.scheme, cfg.injection_rate, cfg.fault_rate, cfg.seed
            ),
        }
    }
    if rows.is_empty() {
        return fail(EXIT_RUN, "no row could be produced");
    }
    match emit(args.out.as_deref(), &rows, false) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_RUN, e),
    }
}

fn compare_cmd(args: CompareArgs) -> ExitCode {
    let mut rows = Vec::new();
    for path in &args.csv {
        match load_records(path) {
            Ok(recs) => rows.extend(recs.into_iter().map(|r| (path.display().to_string(), r))),
            Err(e) => return fail(EXIT_RUN, e),
        }
    }
    let table = match compare(&rows, args.metric, args.group_by, args.x) {
        Ok(c) => c.to_string(),
        Err(e) => return fail(EXIT_RUN, e),
    };
    let written = match &args.out {
        Some(p) => std::fs::write(p, table),
        None => io::stdout().lock().write_all(table.as_bytes()),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_RUN, e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}
