use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icprobe::lexicon::{LexiconBundle, Resource};
use icprobe::report::commands;
use icprobe::report::config::{Config, GenSection, CONFIG_HELP};
use icprobe::stimgen::{GenderCondition, StimulusKind};

/// Implicit-causality probing toolkit: generate stimuli, score them with
/// language-model backends, analyse and plot the results.
#[derive(Parser)]
#[command(name = "icprobe", version, after_long_help = CONFIG_HELP)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stimulus set as JSON lines.
    #[command(after_long_help = CONFIG_HELP)]
    Gen(GenArgs),
    /// Run an experiment over the configured backends.
    #[command(after_long_help = CONFIG_HELP)]
    Run(ConfigArg),
    /// Fit the configured models and t-tests to a record table.
    #[command(after_long_help = CONFIG_HELP)]
    Stats(ConfigArg),
    /// Emit the configured figures and their aggregated tables.
    #[command(after_long_help = CONFIG_HELP)]
    Plot(ConfigArg),
    /// Run the built-in invariant suite on the bundled lexicons.
    Selfcheck,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config file.
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Read `[gen]` and `[lexicons]` from this config; flags override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// referential, completion or rc_reading.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<StimulusKind>,
    /// Gender condition for referential frames: mismatch or match.
    #[arg(long, value_parser = parse_condition)]
    condition: Option<GenderCondition>,
    /// Output path.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Verb norm TSV (default: bundled).
    #[arg(long)]
    verb_norms: Option<PathBuf>,
    /// Noun pair TSV (default: bundled).
    #[arg(long)]
    noun_pairs: Option<PathBuf>,
    /// Completion item JSON lines (default: bundled).
    #[arg(long)]
    rc_completion: Option<PathBuf>,
    /// Reading item JSON lines (default: bundled).
    #[arg(long)]
    rc_reading: Option<PathBuf>,
    /// Vocabulary, one word per line (default: bundled).
    #[arg(long)]
    vocabulary: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<StimulusKind, String> {
    s.parse()
}

fn parse_condition(s: &str) -> Result<GenderCondition, String> {
    s.parse()
}

fn load_config(path: &Path) -> icprobe::Result<(Config, PathBuf)> {
    let (cfg, _, base) = Config::load(path)?;
    Ok((cfg, base))
}

fn gen(args: GenArgs) -> icprobe::Result<()> {
    let (cfg, base) = match &args.config {
        Some(p) => load_config(p)?,
        None => (Config::default(), PathBuf::new()),
    };
    let from_cfg = cfg.gen.clone();
    let kind = args.kind.or(from_cfg.as_ref().map(|g| g.kind));
    let Some(kind) = kind else {
        return Err(icprobe::report::ReportError::Config("gen needs --kind or a [gen] section".into()).into());
    };
    let condition = args
        .condition
        .or(from_cfg.as_ref().map(|g| g.condition))
        .unwrap_or(GenderCondition::Mismatch);
    // Flag paths are relative to the working directory, config paths to the config.
    let (out, out_base) = match (&args.out, &from_cfg) {
        (Some(o), _) => (o.clone(), PathBuf::new()),
        (None, Some(g)) => (g.out.clone(), base.clone()),
        (None, None) => {
            return Err(icprobe::report::ReportError::Config("gen needs --out or a [gen] section".into()).into())
        }
    };
    let mut overrides = cfg.lexicons.overrides(&base);
    for (r, p) in [
        (Resource::VerbNorms, &args.verb_norms),
        (Resource::NounPairs, &args.noun_pairs),
        (Resource::RcCompletion, &args.rc_completion),
        (Resource::RcReading, &args.rc_reading),
        (Resource::Vocabulary, &args.vocabulary),
    ] {
        if let Some(p) = p {
            overrides.insert(r, p.clone());
        }
    }
    let lex = LexiconBundle::load(&overrides)?;
    let section = GenSection { kind, condition, out };
    let n = commands::cmd_gen(&section, &lex, &out_base)?;
    println!("wrote {n} {} stimuli to {}", kind.as_str(), out_base.join(&section.out).display());
    Ok(())
}

fn execute(command: Command) -> icprobe::Result<bool> {
    match command {
        Command::Gen(args) => gen(args)?,
        Command::Run(a) => {
            let (cfg, base) = load_config(&a.config)?;
            let m = commands::cmd_run(&cfg, &base)?;
            println!(
                "{}: {} records, {} dropped of {} expected",
                m.experiment.as_deref().unwrap_or("run"),
                m.emitted,
                m.dropped,
                m.expected
            );
            for (reason, n) in &m.drop_summary {
                println!("  dropped {n}: {reason}");
            }
        }
        Command::Stats(a) => {
            let (cfg, base) = load_config(&a.config)?;
            let m = commands::cmd_stats(&cfg, &base)?;
            for out in m.outputs.keys() {
                println!("wrote {out}");
            }
        }
        Command::Plot(a) => {
            let (cfg, base) = load_config(&a.config)?;
            let m = commands::cmd_plot(&cfg, &base)?;
            for out in m.outputs.keys() {
                println!("wrote {out}");
            }
        }
        Command::Selfcheck => {
            let results = icprobe::selfcheck::run_selfcheck();
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
