use std::path::PathBuf;
use std::process::ExitCode;

use atprompt::pipeline::{self, AblationAxis, Method, RunConfig};
use atprompt::Error;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "atprompt", version, about = "Attribute-anchored soft prompt experiments")]
struct Cli {
    /// Run config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed for single-run commands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated run seeds, e.g. `1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Name of the environment variable holding the LLM credential.
    #[arg(long, global = true)]
    credential_env: Option<String>,

    /// Config override as `dotted.key=value`, value in TOML syntax.
    /// Repeatable; applied after the config file and before the flags above.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dataset for the run seed and its manifest.
    GenData,
    /// Search attribute combinations for the run seed.
    SearchAttrs,
    /// Train on base classes and evaluate base and novel accuracy.
    Train {
        /// Also train the class-only baseline and write a comparison table.
        #[arg(long)]
        classic: bool,
    },
    /// Re-evaluate stored checkpoints.
    Eval,
    /// Sweep one layout or training axis.
    Ablate {
        /// length, class_position, drop_policy, attr_order, attr_position or init.
        #[arg(long)]
        axis: String,
    },
    /// Summarize every artifact in the output directory.
    Report,
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{spec}` is not of the form key=value")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut table: toml::Table = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
            text.parse()
                .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for spec in &cli.overrides {
        apply_override(&mut table, spec)?;
    }
    let mut config = RunConfig::from_toml(&table.to_string())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(seeds) = &cli.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(name) = &cli.credential_env {
        if let Some(llm) = config.attributes.llm.as_mut() {
            llm.client.credential_env = name.clone();
        }
    }
    config.validate()?;
    Ok(config)
}

fn print_report(label: &str, r: &atprompt::train::EvalReport) {
    println!(
        "{label:<10} base {:>6.2}  novel {:>6.2}  hm {:>6.2}  seeds {:?}",
        r.base_accuracy, r.novel_accuracy, r.harmonic_mean, r.seeds
    );
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let m = pipeline::gen_data(&config)?;
            println!("wrote {}", config.out_dir.join("data").join(&m.dataset).display());
            for (split, n) in &m.splits {
                println!("{split}: {n} samples");
            }
            println!("sha256: {}", m.sha256);
        }
        Command::SearchAttrs => {
            let r = pipeline::search_attrs(&config)?;
            print!("{}", r.to_text());
        }
        Command::Train { classic } => {
            let methods: &[Method] = if *classic {
                &[Method::Classic, Method::Atprompt]
            } else {
                &[Method::Atprompt]
            };
            for (method, r) in pipeline::train(&config, methods)? {
                print_report(method.as_str(), &r);
            }
            let cmp = config.out_dir.join("comparison.txt");
            if *classic && cmp.exists() {
                let text = std::fs::read_to_string(&cmp).map_err(|e| Error::Configuration(e.to_string()))?;
                print!("{text}");
            }
        }
        Command::Eval => {
            for (method, r) in pipeline::eval(&config)? {
                print_report(method.as_str(), &r);
            }
        }
        Command::Ablate { axis } => {
            let axis: AblationAxis = axis.parse()?;
            print!("{}", pipeline::ablate(&config, axis)?.to_text());
        }
        Command::Report => print!("{}", pipeline::report(&config)?),
    }
    Ok(())
}

/// Final stderr line: one JSON object naming the error kind.
fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "status": "error", "kind": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.kind().to_string();
            eprintln!("{}", error_line("usage", &msg));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
