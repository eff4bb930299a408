use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uavtag::actors::{AccessGrant, BackendServer, TagRegistry, TagSelection};
use uavtag::crypto::{MacAlgorithm, RandomSource};
use uavtag::report::AccountingReport;
use uavtag::sim::games::{run_game_suite, GameSetup, TagVariant};
use uavtag::sim::{run_scenario, ScenarioConfig, SeedSource};
use uavtag::wire::{AccessRights, Timestamp32};

#[derive(Parser)]
#[command(name = "uavtag", version, about = "UAV/RFID mutual authentication and tag search: registries, grants, scenarios, attack games")]
struct Cli {
    /// Seed for every random draw; a random one is printed when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Keyed MAC.
    #[arg(long, global = true, default_value = "hmac-sha1")]
    mac: MacAlgorithm,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a registry of random tags.
    GenRegistry {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        manufactured_at: u32,
        /// File name inside --out.
        #[arg(long, default_value = "registry.txt")]
        file: String,
    },
    /// Issue an access grant for a UAV over part of a registry.
    Issue {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        uav: String,
        /// `all` or comma-separated labels.
        #[arg(long)]
        tags: String,
        #[arg(long)]
        t0: u32,
        #[arg(long)]
        tz: u32,
        /// `rwx`-style flags or 32 hex characters.
        #[arg(long, default_value = "r--")]
        rights: String,
        /// Server clock at issuance; defaults to T0.
        #[arg(long)]
        issued_at: Option<u32>,
        #[arg(long, default_value = "grant.txt")]
        file: String,
    },
    /// Run a scenario file.
    Run { scenario: PathBuf },
    /// Run Games 1-3 for both protocols and the desync probe.
    Games {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        grant: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Swap in tags with static responses; Game 3 must then fail.
        #[arg(long)]
        break_untraceability: bool,
    },
}

enum Failure {
    /// Bad input or environment: exit 2.
    Usage(String),
    /// A check or monitor failed: exit 1.
    Check,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn seed_or_random(seed: Option<u64>) -> Result<u64, Failure> {
    match seed {
        Some(s) => Ok(s),
        None => {
            let s = RandomSource::os().next_u64()?;
            eprintln!("seed={s}");
            Ok(s)
        }
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn read(path: &Path) -> Result<String, Failure> {
    Ok(fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenRegistry { count, manufactured_at, file } => {
            if count == 0 {
                return Err(Failure::Usage("--count must be at least 1".into()));
            }
            let seed = seed_or_random(cli.seed)?;
            let registry = TagRegistry::generate(count, &mut RandomSource::seeded(seed), Timestamp32(manufactured_at))?;
            let path = write_out(&cli.out, &file, &registry.render())?;
            println!("tags={count} file={}", path.display());
        }
        Command::Issue { registry, uav, tags, t0, tz, rights, issued_at, file } => {
            let registry = TagRegistry::parse(&read(&registry)?)?;
            let selection = match tags.trim() {
                "all" => TagSelection::All,
                list => TagSelection::Labels(list.split(',').map(|l| l.trim().to_string()).collect()),
            };
            let rights = AccessRights::parse(&rights)?;
            let mut server = BackendServer::new(registry, cli.mac);
            let issued = server.issue_grant(
                &uav,
                &selection,
                rights,
                Timestamp32(t0),
                Timestamp32(tz),
                Timestamp32(issued_at.unwrap_or(t0)),
            )?;
            let path = write_out(&cli.out, &file, &issued.grant.render())?;
            println!("entries={} file={}", issued.grant.entries().len(), path.display());
        }
        Command::Run { scenario } => {
            let (config, source) = ScenarioConfig::load(&scenario, cli.mac, cli.seed)?;
            if source == SeedSource::Random {
                eprintln!("seed={}", config.seed);
            }
            let outcome = run_scenario(&config)?;
            let accounting = AccountingReport::from_outcome(&outcome);
            let mut report = accounting.render();
            if let Some(adv) = &outcome.adversary {
                report.push_str(&adv.render());
            }
            write_out(&cli.out, "transcript.log", &outcome.transcript_text())?;
            write_out(&cli.out, "counters.txt", &outcome.counters_text())?;
            write_out(&cli.out, "accounting.txt", &report)?;
            print!("{report}");
            for alarm in &outcome.alarms {
                eprintln!("alarm: {alarm}");
            }
            let games_ok = outcome
                .adversary
                .as_ref()
                .is_none_or(|a| a.results.iter().all(|r| r.passed()));
            println!(
                "seed={} events={} key_agreements={} alarms={}",
                outcome.seed,
                outcome.transcript.events().len(),
                outcome.key_agreements(),
                outcome.alarms.len()
            );
            if !(outcome.passed() && accounting.passed() && games_ok) {
                return Err(Failure::Check);
            }
        }
        Command::Games { registry, grant, trials, break_untraceability } => {
            if trials == 0 {
                return Err(Failure::Usage("--trials must be at least 1".into()));
            }
            let seed = seed_or_random(cli.seed)?;
            let registry = TagRegistry::parse(&read(&registry)?)?;
            let grant = AccessGrant::parse(&read(&grant)?)?;
            let setup = GameSetup::new(registry, grant, cli.mac)?;
            let variant = if break_untraceability {
                TagVariant::StaticResponse
            } else {
                TagVariant::Honest
            };
            let suite = run_game_suite(&setup, trials, seed, variant)?;
            let text = format!("seed={seed}\n{}", suite.render());
            write_out(&cli.out, "games.txt", &text)?;
            print!("{text}");
            if !suite.passed() {
                return Err(Failure::Check);
            }
        }
    }
    Ok(())
}
