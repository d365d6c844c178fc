use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use eai_attack::attack::{
    transfer_attack, AttackLeader, AttackRun, AttackSetup, GuidanceMode, Scheduler,
};
use eai_attack::config::RunConfig;
use eai_attack::dataset::{self, format};
use eai_attack::experiment as ex;
use eai_attack::metrics::{emit_report, ReportFormat, ReportRow};
use eai_attack::policy::{NormKind, Policy};
use eai_attack::scene::{Archetype, Trajectory};
use eai_attack::types::AttackType;
use eai_attack::Error;

#[derive(Parser)]
#[command(
    name = "eai-attack",
    version,
    about = "Demos, policies, attack leaders, attacks and their evaluation"
)]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, env = "EATK_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Worker threads used across episodes.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    Minmax,
    Meanstd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record expert demonstrations as `.traj` files.
    GenDemos {
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        archetype: Option<String>,
        /// Every archetype, one sub-directory each.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        n: Option<u64>,
        /// First scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Behavior-clone a policy from a directory of demos. Also writes `<out>.stats`.
    TrainPolicy {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, value_enum, default_value = "minmax")]
        norm: Norm,
        #[arg(long)]
        seed: Option<u64>,
        /// Hidden widths, comma separated.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Skip the clean-success gate.
        #[arg(long)]
        no_gate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a guidance-labelled attack dataset.
    GenTibbers {
        #[arg(long)]
        archetype: String,
        /// Attack type; defaults to the archetype's own level.
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an attack leader on a `.tib` dataset.
    TrainLeader {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run paired clean and attacked episodes.
    Attack {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        leader: Option<PathBuf>,
        /// Needed only without a leader.
        #[arg(long)]
        archetype: Option<String>,
        /// dense, stride:S or adaptive.
        #[arg(long, default_value = "dense")]
        scheduler: String,
        /// leader, fixed-human, random or null.
        #[arg(long, default_value = "leader")]
        guidance: String,
        /// Substitute policy for a black-box transfer attack.
        #[arg(long)]
        transfer: Option<PathBuf>,
        #[arg(long)]
        n: Option<u64>,
        /// First test scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an attack directory: safety verdicts and metrics.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Defaults to `<runs>/eval.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge evaluation CSVs into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        /// Printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

fn archetype(name: &str) -> Res<Archetype> {
    Archetype::from_str(name).or_else(|_| {
        let names: Vec<&str> = Archetype::ALL.iter().map(|a| a.name()).collect();
        usage(format!(
            "unknown archetype `{name}`; expected one of: {}",
            names.join(", ")
        ))
    })
}

/// Writes the resolved config next to a file output, or into a directory output.
fn write_config(cfg: &RunConfig, out: &Path, is_dir: bool) -> Res<()> {
    let path = if is_dir {
        out.join("config.toml")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".config.toml");
        out.with_file_name(name)
    };
    format::write_atomic(&path, cfg.to_toml().as_bytes())?;
    Ok(())
}

fn files_with_ext(dir: &Path, ext: &str, prefix: &str) -> Res<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == ext)
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
        })
        .collect();
    v.sort();
    Ok(v)
}

fn check_sim(cfg: &RunConfig, sim: &eai_attack::scene::SimConfig, what: &str) -> Res<()> {
    if sim != &cfg.sim {
        return Err(
            Error::Config(format!("{what} was recorded with a different [sim] config")).into(),
        );
    }
    Ok(())
}

fn check_policy(cfg: &RunConfig, p: &Policy, path: &Path) -> Res<()> {
    if p.image_size != cfg.sim.image_size || p.max_step != cfg.sim.max_step {
        return Err(Error::Config(format!(
            "policy `{}` does not match the [sim] config",
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn gen_demos(
    cfg: &mut RunConfig,
    arch: Option<String>,
    all: bool,
    n: Option<u64>,
    seed: Option<u64>,
    out: &Path,
) -> Res<()> {
    let archs = match (arch, all) {
        (_, true) => Archetype::ALL.to_vec(),
        (Some(a), false) => vec![archetype(&a)?],
        (None, false) => return usage("give --archetype NAME or --all"),
    };
    if let Some(n) = n {
        cfg.data.n_demos = n;
    }
    if let Some(s) = seed {
        cfg.data.demo_seed = s;
    }
    cfg.validate()?;
    for a in archs {
        let demos = ex::demos(cfg, a)?;
        let dir = if all {
            out.join(a.name())
        } else {
            out.to_path_buf()
        };
        for d in &demos {
            let path = dir.join(format!(
                "demo-{:06}.{}",
                d.scenario.seed,
                dataset::EXT_TRAJECTORY
            ));
            dataset::save_trajectory(&path, d, &cfg.sim)?;
        }
        let ok = demos.iter().filter(|d| d.success).count();
        println!(
            "{}: {} demos ({} successful) in {}",
            a,
            demos.len(),
            ok,
            dir.display()
        );
    }
    write_config(cfg, out, true)
}

fn load_demos(cfg: &RunConfig, dir: &Path) -> Res<Vec<Trajectory>> {
    let files = files_with_ext(dir, dataset::EXT_TRAJECTORY, "")?;
    if files.is_empty() {
        return Err(Error::EmptyInput("no .traj files in the demo directory").into());
    }
    let mut demos = Vec::with_capacity(files.len());
    for f in files {
        let (t, sim) = dataset::load_trajectory(&f)?;
        check_sim(cfg, &sim, &f.display().to_string())?;
        demos.push(t);
    }
    let a = demos[0].scenario.archetype;
    if demos.iter().any(|d| d.scenario.archetype != a) {
        return Err(Error::Config("demo directory mixes archetypes".into()).into());
    }
    Ok(demos)
}

fn train_policy(
    cfg: &mut RunConfig,
    dir: &Path,
    norm: Norm,
    seed: Option<u64>,
    hidden: Option<Vec<usize>>,
    no_gate: bool,
    out: &Path,
) -> Res<()> {
    if let Some(s) = seed {
        cfg.bc.seed = s;
    }
    if let Some(h) = hidden {
        cfg.bc.hidden = h;
    }
    cfg.validate()?;
    let demos = load_demos(cfg, dir)?;
    let arch = demos[0].scenario.archetype;
    let kind = match norm {
        Norm::Minmax => NormKind::MinMax,
        Norm::Meanstd => NormKind::MeanStd,
    };
    let p = ex::policy(cfg, &demos, kind, None, None)?;
    if !no_gate {
        let rate = ex::gate_policy(cfg, &p, &ex::eval_scenarios(cfg, arch)?)?;
        println!("clean success {rate:.2}");
    }
    dataset::save_policy(out, &p)?;
    let stats_path = out.with_extension(dataset::EXT_STATS);
    dataset::save_stats(&stats_path, &ex::action_stats(cfg, &demos)?)?;
    println!(
        "{} policy for {arch} -> {} (+ {})",
        kind.name(),
        out.display(),
        stats_path.display()
    );
    write_config(cfg, out, false)
}

fn gen_tibbers(
    cfg: &mut RunConfig,
    arch: &str,
    level: Option<String>,
    n: Option<u64>,
    seed: Option<u64>,
    out: &Path,
) -> Res<()> {
    let a = archetype(arch)?;
    let e = match level {
        Some(l) => AttackType::from_str(&l)
            .or_else(|_| usage(format!("unknown level `{l}` (critical, dangerous, risky)")))?,
        None => a.level(),
    };
    if let Some(n) = n {
        cfg.data.n_tibbers = n;
    }
    if let Some(s) = seed {
        cfg.data.tibbers_seed = s;
    }
    cfg.validate()?;
    let d = &cfg.data;
    let ds = dataset::gen_tibbers(
        a,
        e,
        d.n_tibbers,
        d.tibbers_seed,
        &cfg.sim,
        &cfg.expert,
        &cfg.safety,
        &cfg.tibbers,
    )?;
    dataset::save_tibbers(out, &ds)?;
    println!(
        "{a}/{e}: {} samples from {} episodes ({} discarded) -> {}",
        ds.samples.len(),
        ds.scenarios.len(),
        ds.discarded.len(),
        out.display()
    );
    for (id, why) in &ds.discarded {
        eprintln!("  discarded episode {id}: {why}");
    }
    write_config(cfg, out, false)
}

fn train_leader(cfg: &mut RunConfig, data: &Path, seed: Option<u64>, out: &Path) -> Res<()> {
    if let Some(s) = seed {
        cfg.leader.seed = s;
    }
    cfg.validate()?;
    let ds = dataset::load_tibbers(data)?;
    check_sim(cfg, &ds.sim, &data.display().to_string())?;
    let l = ex::leader(cfg, &ds)?;
    dataset::save_leader(out, &l)?;
    println!("leader for {} -> {}", l.archetype, out.display());
    write_config(cfg, out, false)
}

struct AttackArgs {
    policy: PathBuf,
    leader: Option<PathBuf>,
    archetype: Option<String>,
    scheduler: String,
    guidance: String,
    transfer: Option<PathBuf>,
    n: Option<u64>,
    seed: Option<u64>,
    out: PathBuf,
}

fn attack(cfg: &mut RunConfig, a: AttackArgs) -> Res<()> {
    if let Some(n) = a.n {
        cfg.data.n_eval = n;
    }
    if let Some(s) = a.seed {
        cfg.data.eval_seed = s;
    }
    cfg.validate()?;
    let guidance = GuidanceMode::from_str(&a.guidance).or_else(|e| usage(e.to_string()))?;
    let victim = dataset::load_policy(&a.policy)?;
    check_policy(cfg, &victim, &a.policy)?;
    let leader: Option<AttackLeader> = a.leader.as_deref().map(dataset::load_leader).transpose()?;
    let arch = match (&a.archetype, &leader) {
        (Some(name), Some(l)) => {
            let arch = archetype(name)?;
            if arch != l.archetype {
                return Err(Error::Config(format!(
                    "leader was trained for {}, not {arch}",
                    l.archetype
                ))
                .into());
            }
            arch
        }
        (Some(name), None) => archetype(name)?,
        (None, Some(l)) => l.archetype,
        (None, None) => return usage("give --leader or --archetype"),
    };
    let adaptive = match &leader {
        Some(l) => ex::adaptive_for(cfg, l),
        None if a.scheduler == "adaptive" => return usage("the adaptive scheduler needs --leader"),
        None => cfg.attack.adaptive(0.0),
    };
    let scheduler = Scheduler::parse(&a.scheduler, adaptive)?;
    let substitute = a
        .transfer
        .as_deref()
        .map(dataset::load_policy)
        .transpose()?;
    if let (Some(s), Some(p)) = (&substitute, &a.transfer) {
        check_policy(cfg, s, p)?;
    }
    let setup = AttackSetup {
        victim: &victim,
        source: &victim,
        leader: leader.as_ref(),
        guidance,
        attack_type: arch.level(),
        pgd: cfg.attack.pgd,
        scheduler,
        baseline_scale: cfg.attack.baseline_scale,
    };
    setup.validate()?;
    let scenarios = ex::eval_scenarios(cfg, arch)?;
    let runs: Vec<AttackRun> = match &substitute {
        None => ex::attack_suite(cfg, &setup, &scenarios)?,
        Some(sub) => scenarios
            .par_iter()
            .enumerate()
            .map(|(i, (spec, init))| {
                transfer_attack(
                    &setup,
                    sub,
                    spec,
                    init,
                    &cfg.sim,
                    ex::attack_seed(cfg.attack.seed, arch, i),
                )
            })
            .collect::<eai_attack::Result<_>>()?,
    };
    fs::create_dir_all(&a.out)?;
    for (i, r) in runs.iter().enumerate() {
        dataset::save_trajectory(
            &a.out.join(format!("clean-{i:03}.traj")),
            &r.clean,
            &cfg.sim,
        )?;
        dataset::save_trajectory(
            &a.out.join(format!("attacked-{i:03}.traj")),
            &r.attacked,
            &cfg.sim,
        )?;
    }
    let freq = runs.iter().map(|r| r.attack_frequency).sum::<f64>() / runs.len().max(1) as f64;
    let mut model = victim.norm.kind().name().to_string();
    if guidance != GuidanceMode::Leader {
        model.push('+');
        model.push_str(guidance.name());
    }
    if substitute.is_some() {
        model.push_str("+transfer");
    }
    let entries: Vec<(String, String)> = [
        ("archetype", arch.name().to_string()),
        ("level", arch.level().to_string()),
        ("model", model),
        ("scheduler", scheduler.label()),
        ("guidance", guidance.name().to_string()),
        ("policy", a.policy.display().to_string()),
        (
            "leader",
            a.leader
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        ),
        (
            "transfer",
            a.transfer
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        ),
        ("episodes", runs.len().to_string()),
        ("eval_seed", cfg.data.eval_seed.to_string()),
        ("attack_seed", cfg.attack.seed.to_string()),
        ("attack_frequency", format!("{freq:.6}")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    format::write_manifest(&a.out.join("manifest.txt"), &entries)?;
    println!(
        "{arch} {}: {} episodes, attack frequency {freq:.3} -> {}",
        scheduler.label(),
        runs.len(),
        a.out.display()
    );
    write_config(cfg, &a.out, true)
}

fn manifest_value<'a>(m: &'a [(String, String)], key: &str) -> Res<&'a str> {
    m.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Failure::Lib(Error::Format(format!("manifest has no `{key}` entry"))))
}

fn eval(cfg: &RunConfig, runs_dir: &Path, stats: &Path, out: Option<PathBuf>) -> Res<()> {
    let manifest = format::read_manifest(&runs_dir.join("manifest.txt"))?;
    let stats = dataset::load_stats(stats)?;
    let clean = files_with_ext(runs_dir, dataset::EXT_TRAJECTORY, "clean-")?;
    let attacked = files_with_ext(runs_dir, dataset::EXT_TRAJECTORY, "attacked-")?;
    if clean.is_empty() || clean.len() != attacked.len() {
        return Err(Error::Format(format!(
            "expected paired runs, found {} clean and {} attacked",
            clean.len(),
            attacked.len()
        ))
        .into());
    }
    let mut runs = Vec::with_capacity(clean.len());
    for (c, a) in clean.iter().zip(&attacked) {
        let (ct, sim) = dataset::load_trajectory(c)?;
        check_sim(cfg, &sim, &c.display().to_string())?;
        let (at, _) = dataset::load_trajectory(a)?;
        runs.push(AttackRun {
            attack_frequency: at.attack_frequency(),
            clean: ct,
            attacked: at,
            pgd: Vec::new(),
        });
    }
    let s = ex::summarize(cfg, &runs, &stats)?;
    let row = s.row(
        manifest_value(&manifest, "archetype")?,
        manifest_value(&manifest, "model")?,
        manifest_value(&manifest, "scheduler")?,
    );
    let out = out.unwrap_or_else(|| runs_dir.join("eval.csv"));
    dataset::save_report(&out, std::slice::from_ref(&row))?;
    print!("{}", emit_report(&[row], ReportFormat::Markdown));
    println!(
        "clean violation rate {:.3}, clean success {:.3} -> attacked {:.3}",
        s.clean_rate, s.clean_success, s.attacked_success
    );
    Ok(())
}

fn report(inputs: &[PathBuf], fmt: Format, out: Option<PathBuf>) -> Res<()> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for p in inputs {
        rows.extend(dataset::load_report(p)?);
    }
    let text = emit_report(
        &rows,
        match fmt {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
        },
    );
    match out {
        Some(p) => format::write_atomic(&p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return usage("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    // an attack directory remembers the config it was produced with
    let config = match (&cli.config, &cli.cmd) {
        (None, Cmd::Eval { runs, .. }) if runs.join("config.toml").exists() => {
            Some(runs.join("config.toml"))
        }
        (c, _) => c.clone(),
    };
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.cmd {
        Cmd::GenDemos {
            archetype,
            all,
            n,
            seed,
            out,
        } => gen_demos(&mut cfg, archetype, all, n, seed, &out),
        Cmd::TrainPolicy {
            demos,
            norm,
            seed,
            hidden,
            no_gate,
            out,
        } => train_policy(&mut cfg, &demos, norm, seed, hidden, no_gate, &out),
        Cmd::GenTibbers {
            archetype,
            level,
            n,
            seed,
            out,
        } => gen_tibbers(&mut cfg, &archetype, level, n, seed, &out),
        Cmd::TrainLeader { data, seed, out } => train_leader(&mut cfg, &data, seed, &out),
        Cmd::Attack {
            policy,
            leader,
            archetype,
            scheduler,
            guidance,
            transfer,
            n,
            seed,
            out,
        } => attack(
            &mut cfg,
            AttackArgs {
                policy,
                leader,
                archetype,
                scheduler,
                guidance,
                transfer,
                n,
                seed,
                out,
            },
        ),
        Cmd::Eval { runs, stats, out } => eval(&cfg, &runs, &stats, out),
        Cmd::Report {
            inputs,
            format,
            out,
        } => report(&inputs, format, out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::ShapeMismatch { .. } => 2,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `eai-attack --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), 3);
        assert_eq!(exit_code(&Error::Format("bad".into())), 2);
        assert_eq!(exit_code(&Error::EmptyInput("none")), 2);
        assert_eq!(exit_code(&Error::Config("mismatch".into())), 1);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 1);
    }

    #[test]
    fn stride_and_guidance_flags_parse() {
        let c = Cli::try_parse_from([
            "eai-attack",
            "attack",
            "--policy",
            "p",
            "--scheduler",
            "stride:3",
            "--guidance",
            "fixed-human",
            "--out",
            "o",
        ])
        .unwrap();
        assert!(matches!(c.cmd, Cmd::Attack { ref scheduler, .. } if scheduler == "stride:3"));
        assert!(Cli::try_parse_from(["eai-attack", "gen-demos", "--out", "o"]).is_err());
    }
}
