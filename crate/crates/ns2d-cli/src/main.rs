//! Batch experiment runner: simulation ensembles, coupled pairs, mixing and
//! recurrence statistics, and the verification gates.
//!
//! Exit codes: 0 ok, 2 check failure, 3 trajectory blow-up, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ns2d::coupling::CouplingEngine;
use ns2d::experiment::{
    censor_distances, ensemble_final_states, estimate_dual_lipschitz, fit_mixing_rate,
    initial_state, run_ensemble, verify_operators, verify_suite, verify_weights,
    write_verify_artifacts, ExperimentConfig, ObservableDictionary,
};
use ns2d::io::{write_blocks_csv, write_manifest, write_weight_sweep_csv, WeightSweepRow};
use ns2d::weights::{a2_ball_ratio, classify_ball, BallFamily, BallType, Weight};
use ns2d::ledger::recurrence_time;
use ns2d::rng::StreamKey;
use ns2d::{Error, SpectralField};

#[derive(Parser)]
#[command(name = "ns2d", about = "Damped stochastic 2D Navier-Stokes: simulation and verification")]
struct Cli {
    /// TOML experiment configuration (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an independent trajectory ensemble with ledgers.
    Simulate,
    /// Run coupled pairs over T-blocks and emit block outcomes.
    Couple,
    /// Two-ensemble dual-Lipschitz distance ladder and decay fits.
    Mixing,
    /// Recurrence-time statistics for coupled pairs.
    Recurrence,
    /// Weight and Muckenhoupt oracle checks.
    VerifyWeights,
    /// Spectral-operator identity checks.
    VerifyOperators,
    /// The full verification battery.
    VerifyAll,
    /// Fit decay laws to a distance series CSV with columns t,D.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.noise.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.output.directory = dir.to_string_lossy().into_owned();
    }
    Ok(config)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        match e {
            Error::BlowUp { .. } => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(cli)?;
    let out_dir = PathBuf::from(&config.output.directory);
    match &cli.command {
        Command::Simulate => simulate(&config, &out_dir),
        Command::Couple => couple(&config, &out_dir),
        Command::Mixing => mixing(&config, &out_dir),
        Command::Recurrence => recurrence(&config, &out_dir),
        Command::VerifyWeights => {
            let report = verify_weights(256, 512)?;
            print!("{}", report.render());
            write_verify_artifacts(&report, &config, &out_dir)?;
            let sweep = emit_weight_sweep(&out_dir)?;
            write_manifest(
                &out_dir,
                &[out_dir.join("verify_report.txt"), out_dir.join("config.toml"), sweep],
            )?;
            Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::VerifyOperators => {
            let report = verify_operators(64, 100, config.noise.seed ^ 0x5eed)?;
            print!("{}", report.render());
            write_verify_artifacts(&report, &config, &out_dir)?;
            Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::VerifyAll => {
            let report = verify_suite(&config)?;
            print!("{}", report.render());
            let manifest = write_verify_artifacts(&report, &config, &out_dir)?;
            println!("manifest: {}", manifest.display());
            Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Fit { input } => fit(input),
    }
}

fn simulate(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExitCode> {
    let artifacts = run_ensemble(config, out_dir)?;
    println!("{} files, manifest {}", artifacts.files.len(), artifacts.manifest.display());
    for (id, step) in &artifacts.failures {
        println!("member {id}: blow-up at step {step}");
    }
    Ok(ExitCode::SUCCESS)
}

fn couple(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(out_dir)?;
    let grid = config.build_grid()?;
    let spec = config.build_noise(&grid)?;
    let int_cfg = config.integrator();
    let blocks_per_pair = (int_cfg.t_horizon / config.coupling.t_block).ceil().max(1.0) as u64;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for pair in 0..config.ensemble.pairs as u64 {
        let u0 = initial_state(&grid, &spec, 1.0);
        let mut u0p = u0.clone();
        let mut sep = SpectralField::zero(&grid);
        spec.basis().inject(&mut sep, 1, config.coupling.d_init);
        u0p.add_scaled(&sep, 1.0);
        let mut engine =
            CouplingEngine::new(u0, u0p, spec.clone(), int_cfg, config.coupling.clone(), pair)?;
        let mut outcomes = Vec::new();
        for _ in 0..blocks_per_pair {
            outcomes.push(engine.run_block()?);
        }
        let path = out_dir.join(format!("blocks_pair_{pair:04}.csv"));
        write_blocks_csv(&path, &outcomes)?;
        files.push(path);
        summaries.push(serde_json::json!({
            "pair": pair,
            "seed": spec.seed(),
            "dt": int_cfg.dt,
            "t_block": config.coupling.t_block,
            "novikov": engine.novikov_integral(),
            "stopping": engine.stopping_summary(),
        }));
    }
    // replay manifest: everything needed to regenerate the noise streams
    let replay = out_dir.join("replay_manifest.json");
    std::fs::write(&replay, serde_json::to_string_pretty(&summaries)?)?;
    files.push(replay);
    let manifest = write_manifest(out_dir, &files)?;
    println!("coupled {} pairs, manifest {}", config.ensemble.pairs, manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn mixing(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(out_dir)?;
    let grid = config.build_grid()?;
    let spec = config.build_noise(&grid)?;
    let mut int_cfg = config.integrator();
    let members = config.ensemble.members;
    let dict = ObservableDictionary::low_mode(spec.basis_arc(), 16, spec.seed());
    let mut rng = StreamKey::from_seed(spec.seed()).derive(0x3147).rng();

    // far-apart deterministic initial conditions
    let u0_a = initial_state(&grid, &spec, 0.2);
    let u0_b = initial_state(&grid, &spec, 2.0);

    let ladder: Vec<f64> = (1..=5).map(|i| config.integrator.t_horizon * i as f64 / 5.0).collect();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut ses = Vec::new();
    for &t in &ladder {
        int_cfg.t_horizon = t;
        let ens_a = ensemble_final_states(&spec, &int_cfg, &u0_a, members, 0)?;
        let ens_b = ensemble_final_states(&spec, &int_cfg, &u0_b, members, 500_000)?;
        let (d, se) = estimate_dual_lipschitz(&ens_a, &ens_b, &dict, 200, &mut rng)?;
        println!("t = {t:.3}: distance = {d:.6e} (se {se:.2e})");
        rows.push(format!("{t:.12e},{d:.12e},{se:.12e}"));
        points.push((t, d));
        ses.push(se);
    }
    let csv = format!("t,D,se\n{}\n", rows.join("\n"));
    let csv_path = out_dir.join("distances.csv");
    std::fs::write(&csv_path, csv)?;

    let (kept, censored) = censor_distances(&points, &ses);
    if kept.len() >= 4 {
        let mut fit = fit_mixing_rate(&kept)?;
        fit.censored = censored;
        let json = serde_json::to_string_pretty(&fit)?;
        println!("{json}");
        std::fs::write(out_dir.join("mixing_fit.json"), json)?;
    } else {
        println!("{censored} censored points; not enough data for a fit");
    }
    write_manifest(out_dir, &[csv_path])?;
    Ok(ExitCode::SUCCESS)
}

fn recurrence(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(out_dir)?;
    let grid = config.build_grid()?;
    let spec = config.build_noise(&grid)?;
    let int_cfg = config.integrator();
    let t_block = config.coupling.t_block;
    let block_steps = (t_block / int_cfg.dt).round() as u64;
    let horizon_blocks = (int_cfg.t_horizon / t_block).ceil() as usize;
    let d = config.coupling.d_init.max(1e-6);

    let mut lines = vec!["pair,tau_d,hit".to_string()];
    let mut taus = Vec::new();
    for pair in 0..config.ensemble.pairs as u64 {
        // independent pair driven by disjoint streams
        let mut u = initial_state(&grid, &spec, 1.0);
        let mut v = initial_state(&grid, &spec, 1.5);
        let stream_u = spec.stream(pair * 2 + 1_000_000);
        let stream_v = spec.stream(pair * 2 + 1_000_001);
        let mut samples = vec![(u.l2_norm(), v.l2_norm())];
        for block in 0..horizon_blocks {
            for s in 0..block_steps {
                let step = block as u64 * block_steps + s;
                let iu = spec.sample_increment(stream_u, step, int_cfg.dt)?;
                let iv = spec.sample_increment(stream_v, step, int_cfg.dt)?;
                u = ns2d::dynamics::step_primal(&u, &spec, &int_cfg, &iu)?;
                v = ns2d::dynamics::step_primal(&v, &spec, &int_cfg, &iv)?;
            }
            samples.push((u.l2_norm(), v.l2_norm()));
        }
        let rec = recurrence_time(&samples, d, t_block);
        match rec.value {
            Some(k) => {
                taus.push(k);
                lines.push(format!("{pair},{k},1"));
            }
            None => lines.push(format!("{pair},inf,0")),
        }
    }
    let csv_path = out_dir.join("recurrence.csv");
    std::fs::write(&csv_path, lines.join("\n") + "\n")?;
    if !taus.is_empty() {
        // empirical exponential moment E exp(delta tau_d) for a small delta
        let delta = 0.1;
        let moment: f64 = taus.iter().map(|k| (delta * k).exp()).sum::<f64>() / taus.len() as f64;
        println!(
            "hits {}/{}, mean tau_d = {:.3}, E exp({delta} tau_d) = {moment:.4}",
            taus.len(),
            config.ensemble.pairs,
            taus.iter().sum::<f64>() / taus.len() as f64
        );
    } else {
        println!("no recurrence hits within the horizon");
    }
    write_manifest(out_dir, &[csv_path])?;
    Ok(ExitCode::SUCCESS)
}

/// Plot-ready long-format sweep of the A2 ball ratios of psi(t) over the
/// stratified family.
fn emit_weight_sweep(out_dir: &Path) -> anyhow::Result<PathBuf> {
    let family = BallFamily::stratified(16);
    let mut rows = Vec::new();
    for &t in &[2.0, 8.0, 32.0, 128.0] {
        let w = Weight::psi_at(t);
        for &(center, radius) in &family.balls {
            let ratio = a2_ball_ratio(&w, center, radius, 256)?;
            let x0 = (center[0] * center[0] + center[1] * center[1]).sqrt();
            rows.push(WeightSweepRow {
                t,
                radius,
                x0_norm: x0,
                ratio,
                branch: match classify_ball(center, radius) {
                    BallType::One => "type_I",
                    BallType::Two => "type_II",
                },
            });
        }
    }
    let path = out_dir.join("a2_sweep.csv");
    write_weight_sweep_csv(&path, &rows)?;
    Ok(path)
}

fn fit(input: &Path) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(input)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with(|c: char| c.is_alphabetic()) {
            continue; // header
        }
        let mut cols = line.split(',');
        let t: f64 = cols.next().unwrap_or("").trim().parse()?;
        let d: f64 = cols.next().unwrap_or("").trim().parse()?;
        points.push((t, d));
    }
    let fit = fit_mixing_rate(&points)?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(ExitCode::SUCCESS)
}
