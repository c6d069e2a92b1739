use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use lidar_ae::autoencoders::{Pipeline, Vae, VaeConfig};
use lidar_ae::experiment::{
    compare_reconstruction, reconstruction_pair, run_rl_trial, split_dataset, train_autoencoder, untrained_raw_encoder,
    RlSetup, DESK_HELD_OUT_ROOMS, DESK_MIN_HELD_OUT_SCANS, DESK_TRAIN_SCANS,
};
use lidar_ae::io::tables::{aggregate_rewards, read_csv, write_csv, AggregateRow, RewardRow, ReconRow, TTestRow};
use lidar_ae::io::{self as lio, Band};
use lidar_ae::metrics::{WelchResult, SIGNIFICANCE_LEVEL};
use lidar_ae::rl::{evaluate_policy, NavConfig, NavEnv, Td3Config, EVAL_SEED};
use lidar_ae::world::{DatasetJob, Environment};
use lidar_ae::Error;

#[derive(Parser, Debug)]
#[command(name = "lidar-ae", version, about = "Lidar scan autoencoders and navigation experiments")]
struct Cli {
    /// JSON file merged over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Desk-scale profile: small datasets, 128 px images, short runs.
    #[arg(long, global = true)]
    desk: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// RL trials run as this many concurrent child processes.
    #[arg(long, global = true, default_value_t = 1)]
    parallel_trials: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scan dataset.
    GenData {
        #[arg(long)]
        env: Option<Environment>,
    },
    /// Train the image beta-VAE.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Train the raw-range baseline autoencoder.
    TrainRawVae {
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare both pipelines on held-out scans.
    EvalRecon {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        raw: PathBuf,
    },
    /// Train navigation agents on a frozen encoder.
    TrainRl {
        #[arg(long)]
        setup: Option<RlSetup>,
        /// Encoder checkpoint; not used by the no_pretrain setup.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Run only this trial index.
        #[arg(long)]
        trial: Option<usize>,
        /// Also write an SVG of the reward curve.
        #[arg(long)]
        plot: bool,
    },
    /// Greedy evaluation of a saved agent.
    EvalRl {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        setup: Option<RlSetup>,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Plot aggregate reward CSVs into one SVG.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitConfig {
    held_out_rooms: usize,
    min_held_out_scans: usize,
    max_train_scans: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RlConfig {
    setup: RlSetup,
    trials: usize,
    eval_seed: u64,
}

/// Fully resolved settings; written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    seed: u64,
    desk: bool,
    environment: Environment,
    dataset: DatasetJob,
    vae: VaeConfig,
    split: SplitConfig,
    nav: NavConfig,
    td3: Td3Config,
    rl: RlConfig,
}

impl RunConfig {
    fn profile(desk: bool, env: Environment, seed: u64) -> Self {
        let (dataset, vae, td3, trials) = if desk {
            (DatasetJob::desk(env, seed), VaeConfig::desk(Pipeline::Image, env), Td3Config::default(), 3)
        } else {
            let job = match env {
                Environment::Simple => DatasetJob::simple_full(seed),
                Environment::Main => DatasetJob::main_full(seed),
            };
            let td3 = Td3Config {
                epochs: 1000,
                ..Td3Config::default()
            };
            (job, VaeConfig::full(Pipeline::Image, env), td3, 10)
        };
        Self {
            seed,
            desk,
            environment: env,
            dataset,
            vae,
            split: SplitConfig {
                held_out_rooms: DESK_HELD_OUT_ROOMS,
                min_held_out_scans: if desk { DESK_MIN_HELD_OUT_SCANS } else { 0 },
                max_train_scans: if desk { DESK_TRAIN_SCANS } else { usize::MAX },
            },
            nav: NavConfig::default(),
            td3,
            rl: RlConfig {
                setup: RlSetup::ImageVae,
                trials,
                eval_seed: EVAL_SEED,
            },
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn resolve(cli: &Cli, env_flag: Option<Environment>) -> Result<RunConfig, Error> {
    let user: Value = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !user.is_object() {
        return Err(Error::Config("config file must hold a JSON object".into()));
    }
    let desk = cli.desk || user["desk"].as_bool().unwrap_or(false);
    let env = match env_flag {
        Some(e) => e,
        None => match user["environment"].as_str() {
            Some(s) => s.parse()?,
            None => Environment::Simple,
        },
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => user["seed"].as_u64().unwrap_or(0),
    };
    let mut v = serde_json::to_value(RunConfig::profile(desk, env, seed))?;
    merge(&mut v, user);
    let mut cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    cfg.desk = desk;
    cfg.environment = env;
    cfg.seed = seed;
    if cli.seed.is_some() {
        cfg.dataset.seed = seed;
    }
    cfg.dataset.environment = env;
    cfg.td3.validate()?;
    cfg.nav.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn prepare_out(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&cli.out)?;
    write_json(&cli.out.join("config.json"), cfg)
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let t = Instant::now();
    let ds = cfg.dataset.run()?;
    let path = cli.out.join("dataset.l2ds");
    lio::save_dataset(&path, &ds)?;
    let sidecar = serde_json::json!({
        "format": "L2DS",
        "version": lio::dataset::VERSION,
        "job": cfg.dataset,
        "scans": ds.len(),
        "trajectories": ds.trajectory_lengths.len(),
        "sha256": lio::file_digest(&path)?,
    });
    write_json(&cli.out.join("dataset.json"), &sidecar)?;
    eprintln!("wrote {} scans to {} in {:.1}s", ds.len(), path.display(), t.elapsed().as_secs_f64());
    Ok(())
}

fn train_pipeline(cli: &Cli, cfg: &RunConfig, data: &Path, vae_cfg: VaeConfig) -> Result<(), Error> {
    let ds = lio::load_dataset(data)?;
    let split = split_dataset(&ds, cfg.split.held_out_rooms, cfg.split.min_held_out_scans, cfg.split.max_train_scans, cfg.seed)?;
    let pipeline = vae_cfg.pipeline;
    eprintln!(
        "training {pipeline} pipeline on {} scans ({} held out)",
        split.train.len(),
        split.held_out.len()
    );
    let t = Instant::now();
    let (vae, log) = train_autoencoder(&ds, &split.train, vae_cfg, cfg.seed, |l| {
        eprintln!(
            "epoch {:>3}  loss {:10.3}  recon {:10.3}  kl {:8.3}  ({:.0}s)",
            l.epoch,
            l.loss,
            l.recon,
            l.kl,
            t.elapsed().as_secs_f64()
        )
    })?;
    lio::save_vae(&cli.out.join(format!("{pipeline}_vae.nnck")), &vae)?;
    write_csv(&cli.out.join("vae_log.csv"), &log)?;
    let dir = cli.out.join("recon");
    std::fs::create_dir_all(&dir)?;
    let res = vae.config.image.resolution_px;
    for (j, &i) in split.held_out.iter().take(4).enumerate() {
        let (input, recon) = reconstruction_pair(&vae, &ds.scan(i))?;
        lio::write_pgm(&dir.join(format!("{j}_input.pgm")), res, res, &input)?;
        lio::write_pgm(&dir.join(format!("{j}_recon.pgm")), res, res, &recon)?;
    }
    write_json(&cli.out.join("split.json"), &split)?;
    Ok(())
}

fn ttest_row(env: &str, metric: &str, w: &WelchResult) -> TTestRow {
    TTestRow {
        env: env.to_string(),
        metric: metric.to_string(),
        method_a: "image".into(),
        method_b: "raw".into(),
        t: w.t,
        dof: w.dof,
        p: w.p,
        level: SIGNIFICANCE_LEVEL,
        significant: w.significant(SIGNIFICANCE_LEVEL),
    }
}

fn eval_recon(cli: &Cli, cfg: &RunConfig, data: &Path, image: &Path, raw: &Path) -> Result<(), Error> {
    let ds = lio::load_dataset(data)?;
    let image = lio::load_vae(image)?;
    let raw = lio::load_vae(raw)?;
    if image.config.pipeline != Pipeline::Image || raw.config.pipeline != Pipeline::Raw {
        return Err(Error::Config("--image needs an image checkpoint and --raw a raw one".into()));
    }
    if raw.config.beam_count != ds.beam_count() {
        return Err(Error::shape(
            "eval-recon",
            format!("raw checkpoint expects {} beams, dataset has {}", raw.config.beam_count, ds.beam_count()),
        ));
    }
    let env = ds.job.as_ref().map_or(cfg.environment, |j| j.environment).to_string();
    let split = split_dataset(&ds, cfg.split.held_out_rooms, cfg.split.min_held_out_scans, cfg.split.max_train_scans, cfg.seed)?;
    let c = compare_reconstruction(&image, &raw, &ds, &split.held_out, cfg.seed)?;
    let row = |method: &str, r: &lidar_ae::metrics::ReconReport| ReconRow {
        env: env.clone(),
        method: method.into(),
        fp: r.fp,
        fn_: r.fn_,
        mse: r.mse,
        n: r.len(),
    };
    write_csv(&cli.out.join("recon_eval.csv"), &[row("image", &c.image), row("raw", &c.raw)])?;
    write_csv(
        &cli.out.join("recon_ttest.csv"),
        &[
            ttest_row(&env, "mse", &c.mse_test),
            ttest_row(&env, "fp", &c.fp_test),
            ttest_row(&env, "fn", &c.fn_test),
        ],
    )?;
    eprintln!(
        "image mse {:.2} fp {:.2} | raw mse {:.2} fp {:.2} | mse p = {:.3e}",
        c.image.mse, c.image.fp, c.raw.mse, c.raw.fp, c.mse_test.p
    );
    Ok(())
}

fn load_encoder(cfg: &RunConfig, setup: RlSetup, encoder: Option<&Path>) -> Result<Vae<f32>, Error> {
    match (setup, encoder) {
        (RlSetup::NoPretrain, _) => untrained_raw_encoder(Environment::Simple, cfg.nav.sensor.beam_count, cfg.seed),
        (_, None) => Err(Error::Config(format!("setup {} needs --encoder", setup.name()))),
        (s, Some(p)) => {
            let vae = lio::load_vae(p)?;
            let want = if s == RlSetup::RawAe { Pipeline::Raw } else { Pipeline::Image };
            if vae.config.pipeline != want {
                return Err(Error::Config(format!("{} holds a {} encoder", p.display(), vae.config.pipeline)));
            }
            Ok(vae)
        }
    }
}

fn setup_label(setup: RlSetup, vae: &Vae<f32>) -> String {
    match setup {
        RlSetup::ImageVae => format!("image_vae_beta{}", vae.config.beta),
        s => s.name().to_string(),
    }
}

fn reward_rows(trial: usize, curve: &[lidar_ae::rl::EpochRecord]) -> Vec<RewardRow> {
    curve
        .iter()
        .map(|r| RewardRow {
            trial,
            epoch: r.epoch,
            mean_eval_reward: r.eval.mean,
            min: r.eval.min,
            max: r.eval.max,
        })
        .collect()
}

fn band_from(label: &str, rows: &[AggregateRow]) -> Band {
    Band {
        label: label.to_string(),
        epochs: rows.iter().map(|r| r.epoch).collect(),
        mean: rows.iter().map(|r| r.mean).collect(),
        min: rows.iter().map(|r| r.min).collect(),
        max: rows.iter().map(|r| r.max).collect(),
    }
}

fn run_trial(cli: &Cli, cfg: &RunConfig, vae: &Vae<f32>, trial: usize) -> Result<Vec<RewardRow>, Error> {
    let t = Instant::now();
    let trained = run_rl_trial(vae, &cfg.nav, &cfg.td3, cfg.seed, trial, cfg.rl.eval_seed, |r| {
        eprintln!(
            "trial {trial} epoch {:>4}  eval {:6.3}  goals {:>4}  collisions {:>4}  ({:.0}s)",
            r.epoch,
            r.eval.mean,
            r.goals,
            r.collisions,
            t.elapsed().as_secs_f64()
        )
    })?;
    lio::save_agent(
        &cli.out.join(format!("agent_trial{trial}.nnck")),
        &trained.agent,
        &serde_json::json!({ "trial": trial, "seed": cfg.seed, "state_dim": vae.latent_dim() }),
    )?;
    let rows = reward_rows(trial, &trained.curve);
    write_csv(&cli.out.join(format!("rewards_trial{trial}.csv")), &rows)?;
    Ok(rows)
}

fn spawn_trials(cli: &Cli, setup: RlSetup, encoder: Option<&Path>, trials: usize) -> Result<Vec<RewardRow>, Error> {
    let exe = std::env::current_exe()?;
    let config = cli.out.join("config.json");
    let mut rows = Vec::new();
    let mut pending: Vec<usize> = (0..trials).rev().collect();
    let mut running: Vec<(usize, std::process::Child)> = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < cli.parallel_trials.max(1) {
            let Some(i) = pending.pop() else { break };
            let dir = cli.out.join(format!("trial{i}"));
            let mut cmd = std::process::Command::new(&exe);
            cmd.arg("--config").arg(&config).arg("--out").arg(&dir);
            cmd.args(["train-rl", "--setup", setup.name(), "--trial", &i.to_string()]);
            if let Some(e) = encoder {
                cmd.arg("--encoder").arg(e);
            }
            running.push((i, cmd.spawn()?));
        }
        let (i, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            for (_, c) in &mut running {
                let _ = c.kill();
            }
            return Err(Error::State(format!("trial {i} exited with {status}")));
        }
        let path = cli.out.join(format!("trial{i}")).join(format!("rewards_trial{i}.csv"));
        rows.extend(read_csv::<RewardRow>(&path)?);
    }
    rows.sort_by_key(|r| (r.trial, r.epoch));
    Ok(rows)
}

fn train_rl(cli: &Cli, cfg: &RunConfig, setup: RlSetup, encoder: Option<&Path>, trial: Option<usize>, plot: bool) -> Result<(), Error> {
    let vae = load_encoder(cfg, setup, encoder)?;
    let digest_before = vae.encoder.digest();
    let label = setup_label(setup, &vae);
    if let Some(i) = trial {
        run_trial(cli, cfg, &vae, i)?;
    } else {
        let rows = if cli.parallel_trials > 1 {
            spawn_trials(cli, setup, encoder, cfg.rl.trials)?
        } else {
            let mut rows = Vec::new();
            for i in 0..cfg.rl.trials {
                rows.extend(run_trial(cli, cfg, &vae, i)?);
            }
            rows
        };
        write_csv(&cli.out.join("rewards.csv"), &rows)?;
        let agg = aggregate_rewards(&label, &rows);
        write_csv(&cli.out.join("rewards_aggregate.csv"), &agg)?;
        if plot {
            let svg = lio::reward_plot_svg(&label, &[band_from(&label, &agg)], cfg.nav.r_collision, cfg.nav.r_goal);
            std::fs::write(cli.out.join("rewards.svg"), svg)?;
        }
    }
    let digest_after = vae.encoder.digest();
    write_json(
        &cli.out.join("summary.json"),
        &serde_json::json!({
            "setup": label,
            "encoder_digest_before": digest_before,
            "encoder_digest_after": digest_after,
        }),
    )?;
    if digest_before != digest_after {
        return Err(Error::State("encoder parameters changed during RL training".into()));
    }
    Ok(())
}

fn eval_rl(cli: &Cli, cfg: &RunConfig, agent: &Path, setup: RlSetup, encoder: Option<&Path>) -> Result<(), Error> {
    let vae = load_encoder(cfg, setup, encoder)?;
    let (agent, _) = lio::load_agent(agent)?;
    if agent.state_dim() != vae.latent_dim() {
        return Err(Error::shape(
            "eval-rl",
            format!("agent expects {} inputs, encoder yields {}", agent.state_dim(), vae.latent_dim()),
        ));
    }
    let mut env = NavEnv::new(cfg.nav.clone(), &vae)?;
    let s = evaluate_policy(&mut env, cfg.td3.eval_episodes, cfg.rl.eval_seed, |_, st| agent.act(st))?;
    #[derive(Serialize)]
    struct Row {
        setup: String,
        mean: f64,
        min: f64,
        max: f64,
        episodes: usize,
    }
    write_csv(
        &cli.out.join("eval_rl.csv"),
        &[Row {
            setup: setup_label(setup, &vae),
            mean: s.mean,
            min: s.min,
            max: s.max,
            episodes: s.returns.len(),
        }],
    )?;
    eprintln!("mean reward {:.3} over {} episodes", s.mean, s.returns.len());
    Ok(())
}

fn plot(cli: &Cli, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<(), Error> {
    let mut all: Vec<AggregateRow> = Vec::new();
    for p in inputs {
        all.extend(read_csv::<AggregateRow>(p)?);
    }
    let mut labels: Vec<String> = all.iter().map(|r| r.setup.clone()).collect();
    labels.dedup();
    labels.sort();
    labels.dedup();
    let bands: Vec<Band> = labels
        .iter()
        .map(|l| {
            let rows: Vec<AggregateRow> = all.iter().filter(|r| &r.setup == l).cloned().collect();
            band_from(l, &rows)
        })
        .collect();
    write_csv(&cli.out.join("aggregate.csv"), &all)?;
    let svg = lio::reward_plot_svg("mean evaluation reward", &bands, cfg.nav.r_collision, cfg.nav.r_goal);
    std::fs::write(cli.out.join("rewards.svg"), svg)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let env_flag = match &cli.command {
        Command::GenData { env } => *env,
        _ => None,
    };
    let mut cfg = resolve(cli, env_flag)?;
    match &cli.command {
        Command::TrainVae { beta: Some(b), .. } => cfg.vae.beta = *b,
        Command::TrainRl { setup: Some(s), .. } | Command::EvalRl { setup: Some(s), .. } => cfg.rl.setup = *s,
        _ => {}
    }
    cfg.vae.validate()?;
    prepare_out(cli, &cfg)?;
    match &cli.command {
        Command::GenData { .. } => gen_data(cli, &cfg),
        Command::TrainVae { data, .. } => {
            let vae_cfg = VaeConfig {
                pipeline: Pipeline::Image,
                ..cfg.vae.clone()
            };
            train_pipeline(cli, &cfg, data, vae_cfg)
        }
        Command::TrainRawVae { data } => {
            let vae_cfg = VaeConfig {
                pipeline: Pipeline::Raw,
                ..cfg.vae.clone()
            };
            train_pipeline(cli, &cfg, data, vae_cfg)
        }
        Command::EvalRecon { data, image, raw } => eval_recon(cli, &cfg, data, image, raw),
        Command::TrainRl { encoder, trial, plot, .. } => {
            train_rl(cli, &cfg, cfg.rl.setup, encoder.as_deref(), *trial, *plot)
        }
        Command::EvalRl { agent, encoder, .. } => eval_rl(cli, &cfg, agent, cfg.rl.setup, encoder.as_deref()),
        Command::Plot { input } => plot(cli, &cfg, input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
