//! Train and test orchestration.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use imitate_core::envs::{EnvConfig, VecEnv};
use imitate_core::eval::{evaluate_policy, EvalOptions, EvalReport, Policy};
use imitate_core::kinematics::{LoopMode, MotionClip};
use imitate_core::learning::{Agent, AgentConfig, Checkpoint, IterStats, Reducer, ThreadReducer, Trainer, TrainerState};

use crate::args::{Mode, RunArgs};

/// Columns of the training log, in order.
pub fn log_columns() -> Vec<&'static str> {
    let mut c = vec!["iteration", "samples", "wall_time"];
    c.extend(&IterStats::COLUMNS[2..]);
    c
}

/// Fixed-width text table plus a CSV sibling with full precision.
pub struct TrainLog {
    text: File,
    csv: File,
}

impl TrainLog {
    /// Opens both files; `append` keeps existing rows (resumed runs).
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        let csv_path = csv_sibling(path);
        let fresh = !append || !path.exists() || fs::metadata(path)?.len() == 0;
        let open = |p: &Path| -> Result<File> {
            let mut o = OpenOptions::new();
            o.create(true);
            if fresh {
                o.write(true).truncate(true);
            } else {
                o.append(true);
            }
            o.open(p).with_context(|| format!("cannot open log {}", p.display()))
        };
        let mut log = TrainLog {
            text: open(path)?,
            csv: open(&csv_path)?,
        };
        if fresh {
            let cols = log_columns();
            let head: Vec<String> = cols.iter().map(|c| format!("{c:>20}")).collect();
            writeln!(log.text, "{}", head.join(""))?;
            writeln!(log.csv, "{}", cols.join(","))?;
        }
        Ok(log)
    }

    pub fn row(&mut self, s: &IterStats, wall_time: f64) -> Result<()> {
        let v = s.values();
        let mut vals = vec![v[0], v[1], wall_time];
        vals.extend(&v[2..]);
        let text: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if i < 2 {
                    format!("{:>20}", *x as u64)
                } else {
                    format!("{x:>20.6}")
                }
            })
            .collect();
        writeln!(self.text, "{}", text.join(""))?;
        let csv: Vec<String> = vals.iter().map(|x| x.to_string()).collect();
        writeln!(self.csv, "{}", csv.join(","))?;
        self.text.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}

pub fn csv_sibling(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Env seed of one worker; worker 0 uses the run seed itself.
pub fn worker_seed(seed: u64, rank: usize) -> u64 {
    seed.wrapping_add((rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn base_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loaded configuration shared by every worker.
#[derive(Debug, Clone)]
pub struct Setup {
    pub env_cfg: EnvConfig,
    pub env_dir: PathBuf,
    pub agent_cfg: AgentConfig,
}

impl Setup {
    pub fn load(args: &RunArgs) -> Result<Self> {
        let env_path = args.env_config.as_ref().ok_or_else(|| anyhow!("--env_config is required"))?;
        let env_cfg = EnvConfig::load(env_path)?;
        let agent_cfg = match &args.agent_config {
            Some(p) => AgentConfig::load(p)?,
            None => AgentConfig::default(),
        };
        Ok(Setup {
            env_cfg,
            env_dir: base_dir(env_path),
            agent_cfg,
        })
    }

    pub fn make_env(&self, num_envs: usize, seed: u64) -> Result<VecEnv> {
        Ok(VecEnv::from_config(self.env_cfg.clone(), &self.env_dir, num_envs, seed)?)
    }

    pub fn make_agent(&self, cfg: AgentConfig, env: &VecEnv, seed: u64, rank: usize) -> Result<Agent> {
        let dd = Agent::disc_dim(cfg.agent, env)?;
        Ok(Agent::new(cfg, env.obs_dim(), env.action_dim(), dd, seed, rank)?)
    }

    fn motion_name(&self) -> String {
        self.env_cfg
            .motion_file
            .as_ref()
            .and_then(|m| Path::new(m).file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "none".into())
    }
}

fn check_backend_flags(args: &RunArgs) -> Result<()> {
    match args.logger.as_str() {
        "csv" => {}
        "tb" | "wandb" => eprintln!("warning: logger {} is not implemented; writing csv logs", args.logger),
        other => bail!("unknown logger {other}; expected csv, tb or wandb"),
    }
    if args.device != "cpu" {
        eprintln!("warning: device {} is unavailable; running on cpu", args.device);
    }
    Ok(())
}

/// Workers actually launched: the request capped at the logical core count.
pub fn effective_workers(requested: usize) -> usize {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if requested > cores {
        eprintln!("warning: {requested} workers requested, capping at {cores} cores");
    }
    requested.min(cores).max(1)
}

/// Rolls out env 0 with mean actions until its first episode ends and
/// writes the visited poses as a motion clip.
pub fn export_trajectory(policy: &dyn Policy, env: &mut VecEnv, path: &Path) -> Result<usize> {
    let mut obs = env.reset_all()?;
    let mut frames = vec![env.slots()[0].state.pose.to_frame()];
    let max_steps = (env.config().episode_length / env.dt()).ceil() as usize + 1;
    for _ in 0..max_steps {
        let results = env.step(&policy.act(&obs)?)?;
        let done = results[0].done.is_done();
        if !done {
            frames.push(env.slots()[0].state.pose.to_frame());
        }
        obs = results.into_iter().map(|r| r.reset_obs.unwrap_or(r.obs)).collect();
        if done {
            break;
        }
    }
    let n = frames.len();
    let clip = MotionClip::new(env.character(), 1.0 / env.dt(), LoopMode::None, frames)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    clip.save(path)?;
    Ok(n)
}

fn trajectory_path(args: &RunArgs, tag: &str) -> PathBuf {
    let stem = args.log_file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "log".into());
    args.log_file.with_file_name(format!("{stem}_traj_{tag}.json"))
}

fn check_finite(s: &IterStats, uses_disc: bool) -> bool {
    let mut v = vec![s.mean_reward, s.policy_loss, s.value_loss];
    if uses_disc {
        v.push(s.disc_loss);
    }
    v.iter().all(|x| x.is_finite())
}

struct Shared {
    states: Mutex<Vec<Option<TrainerState>>>,
    stats: Mutex<Vec<IterStats>>,
}

/// Trains until `max_iterations`, writing a log row and a checkpoint after
/// every iteration. Returns the stats of the iterations run.
pub fn run_train(args: &RunArgs) -> Result<Vec<IterStats>> {
    args.validate()?;
    check_backend_flags(args)?;
    let setup = Setup::load(args)?;
    let workers = effective_workers(args.num_workers);
    let resume = match &args.model_file {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("cannot resume from {}", p.display()))?),
        None => None,
    };
    let agent_cfg = match (&resume, &args.agent_config) {
        (Some(ck), None) => ck.config.clone(),
        _ => setup.agent_cfg.clone(),
    };
    let mut trainers = Vec::with_capacity(workers);
    let group = ThreadReducer::group(workers);
    for (rank, red) in group.iter().enumerate() {
        let env = setup.make_env(args.num_envs, worker_seed(args.seed, rank))?;
        let mut agent = setup.make_agent(agent_cfg.clone(), &env, args.seed, rank)?;
        if let Some(ck) = &resume {
            ck.restore_into(&mut agent)?;
        }
        let reducer: Arc<dyn Reducer> = Arc::new(red.clone());
        let mut tr = Trainer::new(agent, env, reducer)?;
        if let Some(ck) = &resume {
            if ck.workers.len() == workers {
                tr.restore(ck.workers[rank].clone())?;
            } else if rank == 0 {
                eprintln!(
                    "warning: checkpoint holds {} worker states but {workers} workers run; envs start fresh",
                    ck.workers.len()
                );
            }
        }
        trainers.push(tr);
    }
    let start_iter = trainers[0].agent.iteration;
    if start_iter >= args.max_iterations {
        return Ok(Vec::new());
    }
    let mut log = TrainLog::open(&args.log_file, resume.is_some())?;
    let shared = Arc::new(Shared {
        states: Mutex::new(vec![None; workers]),
        stats: Mutex::new(Vec::new()),
    });
    let t0 = Instant::now();
    let mut viz_env = if args.visualize { Some(setup.make_env(1, args.seed)?) } else { None };
    let mut log = Some(&mut log);

    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = trainers
            .into_iter()
            .zip(group)
            .enumerate()
            .map(|(rank, (mut tr, red))| {
                let shared = shared.clone();
                let (mut log, mut viz_env) = if rank == 0 { (log.take(), viz_env.take()) } else { (None, None) };
                scope.spawn(move || -> Result<()> {
                    while tr.agent.iteration < args.max_iterations {
                        let stats = tr.iterate()?;
                        if !check_finite(&stats, tr.agent.cfg.agent.uses_discriminator()) {
                            if rank == 0 {
                                let dump = args.log_file.with_extension("diag.json");
                                fs::write(&dump, serde_json::to_string_pretty(&stats)?)?;
                                bail!("non-finite training statistics at iteration {}; see {}", stats.iteration, dump.display());
                            }
                            bail!("non-finite training statistics at iteration {}", stats.iteration);
                        }
                        shared.states.lock().expect("state lock")[rank] = Some(tr.state());
                        red.barrier();
                        if let Some(log) = log.as_deref_mut() {
                            let workers: Vec<TrainerState> = shared
                                .states
                                .lock()
                                .expect("state lock")
                                .iter_mut()
                                .map(|s| s.take().expect("every worker reported"))
                                .collect();
                            Checkpoint::from_agent(&tr.agent, workers).save(&args.out_model_file)?;
                            log.row(&stats, t0.elapsed().as_secs_f64())?;
                            if let Some(env) = viz_env.as_mut() {
                                let tag = format!("{:06}", stats.iteration);
                                export_trajectory(&tr.agent, env, &trajectory_path(args, &tag))?;
                            }
                            shared.stats.lock().expect("stats lock").push(stats);
                        }
                        red.barrier();
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("worker panicked")))).collect()
    });
    for r in results {
        r?;
    }
    let stats = shared.stats.lock().expect("stats lock").clone();
    Ok(stats)
}

/// Loads `model_file`, evaluates it with mean actions and writes the report
/// to `log_file` (table) and its CSV sibling.
pub fn run_test(args: &RunArgs) -> Result<EvalReport> {
    args.validate()?;
    check_backend_flags(args)?;
    let model_file = args.model_file.as_ref().ok_or_else(|| anyhow!("--mode test requires --model_file"))?;
    if !model_file.exists() {
        bail!("model file {} does not exist", model_file.display());
    }
    let ck = Checkpoint::load(model_file)?;
    let setup = Setup::load(args)?;
    let cfg = if args.agent_config.is_some() {
        setup.agent_cfg.clone()
    } else {
        ck.config.clone()
    };
    let env = setup.make_env(args.num_envs, args.seed)?;
    let mut agent = setup.make_agent(cfg, &env, args.seed, 0)?;
    ck.restore_into(&mut agent)?;
    let opts = EvalOptions {
        episodes: args.test_episodes.unwrap_or(args.num_envs),
        step_weighted: false,
        motion: setup.motion_name(),
        method: agent.cfg.agent.as_str().to_string(),
    };
    let report = evaluate_policy(&[(args.seed, &agent)], |s| VecEnv::from_config(setup.env_cfg.clone(), &setup.env_dir, args.num_envs, s), &opts)?;
    if let Some(dir) = args.log_file.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.log_file, report.to_table())?;
    fs::write(csv_sibling(&args.log_file), report.to_csv())?;
    if args.visualize {
        let mut env = setup.make_env(1, args.seed)?;
        export_trajectory(&agent, &mut env, &trajectory_path(args, "test"))?;
    }
    Ok(report)
}

pub fn run(args: &RunArgs) -> Result<()> {
    match args.mode {
        Mode::Train => {
            let stats = run_train(args)?;
            if let Some(s) = stats.last() {
                println!(
                    "trained to iteration {} ({} samples), mean return {:.4}, checkpoint {}",
                    s.iteration,
                    s.samples,
                    s.mean_return,
                    args.out_model_file.display()
                );
            }
        }
        Mode::Test => {
            let report = run_test(args)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}
