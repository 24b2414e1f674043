use std::path::Path;
use std::sync::atomic::AtomicBool;

use der_core::config::ExperimentConfig;
use der_core::der::Structure;
use der_core::env::{Environment, InsertionEnv, PlanarPose, EnvState, HoleFrame, Variant};
use der_core::episode_io::{read_episodes, write_episodes};
use der_core::harness::{generate_demos, run_experiment, RunOutputs, RunTotals};

/// Short deterministic peg run with demonstrations and DER, small enough
/// for the test suite.
pub fn small_deterministic_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_task(Variant::PegInHole);
    cfg.seed = seed;
    cfg.deterministic = true;
    cfg.structure = Structure::OneShotEach;
    cfg.num_buffers = 2;
    cfg.num_demos = 2;
    cfg.num_workers = 2;
    cfg.iteration_timesteps = 600;
    cfg.max_iterations = 3;
    cfg.replay.capacity = 2_000;
    cfg.learner.hidden = vec![16, 16];
    cfg.learner.batch_size = 32;
    cfg.learner.learning_starts = 100;
    cfg.learner.target_update_freq = 50;
    cfg.der.period = 20;
    cfg.replay_ratio = 0.2;
    cfg
}

pub struct DeterminismOutcome {
    pub metrics_equal: bool,
    pub checkpoint_equal: bool,
    pub training_log_equal: bool,
    pub rows: usize,
}

/// Runs `cfg` twice into separate directories and compares output bytes.
pub fn determinism_check(cfg: &ExperimentConfig, root: &Path) -> DeterminismOutcome {
    let dirs = [root.join("a"), root.join("b")];
    for d in &dirs {
        run_experiment(cfg, Some(d), &AtomicBool::new(false)).expect("deterministic run");
    }
    let outs: Vec<RunOutputs> = dirs.iter().map(|d| RunOutputs::in_dir(d, cfg)).collect();
    let read = |p: &Path| std::fs::read(p).expect("run output exists");
    let metrics = read(&outs[0].metrics);
    DeterminismOutcome {
        metrics_equal: metrics == read(&outs[1].metrics),
        checkpoint_equal: read(&outs[0].checkpoint) == read(&outs[1].checkpoint),
        training_log_equal: read(&outs[0].training_log) == read(&outs[1].training_log),
        rows: String::from_utf8_lossy(&metrics).lines().count().saturating_sub(1),
    }
}

/// Transition and snapshot accounting of a finished threaded run.
pub fn conservation_violations(t: &RunTotals, sum_record_steps: u64, sum_record_episodes: u64) -> Vec<String> {
    let mut v = Vec::new();
    if t.transitions_shipped != t.env_steps {
        v.push(format!("shipped {} != env steps {}", t.transitions_shipped, t.env_steps));
    }
    if t.transitions_inserted != t.transitions_shipped {
        v.push(format!("inserted {} != shipped {}", t.transitions_inserted, t.transitions_shipped));
    }
    if sum_record_steps > t.env_steps {
        v.push(format!("records claim {sum_record_steps} steps of {}", t.env_steps));
    }
    if sum_record_episodes > t.episodes {
        v.push(format!("records claim {sum_record_episodes} episodes of {}", t.episodes));
    }
    if t.pool_added > t.successes {
        v.push(format!("pool holds {} adds for {} successes", t.pool_added, t.successes));
    }
    if t.torn_snapshots != 0 {
        v.push(format!("{} torn snapshots in {} reads", t.torn_snapshots, t.snapshot_reads));
    }
    v
}

/// Writes scripted demos to a file, reads them back, then replays each
/// demo's actions from its stored initial pose. Returns the largest reward
/// deviation and whether every replay ended in success.
pub fn demo_replay_deviation(cfg: &ExperimentConfig, dir: &Path) -> (f64, bool) {
    assert_eq!(cfg.task, Variant::PegInHole, "initial pose is recoverable only with a fixed hole");
    let demos = generate_demos(cfg).expect("demos");
    let path = dir.join("demos.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    write_episodes(&mut f, &demos).unwrap();
    drop(f);
    let loaded = read_episodes(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(loaded.len(), demos.len());
    let mut worst: f64 = 0.0;
    let mut all_success = true;
    for ep in &loaded {
        let mut env = InsertionEnv::new(cfg.env.clone());
        let start = PlanarPose::from_observation(&ep.transitions()[0].obs);
        env.reset_to(EnvState::at_rest(start, HoleFrame::default()));
        let mut last = None;
        for t in ep.transitions() {
            let out = env.step(&t.action).unwrap();
            worst = worst.max((out.reward - t.reward).abs());
            last = Some(out.success);
        }
        all_success &= last == Some(true);
    }
    (worst, all_success)
}
