use std::fs;
use std::path::Path;

use meshrewire::cli::{run, RunConfig, RunConfigFile, RunFlags, ABLATE_HEADER};
use meshrewire::processor::Checkpoint;
use meshrewire::Trajectory;

fn call(args: &[&str]) -> (i32, String) {
    let mut argv = vec!["meshrewire".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let mut out = Vec::new();
    let code = run(&argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_trajectory(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("traj.json");
    let (code, _) = call(&["gen-synth", "--rows", "6", "--cols", "7", "--steps", "8", "--seed", "3", "--out", p(&path)]);
    assert_eq!(code, 0);
    path
}

#[test]
fn help_and_usage_errors() {
    let (code, text) = call(&["--help"]);
    assert_eq!(code, 0);
    assert!(text.contains("verify-lemma") && text.contains("ablate"));
    assert_eq!(call(&["frobnicate"]).0, 2);
    assert_eq!(call(&["curvature", "--bogus"]).0, 2);
    assert_eq!(call(&["schedule", "--in", "x.json", "--variant", "sideways"]).0, 2);
    assert_eq!(call(&["curvature", "--in", "/nonexistent/traj.json"]).0, 2);
}

#[test]
fn gen_synth_options() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    let (code, _) = call(&[
        "gen-synth", "--rows", "9", "--cols", "10", "--steps", "5", "--profile", "sine", "--period", "6",
        "--advection", "-0.4", "--diffusion", "0.1", "--obstacle", "5,4,1.5", "--out", p(&path),
    ]);
    assert_eq!(code, 0);
    let traj = Trajectory::load(&path).unwrap();
    assert_eq!(traj.graph.node_count(), 90);
    assert_eq!(traj.frames.len(), 6);
    assert_eq!(call(&["gen-synth", "--obstacle", "1,2", "--out", p(&path)]).0, 2);
    assert_eq!(call(&["gen-synth", "--advection", "0.9", "--diffusion", "0.1", "--out", p(&path)]).0, 2);
}

#[test]
fn curvature_and_schedule_csv() {
    let dir = tempfile::tempdir().unwrap();
    let traj = small_trajectory(dir.path());
    let (code, csv) = call(&["curvature", "--in", p(&traj), "--alpha", "10"]);
    assert_eq!(code, 0);
    assert!(csv.starts_with("record,i,j,value\nedge,"));
    assert!(csv.contains("\nnode,") && csv.contains("\nbottleneck,"));
    assert!(!csv.contains('\r') && csv.ends_with('\n'));

    let args = ["schedule", "--alpha", "3", "--beta", "1", "--layers", "15", "--in", p(&traj), "--frame", "4"];
    let (code, first) = call(&args);
    assert_eq!(code, 0);
    assert!(first.starts_with("source,partner,hop_distance,velocity_gap,delay,activation_layer\n"));
    assert_eq!(call(&args).1, first);
    assert_eq!(call(&["schedule", "--in", p(&traj), "--frame", "99"]).0, 2);
    assert_eq!(call(&["schedule", "--in", p(&traj), "--alpha", "0"]).0, 2);
}

#[test]
fn train_evaluate_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let traj = small_trajectory(dir.path());
    let model = dir.path().join("model.json");
    let base = ["train", "--in", p(&traj), "--model-out", p(&model), "--hidden-dim", "4", "--layers", "2"];

    let mut zero = base.to_vec();
    zero.extend(["--epochs", "0"]);
    assert_eq!(call(&zero).0, 2);
    assert!(!model.exists());

    let mut args = base.to_vec();
    args.extend(["--epochs", "3", "--seed", "5"]);
    let (code, curve) = call(&args);
    assert_eq!(code, 0);
    assert!(curve.starts_with("epoch,loss\n1,"));
    assert_eq!(curve.lines().count(), 4);
    let saved = fs::read_to_string(&model).unwrap();
    assert_eq!(call(&args).1, curve);
    assert_eq!(fs::read_to_string(&model).unwrap(), saved);
    let ckpt = Checkpoint::load(&model).unwrap();
    assert_eq!(ckpt.params.config.layers, 2);
    assert_eq!(ckpt.rewire.alpha_percent, 3.0);

    let (code, csv) = call(&["evaluate", "--model", p(&model), "--in", p(&traj), "--horizons", "1,5,50"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "field,metric,horizon,rmse");
    assert!(lines[1].starts_with("velocity,one_step,1,"));
    assert!(lines.iter().any(|l| l.starts_with("velocity,rollout,5,")));
    assert!(!lines.iter().any(|l| l.starts_with("velocity,rollout,50,")));
    assert!(lines.last().unwrap().starts_with("velocity,rollout_all,8,"));

    let out = dir.path().join("pred.json");
    let (code, _) = call(&["rollout", "--model", p(&model), "--in", p(&traj), "--steps", "4", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert_eq!(Trajectory::load(&out).unwrap().frames.len(), 5);
    assert_eq!(call(&["rollout", "--model", p(&model), "--in", p(&traj), "--steps", "20"]).0, 2);
    assert_eq!(call(&["rollout", "--model", p(&model), "--in", p(&traj), "--steps", "20", "--free-boundary"]).0, 0);
    assert_eq!(call(&["evaluate", "--model", p(&traj), "--in", p(&traj)]).0, 2);
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"preset": "turbulent", "layers": 3, "train": {"epochs": 7, "seed": 2}}"#).unwrap();
    let flags = RunFlags {
        config: Some(cfg.clone()),
        epochs: Some(9),
        ..RunFlags::default()
    };
    let resolved = RunConfig::from_flags(&flags).unwrap();
    assert_eq!((resolved.rewire.alpha_percent, resolved.rewire.beta), (5.0, 2.0));
    assert_eq!(resolved.rewire.layers, 3);
    assert_eq!(resolved.train.epochs, 9);
    assert_eq!(resolved.train.seed, 2);
    assert!(RunConfig::resolve(&RunConfigFile::default(), &RunFlags::default()).is_ok());

    fs::write(&cfg, r#"{"alpha": 3}"#).unwrap();
    let traj = small_trajectory(dir.path());
    assert_eq!(call(&["schedule", "--in", p(&traj), "--config", p(&cfg)]).0, 2);
}

#[test]
fn verify_lemma_passes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("decay.csv");
    let (code, csv) = call(&["verify-lemma", "--seed", "7", "--summary", p(&summary)]);
    assert_eq!(code, 0);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "graph_id,kind,i,j,s,r,hop,jac,bound,zero_expected,pass");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 200);
    assert!(rows.iter().all(|l| l.ends_with(",true")));
    assert!(fs::read_to_string(&summary).unwrap().starts_with("kind,r,rows,"));
    assert_eq!(call(&["verify-lemma", "--seed", "7"]).1, csv);
    assert_eq!(call(&["verify-lemma", "--max-nodes", "40"]).0, 2);
}

#[test]
fn ablate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let traj = small_trajectory(dir.path());
    let (code, csv) = call(&[
        "ablate", "--in", p(&traj), "--epochs", "2", "--hidden-dim", "4", "--layers", "2", "--alpha", "20",
    ]);
    assert_eq!(code, 0);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), ABLATE_HEADER);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Default horizon 20 exceeds the 8-step trajectory, so it is skipped.
    assert_eq!(rows.len(), 12);
    for variant in ["adaptive", "static_all_at_first_layer", "no_distance", "no_velocity", "weighted_edges", "none"] {
        for metric in ["one_step", "rollout_all"] {
            assert_eq!(rows.iter().filter(|r| r[0] == variant && r[1] == metric).count(), 1);
        }
    }
}
