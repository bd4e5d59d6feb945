use std::path::Path;
use std::process::{Command, Output};

use deepflow::config::RunConfig;
use deepflow::grf::GridSpec;
use deepflow::network::NetworkConfig;

fn deepflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepflow"))
        .args(args)
        .env_remove("DEEPFLOW_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let mut c = RunConfig::desk();
    c.simulator.grid = GridSpec::new(8, 8, 10.0).unwrap();
    c.network = NetworkConfig::tiny();
    c.data.train_samples = 8;
    c.data.test_samples = 4;
    c.data.shard_samples = 4;
    c.uq.realizations = 32;
    c.uq.probes = vec![(4, 2)];
    c.io.out_dir = dir.join("run");
    let path = dir.join("small.toml");
    std::fs::write(&path, c.to_toml()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = deepflow(&["generate", "--config", &cfg]);
    assert!(o.status.success(), "{}", text(&o));

    let o = deepflow(&["train", "--config", &cfg, "--epochs", "1", "--batch", "4"]);
    assert!(o.status.success(), "{}", text(&o));
    let record = std::fs::read_to_string(dir.path().join("run/model-mse-bce/record.csv")).unwrap();
    assert_eq!(record.lines().count(), 2);

    let o = deepflow(&["train", "--config", &cfg, "--epochs", "1", "--batch", "4", "--mode", "mse"]);
    assert!(o.status.success(), "{}", text(&o));

    let o = deepflow(&["eval", "--config", &cfg]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = String::from_utf8_lossy(&o.stdout);
    assert!(csv.lines().any(|l| l.starts_with("150.0,false")), "{csv}");

    let o = deepflow(&["eval", "--config", &cfg, "--split", "train"]);
    assert!(o.status.success());
    assert!(text(&o).contains("training split"));

    let o = deepflow(&["uq", "--config", &cfg, "--mode", "mse"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.path().join("run/uq/checksums.txt").exists());
    assert!(dir.path().join("run/uq/oracle-mean.f64").exists());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(deepflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(deepflow(&["generate", "--threads", "many"]).status.code(), Some(1));
    assert_eq!(deepflow(&["train", "--threads", "0"]).status.code(), Some(1));
    assert_eq!(deepflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_corrupt_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = deepflow(&["train", "--config", &cfg, "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    assert!(deepflow(&["generate", "--config", &cfg]).status.success());
    let shard = dir.path().join("run/data/train/train-y-0000.f32");
    let mut bytes = std::fs::read(&shard).unwrap();
    bytes[100] ^= 0xff;
    std::fs::write(&shard, bytes).unwrap();
    let o = deepflow(&["train", "--config", &cfg, "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("checksum"), "{}", text(&o));
}

#[test]
fn env_overrides_mirror_flags() {
    let o = Command::new(env!("CARGO_BIN_EXE_deepflow"))
        .args(["config"])
        .env("DEEPFLOW_SEED", "4242")
        .env("DEEPFLOW_EPOCHS", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    let c = RunConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!((c.seed, c.training.epochs), (4242, 3));
}
