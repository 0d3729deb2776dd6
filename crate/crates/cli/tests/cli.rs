use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowmap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowmap"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const TINY: &str = "[plan]
seed = 3
fm_steps = 3
fmsd_steps = 3
cfg_steps = 2
adv_steps = 2
d_pretrain_steps = 1
batch_size = 8

[model]
hidden = 8
depth = 1
time_embed_dim = 4
cond_dim = 2
lora_rank = 1
";

#[test]
fn oracle_check_passes_for_every_setting() {
    let dir = tempfile::tempdir().unwrap();
    for setting in ["lsd", "esd", "ssd"] {
        let o = flowmap(&["oracle-check", "--setting", setting, "--probes", "20"], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let out = String::from_utf8(o.stdout).unwrap();
        assert!(out.starts_with("setting,probe,residual\n"));
        assert_eq!(out.lines().count(), 21);
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flowmap(&["train", "--config", "missing.ini"], dir.path())), 1);
    assert_eq!(code(&flowmap(&["bogus"], dir.path())), 1);
    assert_eq!(code(&flowmap(&["oracle-check", "--frobnicate"], dir.path())), 1);
    assert_eq!(code(&flowmap(&["oracle-check", "--setting", "xsd"], dir.path())), 1);
    fs::write(dir.path().join("bad.ini"), "[plan]\nunknown_key = 1\n").unwrap();
    let o = flowmap(&["train", "--config", "bad.ini"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));
    assert_eq!(code(&flowmap(&["--help"], dir.path())), 0);
}

#[test]
fn train_sample_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.ini"), TINY).unwrap();
    let o = flowmap(&["train", "--config", "tiny.ini", "--out", "a.fmck", "--metrics", "a.csv"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("a.csv")).unwrap();
    assert!(csv.starts_with("step,phase,loss_main,loss_perc,loss_weighted,lambda_mean,g_loss,d_loss\n"));
    assert_eq!(csv.lines().count(), 1 + 3 + 3 + 2 + 1 + 2);

    let o = flowmap(&["train", "--config", "tiny.ini", "--out", "b.fmck", "--metrics", "b.csv"], p);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(p.join("a.fmck")).unwrap(), fs::read(p.join("b.fmck")).unwrap());
    assert_eq!(csv, fs::read_to_string(p.join("b.csv")).unwrap());
    let o = flowmap(&["--seed", "4", "train", "--config", "tiny.ini", "--out", "c.fmck", "--metrics", "c.csv"], p);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(p.join("a.fmck")).unwrap(), fs::read(p.join("c.fmck")).unwrap());

    let o = flowmap(&["sample", "--checkpoint", "a.fmck", "--steps", "4", "--n", "5", "--trajectory"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("k,row,x0,x1\n"));
    assert_eq!(out.lines().count(), 1 + 5 * 5);

    let o = flowmap(&["sample", "--checkpoint", "a.fmck", "--steps", "3"], p);
    assert_eq!(code(&o), 1);
    let o = flowmap(&["sample", "--checkpoint", "a.fmck", "--cond", "neg", "--lora-scale", "0"], p);
    assert_eq!(code(&o), 0);

    let o = flowmap(&["eval", "--checkpoint", "a.fmck", "--n", "200"], p);
    assert_eq!(code(&o), 0);
    let first = String::from_utf8(o.stdout).unwrap();
    assert!(first.starts_with("task,n,steps,evaluations,w2"));
    assert!(first.lines().nth(1).unwrap().starts_with("gaussian,200,2,2,"));
    let again = flowmap(&["eval", "--checkpoint", "a.fmck", "--n", "200"], p);
    assert_eq!(first, String::from_utf8(again.stdout).unwrap());
    assert_eq!(code(&flowmap(&["eval", "--checkpoint", "nope.fmck"], p)), 1);
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let text = TINY.replace("fm_steps = 3", "fm_steps = 40\nlr_model = 1e300");
    fs::write(p.join("boom.ini"), text).unwrap();
    let o = flowmap(&["train", "--config", "boom.ini", "--metrics", "m.csv"], p);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("m.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("# aborted"));
}

#[test]
fn gen_data_writes_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = flowmap(&["--seed", "2", "gen-data", "--task", "texture", "--n", "3", "--size", "8", "--out", "tex"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for sub in ["hr", "lr"] {
        let manifest = fs::read_to_string(p.join("tex").join(sub).join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 4);
        let img = fs::read(p.join("tex").join(sub).join("img_00002.pgm")).unwrap();
        assert!(img.starts_with(b"P5"));
    }
    for task in ["gaussian", "moons", "two_gaussians"] {
        let o = flowmap(&["gen-data", "--task", task, "--n", "10", "--out", task], p);
        assert_eq!(code(&o), 0, "{task}");
        let csv = fs::read_to_string(p.join(task).join("pairs.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x0_0,x0_1,x1_0,x1_1");
        assert_eq!(csv.lines().count(), 11);
    }
    assert_eq!(code(&flowmap(&["gen-data", "--task", "texture", "--size", "12", "--out", "x"], p)), 1);
    assert_eq!(code(&flowmap(&["gen-data", "--task", "spirals", "--out", "x"], p)), 1);
}
