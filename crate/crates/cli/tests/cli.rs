use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srn_core::data::{read_image, write_image};
use srn_core::Tensor;

fn srn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srn"))
        .args(args)
        .output()
        .expect("spawn srn")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.clone(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY_CONFIG: &str = "\
# tiny model for command-line tests
variant = SR_EDRB1
kernel_size = 3
base_channels = 2
batch = 2
patch = 16
epochs = 2
lr0 = 1e-3
lr_end = 1e-5
seed = 4
";

/// Synthesizes three 16x16 pairs (two train, one eval) and trains the tiny model.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let out = srn(&[
        "synth",
        "--out",
        p(&data),
        "--count",
        "3",
        "--size",
        "16x16",
        "--seed",
        "2",
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let config = dir.join("tiny.cfg");
    fs::write(&config, TINY_CONFIG).unwrap();
    let ckpts = dir.join("ckpt");
    let out = srn(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--out",
        p(&ckpts),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    (data, ckpts)
}

#[test]
fn bad_flags_exit_1_with_usage() {
    for args in [
        vec!["params", "--variant", "SR_EDRB3", "--kernel", "4"],
        vec!["gradcheck", "--bogus"],
        vec!["frobnicate"],
        vec!["synth", "--out", "x", "--count", "3", "--size", "12"],
    ] {
        let out = srn(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(text(&out).contains("Usage"), "{args:?}: {}", text(&out));
    }
    let out = srn(&["params", "--variant", "SR_EDRB9"]);
    assert_eq!(out.status.code(), Some(1));
    let out = srn(&["gradcheck", "--module", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(srn(&["--help"]).status.success());
}

#[test]
fn missing_files_exit_2_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.srnw");
    let out = srn(&[
        "infer",
        "--ckpt",
        p(&missing),
        "--input",
        "in.ppm",
        "--output",
        "out.ppm",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("absent.srnw"), "{}", text(&out));

    let config = dir.path().join("c.cfg");
    fs::write(&config, TINY_CONFIG).unwrap();
    let nodata = dir.path().join("nodata");
    let out = srn(&[
        "train",
        "--data",
        p(&nodata),
        "--config",
        p(&config),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("nodata"), "{}", text(&out));
}

#[test]
fn params_prints_total_and_breakdown() {
    let out = srn(&["params", "--variant", "SR_EDRB3", "--kernel", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let total: f64 = stdout
        .split(['(', ')'])
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no total in {stdout}"));
    assert!((total / 3.76e6 - 1.0).abs() <= 0.08, "{total}");
    let parts: f64 = stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(parts, total);
}

#[test]
fn gradcheck_single_module() {
    let out = srn(&["gradcheck", "--module", "conv2d"]);
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("conv2d") && l.contains("PASS")));
}

#[test]
fn synth_is_reproducible_and_stays_in_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = srn(&[
            "synth",
            "--out",
            p(d),
            "--count",
            "3",
            "--size",
            "12x20",
            "--seed",
            "9",
        ]);
        assert!(out.status.success(), "{}", text(&out));
    }
    let fa = files_under(&a);
    let fb = files_under(&b);
    assert_eq!(fa.len(), 6);
    for ((pa, da), (pb, db)) in fa.iter().zip(&fb) {
        assert_eq!(pa.strip_prefix(&a).unwrap(), pb.strip_prefix(&b).unwrap());
        assert_eq!(da, db);
    }
    assert!(a.join("train/00000/blur.ppm").is_file());
    assert!(a.join("train/00001/sharp.ppm").is_file());
    assert!(a.join("eval/00002/blur.ppm").is_file());
    let mut top: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    top.sort();
    assert_eq!(top, ["a", "b"]);
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpts) = trained(dir.path());
    let data_files = files_under(&data);
    let final_ckpt = ckpts.join("final.srnw");
    assert!(final_ckpt.is_file());
    assert!(ckpts.join("latest.srnw").is_file());
    assert!(ckpts.join("final.srnw.meta").is_file());

    // eval on the two-pair train split
    let csv = dir.path().join("scores.csv");
    let out = srn(&[
        "eval",
        "--ckpt",
        p(&final_ckpt),
        "--data",
        p(&data),
        "--split",
        "train",
        "--csv",
        p(&csv),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let rows: Vec<String> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(rows[0], "id,psnr_db,ssim");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("00000,") && rows[2].starts_with("00001,"));
    assert!(rows[3].starts_with("mean,"));
    let col = |i: usize| -> Vec<f64> {
        rows[1..]
            .iter()
            .map(|r| r.split(',').nth(i).unwrap().parse().unwrap())
            .collect()
    };
    let psnrs = col(1);
    assert!((psnrs[2] - (psnrs[0] + psnrs[1]) / 2.0).abs() < 1e-5);
    assert!(col(2).iter().all(|s| (-1.0..=1.0).contains(s)));

    // infer keeps arbitrary sizes
    let input = dir.path().join("odd.ppm");
    let output = dir.path().join("odd_out.ppm");
    let img = Tensor::from_fn([1, 3, 13, 7], |[_, c, y, x]| {
        ((c * 5 + y * 3 + x) % 11) as f32 / 10.0
    });
    write_image(&img, &input).unwrap();
    let out = srn(&[
        "infer",
        "--ckpt",
        p(&final_ckpt),
        "--input",
        p(&input),
        "--output",
        p(&output),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(read_image(&output).unwrap().shape(), [1, 3, 13, 7]);

    // read-only inputs are untouched
    assert_eq!(files_under(&data), data_files);
}

#[test]
fn resume_finishes_the_schedule_and_rejects_other_configs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpts) = trained(dir.path());
    let config = dir.path().join("tiny.cfg");

    // Resuming a finished run writes the same final weights again.
    let again = dir.path().join("again");
    let out = srn(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--out",
        p(&again),
        "--resume",
        p(&ckpts.join("final.srnw")),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(
        fs::read(again.join("final.srnw")).unwrap(),
        fs::read(ckpts.join("final.srnw")).unwrap()
    );

    let other = dir.path().join("other.cfg");
    fs::write(&other, TINY_CONFIG.replace("seed = 4", "seed = 5")).unwrap();
    let out = srn(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&other),
        "--out",
        p(&dir.path().join("x")),
        "--resume",
        p(&ckpts.join("final.srnw")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "variant = SR_EDRB1\nlearning_rate = 3\n").unwrap();
    let out = srn(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&bad),
        "--out",
        p(&dir.path().join("y")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    assert!(text(&out).contains("learning_rate"));
}
