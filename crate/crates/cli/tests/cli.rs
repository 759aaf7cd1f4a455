use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("headgen").chain(args.iter().copied());
    let code = headgen_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn help_lists_every_subcommand() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for name in ["gen-data", "fit-hair", "build-pca", "fit-gaussians", "train-toy", "sample", "edit", "cfg-sweep", "render", "check-grads"] {
        assert!(out.contains(name), "{name} missing from help");
    }
    let (code, out, _) = run(&["fit-gaussians", "--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("--set"));
}

#[test]
fn binary_reports_usage_errors() {
    let out = Command::new(env!("CARGO_BIN_EXE_headgen")).arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]"));
}

#[test]
fn unknown_flag_and_subcommand_are_usage_errors() {
    assert_eq!(run(&["gen-data", "--frobnicate"]).0, 2);
    assert_eq!(run(&["paint"]).0, 2);
    assert_eq!(run(&[]).0, 2);
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "seed = 1\nwidth_of_moon = 3\n").unwrap();
    let (code, _, err) = run(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.starts_with("error[config]") && err.contains("line 2"), "{err}");

    let (code, _, _) = run(&["gen-data", "--config", dir.path().join("missing.txt").to_str().unwrap()]);
    assert_eq!(code, 3);

    std::fs::write(&cfg, "mode = sample\n").unwrap();
    assert_eq!(run(&["gen-data", "--config", cfg.to_str().unwrap()]).0, 3);
    assert_eq!(run(&["gen-data", "--set", "views=0"]).0, 3);
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "gen-data".to_string(),
            "--out".into(),
            d.to_string_lossy().into_owned(),
            "--seed".into(),
            "7".into(),
            "--set".into(),
            "views=2".into(),
            "--set".into(),
            "image_size=24".into(),
            "--set".into(),
            "texture_resolution=8".into(),
        ]
    };
    for d in [a.path(), b.path()] {
        let argv = args(d);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let (code, out, err) = run(&argv);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("scenes=1 views=2"));
    }
    let (mut ta, mut tb) = (tree(a.path()), tree(b.path()));
    let echo = |t: &mut BTreeMap<String, Vec<u8>>| {
        let text = String::from_utf8(t.remove("config.txt").unwrap()).unwrap();
        text.lines().filter(|l| !l.starts_with("out_dir")).collect::<Vec<_>>().join("\n")
    };
    let (ea, eb) = (echo(&mut ta), echo(&mut tb));
    assert_eq!(ea, eb);
    assert!(ea.contains("mode = gen-data") && ea.contains("seed = 7"));
    assert_eq!(ta, tb);
    for f in ["metrics.log", "scene_000/hair.obj", "scene_000/view_01_rgb.png", "scene_000/face_texture.3dgh"] {
        assert!(ta.contains_key(f), "{f} missing");
    }
}

#[test]
fn float_output_replaces_png() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let (code, _, err) = run(&["gen-data", "--out", out, "--emit-float", "--set", "views=1", "--set", "image_size=16", "--set", "texture_resolution=8"]);
    assert_eq!(code, 0, "{err}");
    let files = tree(d.path());
    assert!(files.contains_key("scene_000/view_00_rgb.3dgh"));
    assert!(!files.keys().any(|k| k.ends_with(".png")));
}

#[test]
fn fit_hair_and_build_pca_report_metrics() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let (code, stdout, err) = run(&["fit-hair", "--out", out, "--iterations", "3", "--set", "image_size=32", "--set", "log_every=1"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("step=2 loss="));
    assert!(stdout.contains("mean_iou="));
    assert!(d.path().join("fitted.obj").is_file());

    let (code, stdout, err) = run(&["build-pca", "--out", out]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("rank=9"), "{stdout}");
    assert!(d.path().join("hair_model.3dgh").is_file());
}

#[test]
fn fitted_textures_render_back() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("fit");
    let (code, stdout, err) = run(&[
        "fit-gaussians",
        "--out",
        out.to_str().unwrap(),
        "--iterations",
        "2",
        "--set",
        "views=2",
        "--set",
        "image_size=24",
        "--set",
        "texture_resolution=8",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("scene=0 psnr="));
    let scene = out.join("scene_000");
    let rendered = d.path().join("render");
    let ckpt = format!("checkpoint={}", scene.display());
    let (code, stdout, err) = run(&["render", "--out", rendered.to_str().unwrap(), "--set", &ckpt, "--set", "yaws=0,90"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.matches("max_reference_diff=").count(), 2);
    assert!(rendered.join("render_yaw090_rgb.png").is_file());
}

#[test]
fn sampling_needs_an_existing_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let (code, _, err) = run(&["sample", "--out", out]);
    assert_eq!(code, 3);
    assert!(err.contains("checkpoint"));
    let (code, _, _) = run(&["edit", "--out", out, "--set", "checkpoint=/nonexistent/model.3dgh"]);
    assert_eq!(code, 3);
}

#[test]
fn train_then_sample_edit_and_sweep() {
    let d = tempfile::tempdir().unwrap();
    let train = d.path().join("train");
    let (code, stdout, err) = run(&[
        "train-toy",
        "--out",
        train.to_str().unwrap(),
        "--iterations",
        "2",
        "--set",
        "scenes=2",
        "--set",
        "views=2",
        "--set",
        "checkpoint_every=1",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("steps=2"), "{stdout}");
    assert!(train.join("checkpoints/step_000001.3dgh").is_file());

    let ckpt = format!("checkpoint={}", train.join("model.3dgh").display());
    let sample = d.path().join("sample");
    let (code, stdout, err) = run(&["sample", "--out", sample.to_str().unwrap(), "--set", &ckpt, "--set", "yaws=0,180"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.matches("sample yaw=").count(), 2);
    assert!(sample.join("sample_yaw180_rgb.png").is_file());

    let mid = format!("checkpoint={}", train.join("checkpoints/step_000001.3dgh").display());
    let edit = d.path().join("edit");
    let (code, stdout, err) = run(&["edit", "--out", edit.to_str().unwrap(), "--set", &mid, "--set", "yaws=0"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("edited yaw=0.0"));

    let sweep = d.path().join("sweep");
    let (code, stdout, err) = run(&["cfg-sweep", "--out", sweep.to_str().unwrap(), "--set", &ckpt, "--set", "yaws=0"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("omega")).count(), 3);
}

#[test]
fn check_grads_passes() {
    let d = tempfile::tempdir().unwrap();
    let (code, stdout, err) = run(&["check-grads", "--out", d.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}{stdout}");
    assert!(stdout.contains("all 9 checks passed"));
}
