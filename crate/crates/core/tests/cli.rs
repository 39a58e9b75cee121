use std::fs;
use std::path::Path;

use qwalk::cli::run;

fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("qwalk").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn chern_exit_codes() {
    assert_eq!(run_args(&["chern", "--m", "100", "--t3", "0"]), 0);
    assert_eq!(run_args(&["chern", "--m", "-15", "--t3", "12"]), 0);
    assert_eq!(run_args(&["chern", "--m", "-10", "--t3", "6.666666666666667"]), 2);
    assert_eq!(run_args(&["chern", "--m", "1"]), 1);
}

#[test]
fn dataset_commands_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"lattice": 21, "counts": {"0": 3, "1": 3}, "region": {"kind": "custom", "m_range": [-20, -10], "t3_range": [-20, 20], "t1y_sign": 1, "exclusion_margin": 0}}"#).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_args(&["gen-dataset", "--config", p(&cfg), "--out", p(&a)]), 0);
    assert_eq!(run_args(&["gen-dataset", "--config", p(&cfg), "--out", p(&b)]), 0);
    let qwp = |d: &Path| {
        fs::read_dir(d)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "qwp"))
            .count()
    };
    assert_eq!(qwp(&a), 6);
    for f in ["manifest.json", "config.json", "sample_000005.qwp"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let noisy = tmp.path().join("n");
    assert_eq!(
        run_args(&["add-noise", "--dataset", p(&a), "--out", p(&noisy), "--seed", "1"]),
        0
    );
    assert_eq!(qwp(&noisy), 6);
    assert_eq!(
        run_args(&["split", "--dataset", p(&a)]),
        2,
        "six samples cannot be split"
    );
}

#[test]
fn train_eval_pca_and_images() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"lattice": 21, "counts": {"-1": 5, "0": 5, "1": 5}, "train": {"iters": 6, "batch": 4, "val_every": 3}, "som": {"height": 6, "width": 6, "iters": 50}}"#,
    )
    .unwrap();
    let ds = tmp.path().join("ds");
    let run_dir = tmp.path().join("run");
    assert_eq!(run_args(&["gen-dataset", "--config", p(&cfg), "--out", p(&ds)]), 0);
    assert_eq!(run_args(&["split", "--dataset", p(&ds), "--seed", "2"]), 0);
    assert_eq!(
        run_args(&[
            "train",
            "--config",
            p(&cfg),
            "--dataset",
            p(&ds),
            "--out",
            p(&run_dir),
            "--arch",
            "bogus"
        ]),
        1
    );
    assert_eq!(
        run_args(&["train", "--config", p(&cfg), "--dataset", p(&ds), "--out", p(&run_dir)]),
        0
    );
    for f in [
        "model.qwn",
        "som.qws",
        "metrics.json",
        "config.json",
        "som_assignments.json",
    ] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let metrics = tmp.path().join("m.json");
    let model = run_dir.join("model.qwn");
    assert_eq!(
        run_args(&[
            "eval",
            "--model",
            p(&model),
            "--dataset",
            p(&ds),
            "--subset",
            "all",
            "--out",
            p(&metrics)
        ]),
        0
    );
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["confusion"].as_array().unwrap().len(), 3);
    assert_eq!(
        run_args(&[
            "pca",
            "--dataset",
            p(&ds),
            "--model",
            p(&model),
            "--out",
            p(&tmp.path().join("pca.json"))
        ]),
        0
    );

    let img = tmp.path().join("img");
    assert_eq!(
        run_args(&[
            "export-image",
            "--in",
            p(&ds.join("sample_000000.qwp")),
            "--out",
            p(&img.join("s.ppm"))
        ]),
        0
    );
    for tag in ["up", "down", "phase"] {
        let bytes = fs::read(img.join(format!("s_{tag}.ppm"))).unwrap();
        let header = b"P6\n21 21\n255\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 21 * 21 * 3);
    }
    assert_eq!(
        run_args(&[
            "export-image",
            "--in",
            p(&run_dir.join("som.qws")),
            "--out",
            p(&img.join("som.ppm"))
        ]),
        0
    );
    let som = fs::read(img.join("som.ppm")).unwrap();
    assert!(som.starts_with(b"P6\n6 6\n255\n"));
    assert_eq!(
        run_args(&["export-image", "--in", p(&cfg), "--out", p(&img.join("x.ppm"))]),
        3
    );
    assert_eq!(run_args(&["eval", "--model", p(&cfg), "--dataset", p(&ds)]), 3);
}

#[test]
fn position_walk_exports_grayscale() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("w.qwp");
    assert_eq!(
        run_args(&[
            "walk",
            "--m",
            "-15",
            "--t3",
            "12",
            "--lattice",
            "15",
            "--domain",
            "position",
            "--out",
            p(&s)
        ]),
        0
    );
    let img = tmp.path().join("w.ppm");
    assert_eq!(run_args(&["export-image", "--in", p(&s), "--out", p(&img)]), 0);
    let bytes = fs::read(&img).unwrap();
    let body = &bytes[b"P6\n15 15\n255\n".len()..];
    assert_eq!(body.len(), 15 * 15 * 3);
    assert!(body.chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    assert_eq!(body.iter().copied().max(), Some(255));
}

#[test]
fn boundary_shift_oracle_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bs");
    assert_eq!(run_args(&["boundary-shift", "--eta", "0,3", "--out", p(&out)]), 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("boundary_shift.json")).unwrap()).unwrap();
    assert_eq!(v[0]["oracle_relative"]["shift"].as_f64(), Some(0.0));
    let three = v[1]["oracle"]["shift"].as_f64().unwrap();
    assert!((three - 1.0).abs() <= 0.7407 + 1e-4, "{three}");
    assert!(fs::read_to_string(out.join("boundary_shift.txt"))
        .unwrap()
        .contains("eta=3"));
    assert!(out.join("config.json").exists());
}

#[test]
fn phase_diagram_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pd.json");
    let args = [
        "phase-diagram",
        "--m-range",
        "-20",
        "20",
        "--m-count",
        "3",
        "--t3-count",
        "3",
        "--n",
        "64",
        "--out",
        p(&out),
    ];
    assert_eq!(run_args(&args), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["labels"].as_array().unwrap().len(), 3);
}
