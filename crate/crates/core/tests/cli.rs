use std::path::Path;

use rirl::cli::run_from;

fn rirl(dir: &Path, args: &[&str]) -> i32 {
    let mut argv: Vec<String> = vec!["rirl".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    for (flag, sub) in [("--data", "data.csv"), ("--models", "models"), ("--reports", "run")] {
        if !args.contains(&flag) {
            argv.push(flag.into());
            argv.push(dir.join(sub).display().to_string());
        }
    }
    argv.extend(
        ["--latent-dim", "4", "--num-keys", "1", "--hidden", "8", "--window-n", "3", "--epochs", "2", "--seed", "9"]
            .map(String::from),
    );
    run_from(argv)
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rirl(d, &["synth", "--spec", "tiered-five", "--days", "300"]), 0);
    assert!(d.join("data.csv").is_file());

    assert_eq!(rirl(d, &["init"]), 0);
    for n in ["A", "B", "C", "D", "E"] {
        assert!(d.join(format!("models/nodes/{n}.json")).is_file(), "{n}");
    }
    assert!(d.join("models/nodes.csv").is_file());

    assert_eq!(rirl(d, &["edge", "--cause", "B,C", "--effect", "D"]), 0);
    assert_eq!(std::fs::read_dir(d.join("models/relations")).unwrap().count(), 1);

    std::fs::write(d.join("cands.txt"), "A->B\nB->D\nA->C\nC->E\nD->E\n").unwrap();
    assert_eq!(rirl(d, &["explore", "--candidates", d.join("cands.txt").to_str().unwrap()]), 0);
    for f in ["rounds.csv", "exploration.csv", "edges.txt", "exploration.json", "run.toml"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let edges = std::fs::read_to_string(d.join("run/edges.txt")).unwrap();
    assert_eq!(edges.lines().count(), 5);

    assert_eq!(rirl(d, &["report", "--format", "csv"]), 0);
    for f in ["nodes.csv", "relations.csv", "exploration.csv", "rounds.csv"] {
        assert!(d.join("run/report").join(f).is_file(), "{f}");
    }
    let relations = rirl::report::read_metric_rows(&std::fs::read_to_string(d.join("run/report/relations.csv")).unwrap()).unwrap();
    assert!(!relations.is_empty());

    assert_eq!(rirl(d, &["report", "--format", "svg"]), 0);
    let svgs: Vec<_> = std::fs::read_dir(d.join("run/report"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert!(!svgs.is_empty());
    for s in svgs {
        roxmltree::Document::parse(&std::fs::read_to_string(s.path()).unwrap()).unwrap();
    }
}

#[test]
fn init_is_deterministic_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rirl(d, &["synth", "--spec", "tiered-five", "--days", "200"]), 0);
    let m1 = d.join("m1").display().to_string();
    let m2 = d.join("m2").display().to_string();
    assert_eq!(rirl(d, &["--models", &m1, "init"]), 0);
    assert_eq!(rirl(d, &["--models", &m2, "--workers", "3", "init"]), 0);
    for n in ["A", "C", "E"] {
        let a = std::fs::read(d.join(format!("m1/nodes/{n}.json"))).unwrap();
        let b = std::fs::read(d.join(format!("m2/nodes/{n}.json"))).unwrap();
        assert!(a == b, "{n} differs between worker counts");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rirl(d, &["frobnicate"]), 2);
    assert_eq!(run_from(["rirl", "--help"]), 0);
    assert_eq!(rirl(d, &["synth", "--spec", "tiered-five", "--days", "0"]), 2);
    assert_eq!(rirl(d, &["synth", "--spec", d.join("nope.json").to_str().unwrap(), "--days", "10"]), 3);
    assert_eq!(rirl(d, &["init"]), 3);
    assert_eq!(rirl(d, &["report", "--format", "csv"]), 6);

    std::fs::write(d.join("bad.toml"), "latent_dim = 4\nflavour = 1\n").unwrap();
    assert_eq!(rirl(d, &["--config", d.join("bad.toml").to_str().unwrap(), "init"]), 2);

    assert_eq!(rirl(d, &["synth", "--spec", "tiered-five", "--days", "120"]), 0);
    assert_eq!(rirl(d, &["edge", "--cause", "Q", "--effect", "A"]), 2);
    assert_eq!(rirl(d, &["report", "--format", "pdf"]), 2);
}
