use std::path::Path;

use stateact::cli::{run, EXIT_FAILED, EXIT_IO, EXIT_OK, EXIT_USAGE};

fn stateact(args: &[&str], env: &[(&str, &str)]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let env = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let code = run(std::iter::once("stateact").chain(args.iter().copied()), env, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--k", "3", "--segment-len", "12", "--image-size", "16", "--train-count", "36", "--test-count", "18",
    "--backbone-channels", "4,8,8", "--shared-channels", "8", "--epochs", "2", "--batch-size", "8",
    "--clips", "2", "--deterministic",
];

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = dir.path().join("spec.conf");
    std::fs::write(&spec, "seed = 5\nnoise_sigma = 0.01\n").unwrap();

    let mut args = vec!["gen-data", "--out", p(&data), "--spec", p(&spec)];
    args.extend_from_slice(SMALL);
    let (code, out, err) = stateact(&args, &[]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("54 segments"));
    let manifest = std::fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert!(manifest.starts_with("# seed=5\n"));
    assert!(manifest.contains("# noise_sigma = 0.01"));

    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&ckpt)];
    args.extend_from_slice(SMALL);
    let (code, _, err) = stateact(&args, &[("STATEACT_LEARNING_RATE", "0.02")]);
    assert_eq!(code, EXIT_OK, "{err}");
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log.tsv")).unwrap();
    assert!(log.contains("# learning_rate = 0.02"));
    assert!(log.contains("epoch\tstate_mse\tnoun_mse\tverb_ce\taction_ce\ttotal\n1\t"));
    assert!(log.contains("\n2\t"));

    let reports: Vec<String> = (0..2)
        .map(|i| {
            let report = dir.path().join(format!("r{i}.tsv"));
            let (code, _, err) = stateact(
                &["eval", "--data", p(&data), "--model", p(&ckpt), "--report", p(&report), "--seed", "3"],
                &[],
            );
            assert_eq!(code, EXIT_OK, "{err}");
            std::fs::read_to_string(report).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert!(reports[0].starts_with("# segments=18 clips=2 seed=3\nverb\ttop1\t"));

    let segment = data.join("segments/test_00000.sseg");
    let (code, out, err) = stateact(&["predict", "--model", p(&ckpt), "--segment", p(&segment)], &[]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("verb\t")).count(), 5);
    assert_eq!(out.lines().filter(|l| l.starts_with("noun\t")).count(), 3);

    let cams = dir.path().join("cams");
    let (code, _, err) = stateact(
        &["export-cams", "--model", p(&ckpt), "--segment", p(&segment), "--out", p(&cams)],
        &[],
    );
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(cams.join("frame0_state_opened.pgm").exists());
    assert!(cams.join("frame2_noun_triangle.pgm").exists());
}

#[test]
fn ledger_commands() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.ledger");
    std::fs::write(&good, stateact::ledger::Ledger::synthetic().to_text()).unwrap();
    let (code, out, _) = stateact(&["ledger", "validate", p(&good)], &[]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("6 verbs, 3 nouns, 8 states, 18 actions, 6 rules"));
    let (code, out, _) = stateact(&["ledger", "show", p(&good)], &[]);
    assert_eq!((code, out.contains("[rules]")), (EXIT_OK, true));

    let bad = dir.path().join("bad.ledger");
    let text = stateact::ledger::Ledger::synthetic().to_text().replace("cook\t*\traw\tcooked", "cook\t*\traw\traw");
    std::fs::write(&bad, text).unwrap();
    let (code, out, _) = stateact(&["ledger", "validate", p(&bad)], &[]);
    assert_eq!(code, EXIT_FAILED);
    assert!(out.contains("pre-state equals post-state"));
}

#[test]
fn ingest_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    std::fs::write(
        &csv,
        "video_id,start_frame,stop_frame,verb,verb_class,noun,noun_class\n\
         P01_01,10,50,open,3,fridge,12\nP01_01,60,90,cut,7,tomato,4\nP01_02,5,40,open,3,door,8\n",
    )
    .unwrap();
    let out_dir = dir.path().join("ingested");
    let (code, out, err) = stateact(&["ingest-epic", "--annotations", p(&csv), "--out", p(&out_dir)], &[]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("3 segments, 2 verbs, 3 nouns"));
    let segs = std::fs::read_to_string(out_dir.join("segments.tsv")).unwrap();
    assert_eq!(segs.lines().count(), 4);

    std::fs::write(&csv, "video_id,start_frame,stop_frame,verb,verb_class,noun,noun_class\nP,9,3,open,3,door,8\n").unwrap();
    let (code, _, err) = stateact(&["ingest-epic", "--annotations", p(&csv), "--out", p(&out_dir)], &[]);
    assert_eq!(code, EXIT_FAILED);
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn grad_check_and_summary() {
    let (code, out, _) = stateact(&["grad-check"], &[]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("tiny net: action_fc.weight") && !out.contains("FAIL"));

    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "k = 3\nbackbone_frozen = false\n").unwrap();
    let (code, out, _) = stateact(&["model-summary", "--config", p(&conf), "--k", "7"], &[("STATEACT_SEED", "9")]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("noun_temporal.weight"));
    assert!(out.contains(" 1x7 "), "{out}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stateact(&[], &[]).0, EXIT_USAGE);
    assert_eq!(stateact(&["train", "--data", "x"], &[]).0, EXIT_USAGE);
    assert_eq!(stateact(&["model-summary"], &[("STATEACT_BOGUS", "1")]).0, EXIT_USAGE);

    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "k = 3\nthis line is wrong\n").unwrap();
    let (code, _, err) = stateact(&["model-summary", "--config", p(&conf)], &[]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("line 2"), "{err}");

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"STTR\x01\x00").unwrap();
    let (code, _, err) = stateact(&["predict", "--model", p(&junk), "--segment", p(&junk)], &[]);
    assert_eq!(code, EXIT_IO);
    assert_eq!(err.lines().count(), 1);
}
