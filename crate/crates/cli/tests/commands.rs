use std::path::Path;
use std::process::{Command, Output};

fn charlm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charlm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = charlm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .map(|r| r.split('\t').next().unwrap_or(r))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

const TINY: &[&str] = &[
    "--embed-dim", "4", "--lstm-dim", "8", "--highway-dim", "8", "--batch-size", "8", "--seq-len", "20",
    "--max-epochs", "1", "--dropout", "0",
];

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let langs = ok(
        d,
        &[
            "synth-gen", "--out", "data", "--seed", "3", "--alphabet-size", "6", "--target", "tgt",
            "--target-sizes", "30,10,10", "--source", "src:0.2:60,10,10",
        ],
    );
    assert!(langs.contains("[languages.tgt]") && langs.contains("[languages.src]"));
    let vocab = ok(
        d,
        &[
            "build-vocab", "--corpus", "tgt=data/tgt/train.txt", "--corpus", "tgt=data/tgt/dev.txt",
            "--corpus", "tgt=data/tgt/test.txt", "--corpus", "src=data/src/train.txt", "--out", "vocab.txt",
        ],
    );
    assert_eq!(field(&vocab, "hash").len(), 64);

    let mut train = vec![
        "train", "--vocab", "vocab.txt", "--train", "data/src/train.txt", "--dev", "data/src/dev.txt", "--out",
        "src.ckpt", "--seed", "1",
    ];
    train.extend_from_slice(TINY);
    ok(d, &train);
    assert!(d.join("src.ckpt").is_file() && d.join("src.history.tsv").is_file());

    ok(d, &["transfer", "--source", "src.ckpt", "--depth", "2", "--vocab", "vocab.txt", "--seed", "1", "--out", "init.ckpt"]);
    let mut finetune = vec![
        "finetune", "--init", "init.ckpt", "--vocab", "vocab.txt", "--train", "data/tgt/train.txt", "--dev",
        "data/tgt/dev.txt", "--out", "tgt.ckpt", "--seed", "1",
    ];
    finetune.extend_from_slice(TINY);
    ok(d, &finetune);

    let mut baseline = vec![
        "train", "--vocab", "vocab.txt", "--train", "data/tgt/train.txt", "--dev", "data/tgt/dev.txt", "--out",
        "base.ckpt", "--seed", "1",
    ];
    baseline.extend_from_slice(TINY);
    ok(d, &baseline);

    for (model, split) in [("tgt", "dev"), ("tgt", "test"), ("base", "dev"), ("base", "test")] {
        let stdout = ok(
            d,
            &[
                "score", "--model", &format!("{model}.ckpt"), "--vocab", "vocab.txt", "--corpus",
                &format!("data/tgt/{split}.txt"), "--stream-out", &format!("{model}.{split}.nll"), "--format", "tsv",
            ],
        );
        assert!(field(&stdout, "word").parse::<f64>().unwrap() > 1.0);
    }
    let mixed = ok(
        d,
        &["interpolate", "--a", "tgt.test.nll", "--b", "base.test.nll", "--dev-a", "tgt.dev.nll", "--dev-b", "base.dev.nll"],
    );
    let lambda: f64 = field(&mixed, "lambda").parse().unwrap();
    assert!((0.0..=1.0).contains(&lambda));
    let fixed = ok(d, &["interpolate", "--a", "tgt.test.nll", "--b", "base.test.nll", "--lambda", "1"]);
    assert_eq!(field(&fixed, "ppl_interpolated"), field(&fixed, "ppl_a"));

    let self_align = ok(d, &["analyze-embeddings", "--source", "tgt.ckpt", "--target", "tgt.ckpt"]);
    let cosine: f64 = self_align.lines().nth(1).unwrap().split('\t').nth(4).unwrap().parse().unwrap();
    assert!(cosine > 0.999, "{self_align}");
}

#[test]
fn grid_and_report_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth-gen", "--out", "data", "--seed", "5", "--alphabet-size", "5", "--target", "t",
            "--target-sizes", "20,8,8", "--source", "s:0.5:40,8,8",
        ],
    );
    std::fs::write(
        d.join("exp.toml"),
        r#"
target = "t"
sources = ["s"]
depths = [1, 4]
seeds = [1]
data_fractions = [0.5, 1.0]
output_dir = "out"

[languages.t]
train = "data/t/train.txt"
dev = "data/t/dev.txt"
test = "data/t/test.txt"

[languages.s]
train = "data/s/train.txt"
dev = "data/s/dev.txt"
test = "data/s/test.txt"

[arch]
embed_dim = 4
lstm_dim = 8
highway_dim = 8

[train]
batch_size = 8
seq_len = 20
max_epochs = 1
dropout = 0.0
"#,
    )
    .unwrap();
    let grid = ok(d, &["grid", "--config", "exp.toml", "--format", "tsv"]);
    assert_eq!(grid.lines().count(), 1 + 3);
    let saved = std::fs::read_to_string(d.join("out/report.tsv")).unwrap();
    assert_eq!(saved, grid);
    let rendered = ok(d, &["report", "--input", "out/report.tsv", "--format", "tsv"]);
    assert_eq!(rendered, saved);

    let sweep = ok(d, &["sweep", "--config", "exp.toml", "--output-dir", "sweep", "--depths", "4", "--seed", "2"]);
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    let gains = ok(d, &["report", "--input", "sweep/report.tsv", "--gains"]);
    assert!(gains.contains("mean_relative_gain"));
    assert_eq!(gains.lines().filter(|l| l.starts_with("s\t4\t")).count(), 2);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(charlm(d, &["--help"]).status.code(), Some(0));
    assert_eq!(charlm(d, &["frobnicate"]).status.code(), Some(1));
    // Stochastic commands refuse to run without a seed.
    assert_eq!(charlm(d, &["synth-gen", "--out", "x"]).status.code(), Some(1));
    assert_eq!(charlm(d, &["transfer", "--source", "a", "--depth", "5", "--seed", "1", "--out", "b"]).status.code(), Some(1));
    assert_eq!(charlm(d, &["transfer", "--source", "missing.ckpt", "--depth", "1", "--seed", "1", "--out", "b"]).status.code(), Some(2));
    assert_eq!(charlm(d, &["report", "--input", "missing.tsv"]).status.code(), Some(2));
    std::fs::write(d.join("bad.tsv"), "nonsense\n").unwrap();
    assert_eq!(charlm(d, &["report", "--input", "bad.tsv"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "target = 1\n").unwrap();
    assert_eq!(charlm(d, &["grid", "--config", "bad.toml"]).status.code(), Some(1));

    // More output dimensions than vocabulary rows: the alignment is underdetermined.
    ok(d, &["synth-gen", "--out", "data", "--seed", "1", "--alphabet-size", "3", "--sentences", "20"]);
    ok(d, &["build-vocab", "--corpus", "x=data/source.txt", "--corpus", "x=data/target.txt", "--out", "v.txt"]);
    ok(
        d,
        &[
            "train", "--vocab", "v.txt", "--train", "data/source.txt", "--dev", "data/target.txt", "--out", "m.ckpt",
            "--seed", "1", "--embed-dim", "4", "--lstm-dim", "32", "--highway-dim", "32", "--max-epochs", "1",
        ],
    );
    let out = charlm(d, &["analyze-embeddings", "--source", "m.ckpt", "--target", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
