use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use ranlab::decomposition::attribute_sequence;
use ranlab::lm::{load_checkpoint, AnyCheckpoint};

const TEXT: &str = "the quick brown fox jumps over the lazy dog\nand then the dog naps in the sun\n";

fn ranlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranlab"))
        .args(args)
        .env_remove("RANLAB_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.txt"), TEXT.repeat(6)).unwrap();
        fs::write(dir.path().join("valid.txt"), TEXT).unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (cfg, corpus, valid, out) = (self.s("run.cfg"), self.s("train.txt"), self.s("valid.txt"), self.s(out));
        let mut args = vec![
            "train", "--config", &cfg, "--corpus", &corpus, "--valid", &valid, "--out", &out,
        ];
        args.extend_from_slice(extra);
        ranlab(&args)
    }
}

const TINY: &str = "preset = char-small\nkind = ran-general\nhidden_dims = 8\nembedding_dim = 8\nbatch_size = 4\nbptt_length = 8\nmax_epochs = 2\n";

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn missing_corpus_exits_with_input_error() {
    let ws = Workspace::new(TINY);
    let missing = ws.s("nope.txt");
    let (cfg, valid, out) = (ws.s("run.cfg"), ws.s("valid.txt"), ws.s("m.ckpt"));
    let o = ranlab(&[
        "train", "--config", &cfg, "--corpus", &missing, "--valid", &valid, "--out", &out,
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains(&missing));
}

#[test]
fn tiny_run_writes_checkpoint_and_metrics() {
    let ws = Workspace::new(TINY);
    let o = ws.train("m.ckpt", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ws.path("m.ckpt").exists());
    let log = fs::read_to_string(ws.path("m.ckpt.metrics.tsv")).unwrap();
    let rows = ranlab::lm::metrics::parse_log(&log).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);
}

#[test]
fn same_seed_same_artifacts() {
    let ws = Workspace::new(TINY);
    assert_eq!(code(&ws.train("a.ckpt", &["--seed", "5"])), 0);
    assert_eq!(code(&ws.train("b.ckpt", &["--seed", "5"])), 0);
    assert_eq!(code(&ws.train("c.ckpt", &["--seed", "6"])), 0);
    let read = |n: &str| fs::read(ws.path(n)).unwrap();
    assert_eq!(read("a.ckpt.metrics.tsv"), read("b.ckpt.metrics.tsv"));
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_ne!(read("a.ckpt"), read("c.ckpt"));
}

#[test]
fn seed_flag_overrides_environment() {
    let ws = Workspace::new(TINY);
    let (cfg, corpus, valid) = (ws.s("run.cfg"), ws.s("train.txt"), ws.s("valid.txt"));
    let run = |name: &str, env: &str, flag: Option<&str>| {
        let out = ws.s(name);
        let mut args = vec![
            "train",
            "--config",
            &cfg,
            "--corpus",
            &corpus,
            "--valid",
            &valid,
            "--out",
            &out,
            "--stop-after",
            "1",
        ];
        if let Some(f) = flag {
            args.extend_from_slice(&["--seed", f]);
        }
        let o = Command::new(env!("CARGO_BIN_EXE_ranlab"))
            .args(&args)
            .env("RANLAB_SEED", env)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(ws.path(name)).unwrap()
    };
    let env9 = run("e.ckpt", "9", None);
    let flag9 = run("f.ckpt", "3", Some("9"));
    let env3 = run("g.ckpt", "3", None);
    assert_eq!(env9, flag9);
    assert_ne!(env9, env3);
}

#[test]
fn resume_continues_the_log() {
    let ws = Workspace::new(TINY);
    assert_eq!(code(&ws.train("full.ckpt", &[])), 0);
    assert_eq!(code(&ws.train("part.ckpt", &["--stop-after", "1"])), 0);
    let part = ws.s("part.ckpt");
    let o = ws.train("part.ckpt", &["--resume", &part]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |n: &str| fs::read(ws.path(n)).unwrap();
    assert_eq!(read("full.ckpt.metrics.tsv"), read("part.ckpt.metrics.tsv"));
    assert_eq!(read("full.ckpt"), read("part.ckpt"));
}

#[test]
fn divergent_run_exits_numeric_and_keeps_last_good() {
    let ws = Workspace::new(&format!("{TINY}lr_initial = 1e300\nclip_norm = none\n"));
    let o = ws.train("m.ckpt", &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
    assert!(load_checkpoint(&ws.path("m.ckpt")).is_ok());
}

#[test]
fn bad_config_exits_two() {
    let ws = Workspace::new("kind = mystery\n");
    assert_eq!(code(&ws.train("m.ckpt", &[])), 2);
    let ws = Workspace::new("hidden_dims = 8\nhidden_dims = 9\n");
    assert_eq!(code(&ws.train("m.ckpt", &[])), 2);
}

#[test]
fn eval_reports_and_checks_digest() {
    let ws = Workspace::new(TINY);
    assert_eq!(code(&ws.train("m.ckpt", &[])), 0);
    let (ckpt, valid) = (ws.s("m.ckpt"), ws.s("valid.txt"));
    let o = ranlab(&["eval", "--checkpoint", &ckpt, "--corpus", &valid]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let field = |k: &str| -> f64 {
        let v = line
            .split_whitespace()
            .find_map(|w| w.strip_prefix(&format!("{k}=")))
            .unwrap();
        v.parse().unwrap()
    };
    assert!((field("perplexity") - 2f64.powf(field("bpc"))).abs() < 1e-9 * field("perplexity"));
    let o = ranlab(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &valid,
        "--vocab-digest",
        "abc",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn corrupted_checkpoint_exits_three() {
    let ws = Workspace::new(TINY);
    assert_eq!(code(&ws.train("m.ckpt", &[])), 0);
    let mut bytes = fs::read(ws.path("m.ckpt")).unwrap();
    let at = bytes.len() - 8;
    bytes[at] ^= 0xff;
    fs::write(ws.path("m.ckpt"), bytes).unwrap();
    let (ckpt, valid) = (ws.s("m.ckpt"), ws.s("valid.txt"));
    let o = ranlab(&["eval", "--checkpoint", &ckpt, "--corpus", &valid]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn params_prints_exact_count() {
    let o = ranlab(&[
        "params", "--kind", "lstm", "--dh", "650", "--di", "650", "--layers", "2",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("6,765,200 (6.77M)\n"), "{out}");
    assert!(out.contains("count=6765200"));
    assert!(out.contains("matches"));
    let o = ranlab(&[
        "params",
        "--kind",
        "ran-general",
        "--dh",
        "1500",
        "--di",
        "1500",
        "--layers",
        "2",
    ]);
    assert!(stdout(&o).contains("count=22506000"));
    assert!(stdout(&o).contains("differs by -0.01M"));
    let o = ranlab(&[
        "params",
        "--kind",
        "ran-general",
        "--dh",
        "2048",
        "--di",
        "512",
        "--projection",
        "512",
    ]);
    assert!(stdout(&o).contains("count=6295552"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        code(&ranlab(&["params", "--kind", "bogus", "--dh", "4", "--di", "4"])),
        2
    );
    assert_eq!(
        code(&ranlab(&[
            "params",
            "--kind",
            "lstm",
            "--dh",
            "4",
            "--di",
            "4",
            "--frobnicate"
        ])),
        2
    );
    assert_eq!(code(&ranlab(&["wibble"])), 2);
    assert_eq!(
        code(&ranlab(&[
            "params",
            "--kind",
            "ran-simplified",
            "--dh",
            "4",
            "--di",
            "5"
        ])),
        2
    );
}

fn trained(ws: &Workspace) -> String {
    let o = ws.train("m.ckpt", &["--stop-after", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ws.s("m.ckpt")
}

#[test]
fn trace_edges_follow_input_length() {
    let ws = Workspace::new(TINY);
    let ckpt = trained(&ws);
    for (input, tokens) in [("ab", 2usize), ("the dog", 7)] {
        fs::write(ws.path("in.txt"), input).unwrap();
        let (inp, out) = (ws.s("in.txt"), ws.s("g.dot"));
        let o = ranlab(&[
            "trace",
            "--checkpoint",
            &ckpt,
            "--input",
            &inp,
            "--format",
            "dot",
            "--out",
            &out,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let dot = fs::read_to_string(ws.path("g.dot")).unwrap();
        assert!(dot.starts_with("digraph attribution {"));
        assert_eq!(dot.matches("->").count(), tokens - 1);
        assert_eq!(dot.matches("[label=\"").count() - dot.matches("->").count(), tokens);
    }
    fs::write(ws.path("in.txt"), "a").unwrap();
    let (inp, out) = (ws.s("in.txt"), ws.s("g.dot"));
    assert_eq!(
        code(&ranlab(&[
            "trace",
            "--checkpoint",
            &ckpt,
            "--input",
            &inp,
            "--out",
            &out
        ])),
        3
    );
}

#[test]
fn trace_rows_match_library_attribution() {
    let ws = Workspace::new(TINY);
    let ckpt = trained(&ws);
    let input = "the lazy fox naps";
    fs::write(ws.path("in.txt"), input).unwrap();
    let (inp, out) = (ws.s("in.txt"), ws.s("t.tsv"));
    let o = ranlab(&[
        "trace",
        "--checkpoint",
        &ckpt,
        "--input",
        &inp,
        "--format",
        "tsv",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = fs::read_to_string(ws.path("t.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("# ranlab-trace v1"));
    assert_eq!(
        lines.next(),
        Some("t\ttoken\tv_t\tpredecessor_token\tcomponent_index\tweight")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();

    let AnyCheckpoint::F64(c) = load_checkpoint(&ws.path("m.ckpt")).unwrap() else {
        panic!("default precision is f64");
    };
    let ids = c.vocab.encode(input).unwrap();
    let traces = c.model.trace(&ids).unwrap();
    let expected = attribute_sequence(traces.last().unwrap(), 0).unwrap();
    assert_eq!(rows.len(), expected.len());
    for (row, a) in rows.iter().zip(&expected) {
        assert_eq!(row[0].parse::<usize>().unwrap(), a.step);
        assert_eq!(row[2].parse::<usize>().unwrap(), a.predecessor);
        assert_eq!(row[4].parse::<usize>().unwrap(), a.component);
        assert_eq!(row[5].parse::<f64>().unwrap(), a.value);
    }
}

#[test]
fn selfcheck_quick_passes_and_fault_fails() {
    let o = ranlab(&["selfcheck", "--quick"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o)
        .lines()
        .all(|l| l.starts_with("PASS") || l.starts_with("all ")));
    let o = ranlab(&["selfcheck", "--quick", "--inject-fault", "forget-sign"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL")));
    assert_eq!(code(&ranlab(&["selfcheck", "--inject-fault", "nonsense"])), 2);
}
