//! Write a small synthetic corpus as train/valid/test text files, one
//! sentence per line, ready for the CLI quick start:
//!
//! ```text
//! cargo run -p fixpoint-lm --example gen_corpus -- demo-corpus 1200 42
//! ```
//!
//! Arguments (all optional): output directory, sentence count, seed.

use std::fs;
use std::path::Path;

use fixpoint_lm::synth::{self, SynthSpec};

fn write_lines(path: &Path, lines: &[String]) -> std::io::Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out_dir = args.first().map(String::as_str).unwrap_or("demo-corpus");
    let sentences: usize = args
        .get(1)
        .map(|s| s.parse().expect("sentence count must be a number"))
        .unwrap_or(1200);
    let seed: u64 = args
        .get(2)
        .map(|s| s.parse().expect("seed must be a number"))
        .unwrap_or(42);

    let spec = SynthSpec {
        sentences,
        seed,
        ..SynthSpec::default()
    };
    let lines = synth::generate(&spec).expect("valid generator settings");
    let (train, valid, test) =
        synth::split(lines, 0.08, 0.08, seed.wrapping_add(1)).expect("splittable corpus");

    let dir = Path::new(out_dir);
    fs::create_dir_all(dir).expect("create output directory");
    write_lines(&dir.join("train.txt"), &train).expect("write train split");
    write_lines(&dir.join("valid.txt"), &valid).expect("write validation split");
    write_lines(&dir.join("test.txt"), &test).expect("write test split");

    let words: usize = train.iter().map(|l| l.split_whitespace().count()).sum();
    println!(
        "wrote {} ({} train / {} valid / {} test sentences, {} training words)",
        dir.display(),
        train.len(),
        valid.len(),
        test.len(),
        words
    );
}
