#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sentivote::pipeline::RunConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn write_csv(path: &Path, rows: &[(String, &str)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["review", "sentiment"]).unwrap();
    for (text, label) in rows {
        w.write_record([text.as_str(), label]).unwrap();
    }
    w.flush().unwrap();
}

/// Config over `corpus` writing into `out`, small enough for tests.
pub fn config(corpus: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus.path = Some(corpus.to_path_buf());
    cfg.output.dir = out.to_path_buf();
    cfg.train.lr_iterations = 200;
    cfg.train.svm_iterations = 200;
    cfg
}

const POSITIVE: [&str; 6] = ["good", "great", "fine", "lovely", "superb", "brilliant"];
const NEGATIVE: [&str; 6] = ["bad", "awful", "poor", "dreadful", "horrible", "terrible"];
const FILLERS: [&str; 5] = ["really", "truly", "very", "quite", "honestly"];
const NOUNS: [&str; 4] = ["film", "movie", "show", "story"];

/// Reviews whose label is the adjective's polarity, flipped when the
/// adjective is negated. Two filler words always separate `not` from the
/// adjective, so no trigram spans both and without negation marking the
/// label is an exclusive-or of unigram features.
pub fn negation_rows() -> Vec<(String, &'static str)> {
    let mut rows = Vec::new();
    let mut k = 0usize;
    for negated in [false, true] {
        for (polarity, adjectives) in [(true, POSITIVE), (false, NEGATIVE)] {
            for adj in adjectives {
                for noun in NOUNS {
                    for rep in 0..2 {
                        let f1 = FILLERS[(k + rep) % FILLERS.len()];
                        let f2 = FILLERS[(k + rep + 2) % FILLERS.len()];
                        k += 1;
                        let cue = if negated { "not " } else { "" };
                        let text = format!("The {noun} was {cue}{f1} {f2} {adj}.");
                        let positive = polarity != negated;
                        rows.push((text, if positive { "positive" } else { "negative" }));
                    }
                }
            }
        }
    }
    rows
}
