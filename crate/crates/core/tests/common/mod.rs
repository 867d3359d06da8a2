#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use btdpo_core::clients::mock::*;
use btdpo_core::clients::{EndpointConfig, RecordingSleeper, Translator};
use btdpo_core::pipeline::{PipelineConfig, Services};

pub const TEMPLATE: &str = "Translate into English: {text}";

const ADJECTIVES: [&str; 5] = ["quiet", "old", "bright", "small", "busy"];
const NOUNS: [&str; 4] = ["harbour", "garden", "station", "market"];

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: PathBuf,
    pub sources: Vec<String>,
    pub translations: Vec<String>,
}

/// `n` distinct sentences written as a corpus file, with a fixed expert
/// translation for each.
pub fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut sources = Vec::new();
    let mut translations = Vec::new();
    for i in 0..n {
        let adj = ADJECTIVES[i % ADJECTIVES.len()];
        let noun = NOUNS[i % NOUNS.len()];
        sources.push(format!("The {adj} {noun} number {i} opens early today."));
        translations.push(format!("Der {adj} {noun} Nummer {i} öffnet heute früh."));
    }
    let mut text = String::new();
    for (i, s) in sources.iter().enumerate() {
        text.push_str(s);
        text.push(if i % 5 == 4 { '\n' } else { ' ' });
    }
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, text).unwrap();
    Fixture {
        dir,
        corpus,
        sources,
        translations,
    }
}

impl Fixture {
    pub fn expert(&self) -> MockTranslator {
        MockTranslator::from_table("expert", self.sources.iter().zip(&self.translations))
    }

    /// A student that back-translates perfectly except for sentence indices
    /// selected by `corrupt`, where it drops the last word.
    pub fn student(&self, name: &str, corrupt: impl Fn(usize) -> bool) -> MockTranslator {
        let corrupted: Vec<&String> = self
            .translations
            .iter()
            .enumerate()
            .filter(|(i, _)| corrupt(*i))
            .map(|(_, t)| t)
            .collect();
        MockTranslator::from_table(name, self.translations.iter().zip(&self.sources))
            .with_corrupt(corrupted)
    }

    pub fn config(&self, knee_override: Option<f64>, min_dataset_size: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(
            Some(self.corpus.clone()),
            EndpointConfig::new("http://student.invalid"),
            EndpointConfig::new("http://scorer.invalid"),
            TEMPLATE,
            self.dir.path().join("out"),
        );
        cfg.translator = Some(EndpointConfig::new("http://expert.invalid"));
        cfg.filter.knee_override = knee_override;
        cfg.filter.min_dataset_size = min_dataset_size;
        cfg.poll_interval_ms = 0;
        cfg
    }
}

/// Scores 0.9 when the back-translation reproduces the source, 0.3 otherwise.
pub fn separating_scorer() -> MockScorer {
    MockScorer::new(ScoreRule::ExactMatch {
        matched: 0.9,
        mismatched: 0.3,
    })
}

pub fn services(
    expert: Arc<MockTranslator>,
    student: Arc<MockTranslator>,
    scorer: Arc<MockScorer>,
    trainer: Option<Arc<MockTrainer>>,
    later_students: Vec<(String, Arc<MockTranslator>)>,
) -> Services {
    let mut students: BTreeMap<String, Arc<dyn Translator>> = BTreeMap::new();
    for (ep, s) in later_students {
        students.insert(ep, s);
    }
    Services {
        translator: Some(expert),
        student,
        scorer,
        trainer: trainer.map(|t| t as _),
        connector: Arc::new(MockStudentConnector { students }),
        sleeper: Arc::new(RecordingSleeper::default()),
    }
}
