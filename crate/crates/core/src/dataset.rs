//! Train/dev/test splits, vocabulary and word vectors for one run.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::RunConfig;
use crate::ingest::{
    load_embeddings, parse_corpus, split_train_dev, AspectInstance, CorpusFormat, DropReport, EmbeddingMatrix, IngestError,
    TextInstance, Vocabulary,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("config has no `{0}`")]
    MissingPath(&'static str),
    #[error("{0} split is empty")]
    Empty(&'static str),
}

/// Encoded splits sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub train: Vec<AspectInstance>,
    pub dev: Vec<AspectInstance>,
    pub test: Vec<AspectInstance>,
    /// Longest sentence across all splits.
    pub max_len: usize,
    pub reports: Vec<(String, DropReport)>,
}

impl Dataset {
    /// Parse the corpora named in `cfg`. Without a dev file a sixth of the
    /// training file is held out.
    pub fn load(cfg: &RunConfig) -> Result<Self, DataError> {
        let train_path = cfg.train_path.as_deref().ok_or(DataError::MissingPath("train_path"))?;
        let mut reports = Vec::new();
        let mut read = |path: &str| -> Result<Vec<TextInstance>, DataError> {
            let p = Path::new(path);
            let corpus = parse_corpus(p, CorpusFormat::from_path(p))?;
            reports.push((path.to_string(), corpus.report));
            Ok(corpus.instances)
        };
        let train = read(train_path)?;
        let dev = cfg.dev_path.as_deref().map(&mut read).transpose()?;
        let test = cfg.test_path.as_deref().map(&mut read).transpose()?.unwrap_or_default();
        let mut data = Self::from_text(train, dev, test, cfg, cfg.embeddings_path.as_deref().map(Path::new))?;
        data.reports = reports;
        Ok(data)
    }

    pub fn from_text(
        train: Vec<TextInstance>,
        dev: Option<Vec<TextInstance>>,
        test: Vec<TextInstance>,
        cfg: &RunConfig,
        embeddings_path: Option<&Path>,
    ) -> Result<Self, DataError> {
        let (train, dev) = match dev {
            Some(dev) => (train, dev),
            None => split_train_dev(train, cfg.seed),
        };
        if train.is_empty() {
            return Err(DataError::Empty("train"));
        }
        if dev.is_empty() {
            return Err(DataError::Empty("dev"));
        }
        let vocab = Vocabulary::build([train.as_slice(), dev.as_slice(), test.as_slice()]);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e3be_dd10_0000);
        let embeddings = match embeddings_path {
            Some(p) => {
                let m = load_embeddings(p, &vocab, cfg.word_dim, &mut rng)?;
                log::info!("pretrained coverage {:.4}", m.coverage());
                m
            }
            None => EmbeddingMatrix::random(&vocab, cfg.word_dim, &mut rng),
        };
        let max_len = train.iter().chain(&dev).chain(&test).map(|i| i.words.len()).max().unwrap_or(1);
        Ok(Self {
            train: vocab.encode_all(&train),
            dev: vocab.encode_all(&dev),
            test: vocab.encode_all(&test),
            vocab,
            embeddings,
            max_len,
            reports: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate;

    #[test]
    fn holds_out_a_sixth() {
        let text: Vec<TextInstance> = generate(60, 2).into_iter().map(|s| s.instance).collect();
        let cfg = RunConfig {
            word_dim: 8,
            ..RunConfig::default()
        };
        let d = Dataset::from_text(text, None, Vec::new(), &cfg, None).unwrap();
        assert_eq!((d.train.len(), d.dev.len()), (50, 10));
        assert_eq!(d.embeddings.vectors.shape(), [d.vocab.len(), 8]);
        assert!(d.max_len >= d.train.iter().map(|i| i.len()).max().unwrap());
    }

    #[test]
    fn missing_train_path_is_reported() {
        let err = Dataset::load(&RunConfig::default()).unwrap_err();
        assert!(err.to_string().contains("train_path"));
    }
}
