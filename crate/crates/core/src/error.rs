use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("autodiff state error: {0}")]
    State(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("numeric error at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("population error: retry limit exhausted for seeds {seeds:?}")]
    Population { seeds: Vec<u64> },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("model leakage: {0}")]
    Leakage(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("stage `{stage}` failed (seed {seed}): {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str, seed: u64) -> Self {
        Error::Stage { stage: stage.to_string(), seed, source: Box::new(self) }
    }
}
