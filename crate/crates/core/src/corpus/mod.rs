//! Pre-annotated examples, word embeddings and per-token input features.

mod dataset;
mod embeddings;
mod features;

pub use dataset::{
    join_surfaces, load_dataset, normalize_whitespace, read_dataset, write_dataset, AnnotatedToken, AnswerSpan,
    Example, LoadedDataset, Rejection,
};
pub use embeddings::{load_embeddings, load_embeddings_filtered, EmbeddingTable};
pub use features::{
    build_tag_inventories, feature_width, featurize, FeatureSpace, FeatureVector, QuestionIndex, TagInventories,
    TagInventory,
};
