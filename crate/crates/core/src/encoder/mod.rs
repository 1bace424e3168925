//! Hallucination detector: a small post-norm transformer encoder over
//! terminal tokens with a linear head, plus the interchange format for hidden
//! states produced by external models.

mod head;
mod hidden;
mod layers;
mod model;
mod train;

pub use head::{
    classify, classify_with_threshold, mean_pool, ClassifierHead, DetectionResult, Detector, EncoderClassifier,
    DEFAULT_THRESHOLD,
};
pub use hidden::{
    hidden_from_bytes, hidden_to_bytes, pool_by_spans, read_hidden, read_hidden_aligned, sidecar_path, write_hidden,
    HiddenMatrix, HIDDEN_MAGIC,
};
pub use layers::{attention_weights, ffn, layer_norm, multi_head, scaled_attention, FeedForward, MultiHeadAttention};
pub use model::{
    encode, terminal_texts, EncoderParams, EncoderShape, LayerParams, Vocab, CLS, MAX_LEN, MAX_TERMINALS, PAD, SEP, UNK,
};
pub use train::{fit_encoder, train_detector, train_head, DetectorConfig, Encoded, EpochRecord, Trained};

/// Model identifier recorded for hidden states from the built-in encoder.
pub const BUILTIN_MODEL: &str = "builtin-encoder";
