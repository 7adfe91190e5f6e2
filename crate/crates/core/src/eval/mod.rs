//! Evaluation metrics: DTW alignment of frame features, voiced-frame
//! prosody correlations, phoneme-duration correlation and the
//! stressed/unstressed vowel duration ratio.

mod dtw;
mod metrics;

pub use dtw::{dtw_align, AlignmentPath, Distance};
pub use metrics::{
    duration_correlation, duration_pairs, pearson, prosody_correlation, voiced_pairs,
    vowel_duration_ratio, PairedSamples, ProsodyCorrelation, VoicedPairs, VowelDurationRatio,
};
