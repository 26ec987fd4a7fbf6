//! Waveforms, corpora, resampling, the telephone channel and the synthetic
//! three-domain speech corpus.

mod corpus;
mod filters;
mod synth;
mod waveform;
mod wav;

pub use corpus::{
    build_corpus, build_three_domain_corpus, speaker_seed, CorpusConfig, DomainCorpus, DomainTag,
    ThreeDomainCorpus, Utterance,
};
pub use filters::{
    design_bandpass, design_lowpass, filter_same, kaiser_window, lowpass_downsample, telephone_channel,
    to_model_rate, upsample, TelephoneChannel,
};
pub use synth::{synth_wide_mic, Formant, SyntheticSpeakerSpec};
pub use waveform::{Waveform, MODEL_RATE, NARROWBAND_RATE};
pub use wav::{
    decode_wav, encode_wav, read_corpora, read_three_domain_corpus, read_wav, write_corpora, write_wav,
    CorpusManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION,
};
