//! Audio feature ingestion, alignment and the temporal recurrent stream.

mod features;
pub mod mfcc;
pub mod recurrent;

pub use features::{
    decode_stfx, encode_stfx, load_features, resample_rows, save_features, FeatureSequence,
    STFX_VERSION,
};
pub use mfcc::{mfcc_extract, read_wav, write_wav, MfccConfig};
pub use recurrent::{AudioStream, BiLayer, CellKind, RecurrentCell};
