//! Front and back end of the enhancement pipeline: audio clips, STFT/ISTFT,
//! power-law compression and feature stacking, WAV I/O.

mod audio;
mod features;
mod stft;
mod wav;

pub use audio::{AudioClip, DEFAULT_SAMPLE_RATE};
pub use features::{power_compress, power_decompress, stack_features, FeatureMap, COMPRESSION};
pub use stft::{principal_phase, Spectrogram, StftConfig, StftPlan, WindowKind};
pub use wav::{read_wav, write_wav};
