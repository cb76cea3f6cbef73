//! Signal-processing primitives: mu-law companding, STFT, rational
//! resampling, evaluation metrics and spectrogram rendering.

pub mod fft;
pub mod metrics;
pub mod mulaw;
pub mod resample;
pub mod spectrogram;

pub use fft::{fft_in_place, stft, ComplexSpectrum};
pub use metrics::{lsd, pad_for_lsd, snr, SnrConvention, LSD_FRAME};
pub use mulaw::{codes_for, dequantize_256, mulaw_decode, mulaw_encode, quantize_256, sample_to_code};
pub use resample::{kaiser_lowpass, resample};
pub use spectrogram::{spectrogram_image, write_pgm, GrayImage};
