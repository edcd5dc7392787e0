//! Audio to log-mel analysis and back.
//!
//! Framing follows the training setup: 16 kHz audio, 1.6 s segments, an
//! 800-sample Hann window with a 200-sample hop, and 80 HTK mel bands over
//! 0-8000 Hz. Frames are centred on multiples of the hop over a
//! reflect-padded signal, so a 25 600-sample segment yields exactly 128 frames.

mod archive;
mod audio;
mod griffin_lim;
mod mel;
mod pitch;
mod stft;

pub use archive::{decode_mel, encode_mel, read_mel, write_mel};
pub use audio::{load_wav, segment, write_wav, AudioClip, SAMPLE_RATE, SEGMENT_SAMPLES};
pub use griffin_lim::{griffin_lim, mel_to_linear, DEFAULT_ITERATIONS};
pub use mel::{
    hz_to_mel, mean_frame, mel_distance, mel_to_hz, to_mel, MelFilterbank, MelFrontend, MelSpectrogram,
    MEL_FLOOR, N_MELS,
};
pub use pitch::{mean_pitch, pitch_track};
pub use stft::{hann, stft, FrameParams, Spectrogram, Stft, FFT_SIZE, HOP, WINDOW};
