pub mod acoustics;
pub mod dataset;
pub mod head;
pub mod room;
pub mod source;

pub use acoustics::{drr, schroeder_t60};
pub use dataset::{make_dataset, DatasetManifest, ResolvedManifest, SceneSpec, Split, SplitCounts};
pub use head::{synth_anechoic_brir, woodworth_itd, Brir};
pub use room::{image_source_rir, RoomSpec};
pub use source::{energy_gate, spatialize, speech_shaped_noise, white_noise_burst};
