use wsrglow::audio::read_wav;
use wsrglow::checkpoint::load_checkpoint;
use wsrglow::dsp::{self, SnrConvention};
use wsrglow::flow::SampleConfig;

fn main() {
    let hr = read_wav(std::path::Path::new("/tmp/ov3/data/hr/clip.wav")).unwrap().waveform;
    let lr = read_wav(std::path::Path::new("/tmp/ov3/data/lr/clip.wav")).unwrap().waveform;
    for run in std::env::args().skip(1) {
        let ckpt = load_checkpoint(std::path::Path::new(&run)).unwrap();
        let synth = ckpt.model.synthesize(&lr, &SampleConfig { temperature: 0.0, seed: 5 }).unwrap();
        // Low-band comparison: both through the same 24k round trip.
        let low = |w: &wsrglow::audio::Waveform| {
            let mut d = dsp::resample(w, 24000).unwrap();
            d.clamp_unit();
            dsp::resample(&d, 48000).unwrap()
        };
        let s_low = low(&synth);
        let h_low = low(&hr);
        let snr_low = dsp::snr(&h_low, &s_low, SnrConvention::Classic).unwrap();
        // Energy profile of synthesis vs truth
        let rms = |s: &[f32]| (s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        println!("{run}: lowband SNR {snr_low:.2} dB | rms synth {:.4} vs clip {:.4}", rms(&synth.samples), rms(&hr.samples));
    }
}
