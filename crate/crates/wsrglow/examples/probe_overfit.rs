use wsrglow::audio::read_wav;
use wsrglow::checkpoint::load_checkpoint;
use wsrglow::dsp::{self, SnrConvention};
use wsrglow::flow::SampleConfig;

fn main() {
    let hr = read_wav(std::path::Path::new("/tmp/ov3/data/hr/clip.wav")).unwrap().waveform;
    let lr = read_wav(std::path::Path::new("/tmp/ov3/data/lr/clip.wav")).unwrap().waveform;
    let baseline = dsp::resample(&lr, 48000).unwrap();
    let snr_base = dsp::snr(&hr, &baseline, SnrConvention::Paper).unwrap();
    let lsd_base = dsp::lsd(&dsp::pad_for_lsd(&hr), &dsp::pad_for_lsd(&baseline)).unwrap();
    println!("baseline: SNR {snr_base:.2} dB LSD {lsd_base:.3}");
    for run in std::env::args().skip(1) {
        let ckpt = load_checkpoint(std::path::Path::new(&run)).unwrap();
        for (temp, seed) in [(0.0, 99u64), (0.5, 99), (0.5, 7)] {
            let synth = ckpt.model.synthesize(&lr, &SampleConfig { temperature: temp, seed }).unwrap();
            let snr = dsp::snr(&hr, &synth, SnrConvention::Paper).unwrap();
            let lsd = dsp::lsd(&dsp::pad_for_lsd(&hr), &dsp::pad_for_lsd(&synth)).unwrap();
            println!("{run} T={temp} seed={seed}: SNR {snr:.2} dB LSD {lsd:.3}");
        }
    }
}
