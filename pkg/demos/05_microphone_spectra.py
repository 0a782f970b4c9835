"""
Average spectra per microphone
==============================

Mean STFT magnitude of every microphone of a 44.1 kHz array, genuine
recordings on top and replays below.  Each synthetic microphone has its
own resonances, and the replay chain adds a loudspeaker band limit.
"""

from pathlib import Path

import numpy as np

from replayarray.dataset import load_manifest
from replayarray.dsp import device_spectra, plot_spectra, stft_params_for, write_spectra_csv
from replayarray.synth import default_spec, generate_corpus

out = Path("demo_output/spectra")
generate_corpus(default_spec(("D2",), seed=2, n_genuine=20, n_replay=20), seed=0, out_dir=out / "corpus")
data = load_manifest(out / "corpus" / "manifest.csv")

params = stft_params_for(44100)
freqs = params.frequencies()
spectra = device_spectra(data, "D2", params)

# Energy above 8 kHz relative to the 200 Hz - 4 kHz band, in dB.
hi, mid = freqs > 8000, (freqs > 200) & (freqs < 4000)
for (mic, label), s in spectra.items():
    ratio = 10 * np.log10(np.mean(s[hi] ** 2) / np.mean(s[mid] ** 2))
    print("mic %2d %-7s high/mid %6.1f dB" % (mic, label, ratio))

print("wrote", write_spectra_csv(out / "spectra_D2.csv", freqs, spectra))
print("wrote", plot_spectra(out / "spectra_D2.png", freqs, spectra))
