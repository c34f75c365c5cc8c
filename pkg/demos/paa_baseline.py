"""
The PAA + merge baseline
========================

No learning here: accelerometer magnitude, block means over 3 samples,
peaks above the mean, and merging of peaks closer than 0.25 s.
"""

from stepnet.baseline import PaaConfig, baseline_count
from stepnet.ingest import SynthConfig, synthesize
from stepnet.signal import resample

for cadence in (100, 110, 120, 130):
    rec = resample(synthesize(SynthConfig(cadence_spm=cadence, duration_s=60, noise_sd=0.0)))
    print(f"{cadence} spm: truth {len(rec.events):4d}  baseline {baseline_count(rec):4d}")

# noise pushes spurious peaks over the threshold and merging absorbs most of them
for noise in (0.05, 0.1, 0.2):
    rec = resample(synthesize(SynthConfig(cadence_spm=120, duration_s=60, noise_sd=noise, seed=1)))
    print(f"noise {noise}: {baseline_count(rec)} (truth {len(rec.events)})")

# a wider merge window starts eating real steps once it nears the step period (0.5 s at 120 spm)
rec = resample(synthesize(SynthConfig(cadence_spm=120, duration_s=60, noise_sd=0.0)))
for w in (0.1, 0.25, 0.45, 0.6):
    print(f"merge {w:.2f} s -> {baseline_count(rec, PaaConfig(merge_window_s=w))}")
